#pragma once

// Synthetic, seeded stand-ins for the corpora and evaluation sets: a small
// child-directed grammar, dialogues, encyclopedia-style articles, minimal
// pairs, reading times and a classification task.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "babyit/corpus.hpp"
#include "babyit/eval.hpp"

namespace babyit::fixtures {

// Documents of 3 to 10 grammar sentences, about target_words words in total.
std::vector<std::string> child_directed_corpus(std::size_t target_words, std::uint64_t seed);

// One grammar sentence, lower case, ending in " ." / " ?" / " !".
std::string sentence(Rng& rng);

// Text over distinct_words invented words drawn with Zipfian frequencies;
// every invented word occurs at least once.
std::vector<std::string> pseudo_word_corpus(std::size_t distinct_words, std::size_t total_words, std::uint64_t seed);

// Two-speaker transcripts; some turns repeat the previous speaker and some
// are short backchannels.
std::vector<corpus::Dialogue> dialogues(std::size_t count, std::uint64_t seed);

// Short expository articles about lexicon nouns, source simplewiki.
std::vector<corpus::Document> wiki_articles(std::size_t count, std::uint64_t seed);

// Forced-choice items for tasks agreement, determiner, wug and
// entity_tracking, count per task.
std::vector<eval::EvalItem> eval_items(std::size_t per_task, std::uint64_t seed);

// Two-candidate items with random texts, used against stub scorers.
std::vector<eval::EvalItem> random_pair_items(std::size_t count, std::uint64_t seed);

// Reading times built from word length, frequency and noise.
std::vector<eval::ReadingTimeRow> reading_times(std::size_t words, std::uint64_t seed);

// Sentences labelled 1 when they contain the marker word "please".
std::vector<eval::LabeledText> marker_classification(std::size_t count, std::uint64_t seed);

struct FixtureSizes {
    std::size_t pretrain_words = 100000;
    std::size_t dialogues = 60;
    std::size_t articles = 167;
    std::size_t eval_items_per_task = 40;
    std::size_t reading_time_words = 300;
    std::size_t classification_train = 400;
    std::size_t classification_test = 200;
};

struct FixturePaths {
    std::vector<std::filesystem::path> pretrain_text;  // one file per source
    std::vector<std::string> pretrain_sources;
    std::filesystem::path dialogues;
    std::filesystem::path articles;
    std::filesystem::path eval_items;
    std::filesystem::path reading_times;
    std::filesystem::path classification_train;
    std::filesystem::path classification_test;
};

// Writes the raw inputs for a full pipeline run under dir.
FixturePaths write_fixture_tree(const std::filesystem::path& dir, const FixtureSizes& sizes, std::uint64_t seed);

}  // namespace babyit::fixtures

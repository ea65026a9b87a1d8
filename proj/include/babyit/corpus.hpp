#pragma once

// Corpus construction: cleaning, dialogue normalization, prompt-reply
// extraction, word budgets and train/validation splits.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "babyit/common.hpp"

namespace babyit::corpus {

enum class Source { childes, gutenberg, bnc, opensubtitles, switchboard, simplewiki, other };

std::string_view to_string(Source source);
Source parse_source(std::string_view name);

struct Document {
    std::string id;
    Source source = Source::other;
    std::string text;
    std::size_t word_count = 0;
};

enum class Speaker { A, B };

struct DialogueTurn {
    Speaker speaker = Speaker::A;
    std::string text;
    std::size_t index = 0;
};

struct PromptReplyPair {
    std::string prompt;
    std::string reply;
    std::string dialogue_id;
    std::size_t window_index = 0;

    bool operator==(const PromptReplyPair&) const = default;
};

// Characters removed during cleaning. Non-whitespace control characters are
// always stripped when strip_controls is set.
struct StripSet {
    std::set<char32_t> chars;
    bool strip_controls = true;

    bool contains(char32_t cp) const;

    static StripSet none() { return StripSet{{}, false}; }
    static StripSet defaults();
    static StripSet from_utf8(std::string_view chars, bool strip_controls = true);
};

inline constexpr std::size_t kDefaultMinWords = 2;

std::size_t count_words(std::string_view text);

// Strips characters and collapses whitespace. Returns nothing when the
// surviving word count is <= min_words.
std::optional<Document> clean_document(std::string_view raw, const StripSet& strip, std::size_t min_words = kDefaultMinWords);

// Collapses maximal runs of same-speaker turns; indices are renumbered from 0.
std::vector<DialogueTurn> merge_speaker_turns(const std::vector<DialogueTurn>& turns);

// Sliding window over an alternating dialogue: (t0,t1), (t1,t2), ...
// Throws if the turns do not alternate.
std::vector<PromptReplyPair> extract_prompt_reply_pairs(const std::vector<DialogueTurn>& turns,
                                                        std::string_view dialogue_id = {});

enum class BudgetDecision { accept, reject };
enum class BudgetKind { pretrain, instruction_only };

// Running word totals against a global cap. Decisions are serialized so
// concurrent pipeline stages can share one ledger.
class WordBudgetLedger {
public:
    explicit WordBudgetLedger(std::uint64_t cap, bool enforce = true);

    // Records words without a cap check (e.g. to resume from a previous stage).
    void preload(Source source, std::uint64_t words, BudgetKind kind = BudgetKind::pretrain);

    BudgetDecision enforce_budget(const Document& incoming, BudgetKind kind = BudgetKind::pretrain);

    std::uint64_t cap() const { return cap_; }
    std::uint64_t pretrain_total() const;
    std::uint64_t instruction_total() const;
    std::uint64_t total() const;
    std::map<Source, std::uint64_t> per_source() const;

    // CSV with header "source,words" followed by pretrain/instruction totals.
    std::string to_csv() const;

private:
    std::uint64_t cap_;
    bool enforce_;
    mutable std::mutex mutex_;
    std::map<Source, std::uint64_t> per_source_;
    std::uint64_t pretrain_total_ = 0;
    std::uint64_t instruction_total_ = 0;
};

template <class T>
struct SplitCorpus {
    std::vector<T> train;
    std::vector<T> validation;
    double split_fraction = 0.9;
    std::uint64_t seed = 0;
};

// Number of training items for a split of n items: floor(fraction * n),
// clamped so both sides are nonempty.
std::size_t train_count(std::size_t n, double fraction);

template <class T>
SplitCorpus<T> split_train_val(const std::vector<T>& items, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw Error("split_train_val: fraction must lie in (0, 1)");
    }
    if (items.size() < 2) {
        throw Error("split_train_val: need at least 2 items to form both sides");
    }
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(seed);
    rng.shuffle(order);
    const std::size_t n_train = train_count(items.size(), fraction);
    SplitCorpus<T> out;
    out.split_fraction = fraction;
    out.seed = seed;
    out.train.reserve(n_train);
    out.validation.reserve(items.size() - n_train);
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? out.train : out.validation).push_back(items[order[i]]);
    }
    return out;
}

// Splits whole groups (e.g. dialogues) rather than items; the group order is
// shuffled under seed and the first floor(fraction * groups) go to train.
template <class T>
SplitCorpus<T> split_train_val_grouped(const std::vector<T>& items, const std::function<std::string(const T&)>& group_of,
                                       double fraction, std::uint64_t seed) {
    std::vector<std::string> groups;
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto key = group_of(items[i]);
        auto [it, inserted] = members.try_emplace(key);
        if (inserted) {
            groups.push_back(key);
        }
        it->second.push_back(i);
    }
    auto group_split = split_train_val(groups, fraction, seed);
    SplitCorpus<T> out;
    out.split_fraction = fraction;
    out.seed = seed;
    for (const auto& g : group_split.train) {
        for (auto i : members[g]) {
            out.train.push_back(items[i]);
        }
    }
    for (const auto& g : group_split.validation) {
        for (auto i : members[g]) {
            out.validation.push_back(items[i]);
        }
    }
    return out;
}

// corpus_words * epochs.
std::uint64_t accounting_report(std::uint64_t corpus_words, std::uint64_t epochs);

// Words that reach parameter updates when only the training share counts.
double effective_words(std::uint64_t words_processed, double train_share);

// Word counts for a set of prompt-reply pairs under several conventions.
struct PairWordCounts {
    std::size_t items = 0;
    std::size_t unique_items = 0;
    std::uint64_t words = 0;               // prompt + reply, all items
    std::uint64_t words_deduplicated = 0;  // prompt + reply, exact duplicates removed
    std::uint64_t reply_words = 0;         // reply side only, all items
};

PairWordCounts count_pair_words(const std::vector<PromptReplyPair>& pairs);

// Keeps the first occurrence of each exact (prompt, reply) pair.
std::vector<PromptReplyPair> deduplicate_pairs(const std::vector<PromptReplyPair>& pairs);

// Sorts documents by (source, id).
void canonicalize(std::vector<Document>& docs);

// --- I/O ---

// Plain text: one document per blank-line separated block.
std::vector<std::string> read_text_blocks(const std::filesystem::path& path);

struct Dialogue {
    std::string id;
    std::vector<DialogueTurn> turns;
};

// JSONL records {"dialogue_id","speaker","text"}; dialogues are returned in
// order of first appearance, turns in file order.
std::vector<Dialogue> read_dialogues(const std::filesystem::path& path);

Json to_json(const Document& doc);
Document document_from_json(const Json& j);
Json to_json(const PromptReplyPair& pair);
PromptReplyPair pair_from_json(const Json& j);

}  // namespace babyit::corpus

#pragma once

// Zero-shot evaluation: forced-choice scoring of minimal-pair items, word
// surprisal, reading-time regression and classification fine-tuning.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "babyit/model.hpp"
#include "babyit/tokenizer.hpp"
#include "babyit/train.hpp"

namespace babyit::eval {

// Anything that assigns log-probabilities to token sequences.
class TokenScorer {
public:
    virtual ~TokenScorer() = default;

    // log p(ids[t] | ids[<t]) for t >= 1; element 0 is 0.
    virtual std::vector<double> token_logprobs(std::span<const TokenId> ids) const = 0;

    // Longest sequence the scorer accepts.
    virtual std::size_t max_length() const = 0;
};

class ModelScorer : public TokenScorer {
public:
    explicit ModelScorer(const Model& model) : model_(model) {}
    std::vector<double> token_logprobs(std::span<const TokenId> ids) const override;
    std::size_t max_length() const override { return static_cast<std::size_t>(model_.config.max_length); }

private:
    const Model& model_;
};

// Every token has probability 1/V.
class UniformScorer : public TokenScorer {
public:
    explicit UniformScorer(std::size_t vocab_size, std::size_t max_length = 4096) : vocab_(vocab_size), max_length_(max_length) {}
    std::vector<double> token_logprobs(std::span<const TokenId> ids) const override;
    std::size_t max_length() const override { return max_length_; }

private:
    std::size_t vocab_;
    std::size_t max_length_;
};

// Pseudo-random log-probabilities in (-10, 0], a deterministic function of
// the seed and the token prefix.
class HashScorer : public TokenScorer {
public:
    explicit HashScorer(std::uint64_t seed, std::size_t max_length = 4096) : seed_(seed), max_length_(max_length) {}
    std::vector<double> token_logprobs(std::span<const TokenId> ids) const override;
    std::size_t max_length() const override { return max_length_; }

private:
    std::uint64_t seed_;
    std::size_t max_length_;
};

struct EvalItem {
    std::string id;
    std::string task;
    std::optional<std::string> context;
    std::vector<std::string> candidates;
    std::size_t correct_index = 0;
};

// Throws Error unless there are >= 2 nonempty, pairwise distinct candidates
// and correct_index is in range.
void validate_item(const EvalItem& item);

enum class Normalization { none, per_token };

std::string_view to_string(Normalization n);
Normalization parse_normalization(std::string_view name);

struct ChoiceResult {
    std::size_t chosen = 0;
    std::vector<double> logprobs;  // summed over candidate tokens
    std::vector<double> scores;    // what the argmax ran over
    std::vector<std::size_t> token_counts;
    bool tie = false;
};

// Thrown when an item does not fit the scorer's max_length.
class TokenizationOverflow : public Error {
public:
    using Error::Error;
};

// Scores <bos> context candidate for every candidate, summing log-probs over
// the candidate tokens only. A nonempty context is joined to the candidate by
// one space. Exact ties go to the lowest index and set tie.
ChoiceResult score_forced_choice(const TokenScorer& scorer, const Tokenizer& tokenizer, const EvalItem& item,
                                 Normalization normalization = Normalization::none);

enum class Metric { accuracy, delta_r2 };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

struct TaskResult {
    std::string task;
    std::string model_id;
    Metric metric = Metric::accuracy;
    double value = 0.0;
    std::size_t n_items = 0;
    std::size_t n_ties = 0;

    bool operator==(const TaskResult&) const = default;
};

struct ItemOutcome {
    std::size_t item = 0;  // index into the input list
    bool skipped = false;
    bool correct = false;
    bool tie = false;
    std::size_t chosen = 0;
    std::string diagnostic;
};

struct SuiteOptions {
    Normalization normalization = Normalization::none;
    std::size_t threads = 1;
};

// One outcome per input item, in input order. Items may be scored on
// several threads; outcomes do not depend on the thread count.
std::vector<ItemOutcome> score_items(const TokenScorer& scorer, const Tokenizer& tokenizer, const std::vector<EvalItem>& items,
                                     const SuiteOptions& options = {});

// Accuracy per task, sorted by task name. Tasks whose items were all
// skipped are omitted and reported through warnings.
std::vector<TaskResult> evaluate_suite(const TokenScorer& scorer, const Tokenizer& tokenizer, const std::vector<EvalItem>& items,
                                       const std::string& model_id, const SuiteOptions& options = {},
                                       std::vector<std::string>* warnings = nullptr);

// Per-word surprisal in nats over the text formed by joining words with
// single spaces. Words containing whitespace, empty words or tokens that
// straddle a word boundary raise Error naming the word index. Texts longer
// than the scorer's max_length are scored in consecutive blocks of whole
// words, each starting from <bos>.
std::vector<double> word_surprisals(const TokenScorer& scorer, const Tokenizer& tokenizer, const std::vector<std::string>& words);

struct ReadingTimeRow {
    std::string word;
    double reading_time = 0.0;  // ms
    double word_length = 0.0;
    double log_frequency = 0.0;
};

// CSV with header word,reading_time,word_length,log_frequency. Comment lines
// starting with '#' are ignored.
std::vector<ReadingTimeRow> parse_reading_times(std::string_view csv);
std::vector<ReadingTimeRow> read_reading_times(const std::filesystem::path& path);

struct RegressionResult {
    double r2_baseline = 0.0;
    double r2_full = 0.0;
    double delta_r2 = 0.0;
    std::vector<double> coefficients_baseline;  // intercept, word_length, log_frequency
    std::vector<double> coefficients_full;      // ... then surprisal
    bool surprisal_collinear = false;           // surprisal added nothing to the baseline span
};

// In-sample OLS with intercept, baseline {word_length, log_frequency}, full =
// baseline + surprisal. Needs at least 5 rows.
RegressionResult delta_r2(const std::vector<ReadingTimeRow>& rows, const std::vector<double>& surprisals);

struct LabeledText {
    std::string text;
    int label = 0;
};

struct ClassifierOptions {
    std::size_t subsample_size = 10000;
    std::uint64_t seed = 0;
    std::size_t epochs = 3;
    train::TrainConfig train = train::TrainConfig::instruction();  // lr, batch size, optimizer
    std::size_t max_resamples = 10;
};

struct ClassifierResult {
    double accuracy = 0.0;
    std::vector<std::size_t> subsample;  // sorted indices into the training list
    std::vector<int> classes;            // label of each head output
    std::size_t n_test = 0;
    std::vector<std::string> diagnostics;
};

// Indices of a seeded subsample of size min(k, n), sorted ascending.
std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed);

// Fine-tunes a copy of model plus a linear head on the final hidden state of
// the last token of <bos> text, then reports accuracy on test. A subsample
// holding a single class is redrawn under a derived seed, up to
// max_resamples times.
ClassifierResult finetune_classifier(const Model& model, const Tokenizer& tokenizer, const std::vector<LabeledText>& train_set,
                                     const std::vector<LabeledText>& test_set, const ClassifierOptions& options);

// JSONL readers. EvalItem records: {"task","context","candidates","correct_index"}
// with correct_index defaulting to 0 and id to "<task>/<line>".
std::vector<EvalItem> read_eval_items(const std::filesystem::path& path);
EvalItem item_from_json(const Json& j, std::size_t index);
Json to_json(const EvalItem& item);
std::vector<LabeledText> read_labeled(const std::filesystem::path& path);

// task,model_id,metric,value,n_items,n_ties
std::string results_csv(const std::vector<TaskResult>& results);
std::vector<TaskResult> parse_results_csv(std::string_view csv);

}  // namespace babyit::eval

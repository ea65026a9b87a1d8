#pragma once

// Question-answer augmentation of encyclopedia articles through a pluggable
// text-generation backend.

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "babyit/common.hpp"
#include "babyit/corpus.hpp"

namespace babyit::augment {

struct QAItem {
    std::string article_id;
    std::string question;
    std::string answer;
    int pair_index = 0;

    bool operator==(const QAItem&) const = default;
};

// The instruction block, one sentence per line.
inline constexpr std::string_view kInstruction =
    "Based on the following text, generate 3 questions and detailed, informative answers.\n"
    "Each answer should be easy for a young person to understand and at least 2–3 sentences long.\n"
    "Explain things in simple language, with clear and friendly sentences.\n"
    "Avoid short or vague replies and give enough detail so a kid can learn something new.";

// Instruction, a blank line, then the article text.
std::string build_augmentation_prompt(std::string_view article_text);

// Extracts the article back out of a prompt built by build_augmentation_prompt.
std::string_view article_from_prompt(std::string_view prompt);

// JSON schema sent alongside the prompt: an object with string fields q1..a3.
Json response_schema();

class GenerationError : public Error {
public:
    GenerationError(const std::string& what, bool retriable) : Error(what), retriable_(retriable) {}
    bool retriable() const { return retriable_; }

private:
    bool retriable_;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;

    // Returns the structured record {"q1","a1","q2","a2","q3","a3"}.
    virtual Json generate(const std::string& prompt, const std::string& article_id, int attempt) = 0;
};

// Deterministic template backend; output depends only on the article text,
// article_id and attempt. Stateless, so safe for concurrent use.
class StubBackend final : public GenerationBackend {
public:
    Json generate(const std::string& prompt, const std::string& article_id, int attempt) override;
};

// POSTs {"prompt", "schema"} as JSON to an HTTP endpoint and expects the
// structured record back as the response body.
class HttpBackend final : public GenerationBackend {
public:
    HttpBackend(std::string url, std::chrono::milliseconds timeout);
    Json generate(const std::string& prompt, const std::string& article_id, int attempt) override;

private:
    std::string scheme_host_port_;
    std::string path_;
    std::chrono::milliseconds timeout_;
};

struct ValidationRules {
    std::size_t min_sentences = 2;
    std::size_t min_answer_words = 15;
};

// Terminal punctuation marks {., !, ?} ending a run of text.
std::size_t count_sentences(std::string_view text);

// Empty result means the item is valid.
std::vector<std::string> validate_qa_item(const QAItem& item, const ValidationRules& rules = {});

struct GenerationOptions {
    int max_retries = 2;
    ValidationRules rules;
};

struct GenerationOutcome {
    std::vector<QAItem> items;  // exactly 3, or empty when skipped
    int attempts = 0;
    bool skipped = false;
    std::vector<std::string> log;
};

GenerationOutcome generate_qa_triples(const corpus::Document& article, GenerationBackend& backend, const GenerationOptions& options = {});

struct SkippedArticle {
    std::string article_id;
    std::string reason;
};

struct AugmentResult {
    std::vector<QAItem> items;  // sorted by (article_id, pair_index)
    std::vector<SkippedArticle> skipped;
};

// Runs generate_qa_triples over all articles with at most max_in_flight
// concurrent requests; output order is independent of scheduling.
AugmentResult augment_articles(const std::vector<corpus::Document>& articles, GenerationBackend& backend,
                               const GenerationOptions& options = {}, std::size_t max_in_flight = 1);

// Uniform sample of whole articles under seed, taken in shuffled order until
// adding the next article would exceed target_words. Returned in input order.
std::vector<corpus::Document> sample_articles(const std::vector<corpus::Document>& articles, std::uint64_t target_words,
                                              std::uint64_t seed);

Json to_json(const QAItem& item);
QAItem qa_from_json(const Json& j);

}  // namespace babyit::augment

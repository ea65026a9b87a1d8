#include "babyit/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

namespace babyit::augment {

namespace {

constexpr std::string_view kSeparator = "\n\n";

std::string normalize_keyword(std::string_view word) {
    std::string out;
    for (char c : word) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isalnum(uc) || uc >= 0x80) {
            out.push_back(static_cast<char>(std::tolower(uc)));
        }
    }
    return out;
}

bool function_word(std::string_view w) {
    static constexpr std::string_view kWords[] = {"the",   "and",   "are",  "was",   "were",  "has",   "have", "had",  "that",  "this",
                                                  "with",  "for",   "from", "they",  "them",  "its",   "can",  "not",  "you",   "but",
                                                  "very",  "also",  "which", "into", "their", "there", "these", "those", "some", "many",
                                                  "most",  "more",  "than", "when",  "what",  "where", "who",  "how",  "why",   "will",
                                                  "would", "about", "been", "being", "our",   "your",  "his",  "her",  "she",   "all"};
    return std::find(std::begin(kWords), std::end(kWords), w) != std::end(kWords);
}

std::vector<std::string> keywords(std::string_view text) {
    std::vector<std::string> out;
    for (auto w : split_whitespace(text)) {
        auto k = normalize_keyword(w);
        if (k.size() >= 3 && !function_word(k) && std::find(out.begin(), out.end(), k) == out.end()) {
            out.push_back(std::move(k));
        }
    }
    if (out.empty()) {
        out.emplace_back("this topic");
    }
    return out;
}

std::string opening(std::string_view text, std::size_t n_words) {
    auto words = split_whitespace(text);
    std::string out;
    for (std::size_t i = 0; i < std::min(n_words, words.size()); ++i) {
        if (i > 0) {
            out += ' ';
        }
        for (char c : words[i]) {
            if (c != '.' && c != '!' && c != '?') {
                out.push_back(c);
            }
        }
    }
    return out;
}

const std::string& field(const Json& record, const char* name) {
    if (!record.is_object() || !record.contains(name) || !record.at(name).is_string()) {
        throw GenerationError(fmt::format("response lacks string field '{}'", name), true);
    }
    return record.at(name).get_ref<const std::string&>();
}

}  // namespace

std::string build_augmentation_prompt(std::string_view article_text) {
    if (article_text.empty()) {
        throw Error("build_augmentation_prompt: empty article");
    }
    std::string prompt(kInstruction);
    prompt += kSeparator;
    prompt += article_text;
    return prompt;
}

std::string_view article_from_prompt(std::string_view prompt) {
    const auto pos = prompt.find(kSeparator);
    return pos == std::string_view::npos ? prompt : prompt.substr(pos + kSeparator.size());
}

Json response_schema() {
    Json props = Json::object();
    for (const char* name : {"q1", "a1", "q2", "a2", "q3", "a3"}) {
        props[name] = Json{{"type", "string"}};
    }
    return Json{{"type", "object"}, {"properties", props}, {"required", Json::array({"q1", "a1", "q2", "a2", "q3", "a3"})}};
}

Json StubBackend::generate(const std::string& prompt, const std::string& article_id, int attempt) {
    const auto article = article_from_prompt(prompt);
    const auto keys = keywords(article);
    const auto lead = opening(article, 8);
    const auto variant = fnv1a(article_id) % 2;
    Json out;
    for (int i = 0; i < 3; ++i) {
        const auto& k = keys[static_cast<std::size_t>(i + attempt) % keys.size()];
        std::string q;
        std::string a;
        switch (i) {
            case 0:
                q = fmt::format("What does the text tell us about {}?", k);
                a = fmt::format("The text explains that {} is part of this topic. It says that {}. This simple fact helps a young reader learn something new about {}.",
                                k, lead, k);
                break;
            case 1:
                q = fmt::format("Why is {} important?", k);
                a = fmt::format("{} is important because it helps us understand the world. People talk about {} when they want to explain how things work. Learning about it can be fun and friendly for a kid.",
                                k, k);
                break;
            default:
                q = fmt::format("How can a kid learn more about {}?", k);
                a = variant == 0
                        ? fmt::format("A kid can read books and ask questions about {}. Teachers and parents can help explain {} in simple words. Looking at pictures is another good way to learn.", k, k)
                        : fmt::format("A kid can learn about {} by asking a teacher or a parent. Reading short stories about {} is also a good idea. Talking with friends helps people remember new things.", k, k);
                break;
        }
        if (!a.empty()) {
            a[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(a[0])));
        }
        out[fmt::format("q{}", i + 1)] = q;
        out[fmt::format("a{}", i + 1)] = a;
    }
    return out;
}

HttpBackend::HttpBackend(std::string url, std::chrono::milliseconds timeout) : timeout_(timeout) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError(fmt::format("backend url '{}' lacks a scheme", url));
    }
    const auto path_start = url.find('/', scheme_end + 3);
    scheme_host_port_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

Json HttpBackend::generate(const std::string& prompt, const std::string& article_id, int /*attempt*/) {
    httplib::Client client(scheme_host_port_);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    const Json request{{"prompt", prompt}, {"schema", response_schema()}};
    auto res = client.Post(path_, request.dump(), "application/json");
    if (!res) {
        throw GenerationError(fmt::format("article '{}': backend request failed: {}", article_id, httplib::to_string(res.error())), true);
    }
    if (res->status != 200) {
        throw GenerationError(fmt::format("article '{}': backend returned HTTP {}", article_id, res->status), res->status >= 500);
    }
    try {
        return Json::parse(res->body);
    } catch (const Json::parse_error&) {
        throw GenerationError(fmt::format("article '{}': backend response is not JSON", article_id), true);
    }
}

std::size_t count_sentences(std::string_view text) {
    std::size_t n = 0;
    bool in_terminal = false;
    for (char c : text) {
        const bool terminal = c == '.' || c == '!' || c == '?';
        if (terminal && !in_terminal) {
            ++n;
        }
        in_terminal = terminal;
    }
    return n;
}

std::vector<std::string> validate_qa_item(const QAItem& item, const ValidationRules& rules) {
    std::vector<std::string> violations;
    const auto question = trim(item.question);
    if (question.empty()) {
        violations.emplace_back("empty question");
    } else if (question.back() != '?') {
        violations.emplace_back("question does not end with '?'");
    }
    const auto sentences = count_sentences(item.answer);
    if (sentences < rules.min_sentences) {
        violations.push_back(fmt::format("answer has {} sentence(s), need at least {}", sentences, rules.min_sentences));
    }
    const auto words = corpus::count_words(item.answer);
    if (words < rules.min_answer_words) {
        violations.push_back(fmt::format("answer has {} word(s), need at least {}", words, rules.min_answer_words));
    }
    if (item.pair_index < 0 || item.pair_index > 2) {
        violations.push_back(fmt::format("pair_index {} outside 0..2", item.pair_index));
    }
    return violations;
}

GenerationOutcome generate_qa_triples(const corpus::Document& article, GenerationBackend& backend, const GenerationOptions& options) {
    GenerationOutcome outcome;
    const auto prompt = build_augmentation_prompt(article.text);
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
        ++outcome.attempts;
        try {
            const Json record = backend.generate(prompt, article.id, attempt);
            std::vector<QAItem> items;
            std::vector<std::string> problems;
            for (int i = 0; i < 3; ++i) {
                QAItem item{article.id, trim(field(record, fmt::format("q{}", i + 1).c_str())),
                            trim(field(record, fmt::format("a{}", i + 1).c_str())), i};
                for (auto& v : validate_qa_item(item, options.rules)) {
                    problems.push_back(fmt::format("pair {}: {}", i, v));
                }
                items.push_back(std::move(item));
            }
            if (problems.empty()) {
                outcome.items = std::move(items);
                return outcome;
            }
            outcome.log.push_back(fmt::format("attempt {}: {}", attempt, join(problems, "; ")));
        } catch (const GenerationError& e) {
            outcome.log.push_back(fmt::format("attempt {}: {}", attempt, e.what()));
            if (!e.retriable()) {
                break;
            }
        }
    }
    outcome.skipped = true;
    return outcome;
}

AugmentResult augment_articles(const std::vector<corpus::Document>& articles, GenerationBackend& backend,
                               const GenerationOptions& options, std::size_t max_in_flight) {
    std::vector<GenerationOutcome> outcomes(articles.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < articles.size(); i = next++) {
            outcomes[i] = generate_qa_triples(articles[i], backend, options);
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(max_in_flight, articles.size()));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back(worker);
        }
    }

    std::vector<std::size_t> order(articles.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return articles[a].id < articles[b].id; });

    AugmentResult result;
    for (auto i : order) {
        auto& o = outcomes[i];
        if (o.skipped) {
            result.skipped.push_back(SkippedArticle{articles[i].id, o.log.empty() ? "no attempts" : o.log.back()});
        } else {
            for (auto& item : o.items) {
                result.items.push_back(std::move(item));
            }
        }
    }
    return result;
}

std::vector<corpus::Document> sample_articles(const std::vector<corpus::Document>& articles, std::uint64_t target_words,
                                              std::uint64_t seed) {
    std::vector<std::size_t> order(articles.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<bool> chosen(articles.size(), false);
    std::uint64_t words = 0;
    for (auto i : order) {
        if (words + articles[i].word_count > target_words) {
            break;
        }
        words += articles[i].word_count;
        chosen[i] = true;
    }
    std::vector<corpus::Document> out;
    for (std::size_t i = 0; i < articles.size(); ++i) {
        if (chosen[i]) {
            out.push_back(articles[i]);
        }
    }
    return out;
}

Json to_json(const QAItem& item) {
    return Json{{"article_id", item.article_id}, {"question", item.question}, {"answer", item.answer}, {"pair_index", item.pair_index}};
}

QAItem qa_from_json(const Json& j) {
    return QAItem{j.at("article_id").get<std::string>(), j.at("question").get<std::string>(), j.at("answer").get<std::string>(),
                  j.at("pair_index").get<int>()};
}

}  // namespace babyit::augment

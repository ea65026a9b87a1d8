#include <doctest.h>

#include <map>

#include "babyit/fixtures.hpp"
#include "babyit/tokenizer.hpp"

using namespace babyit;

namespace {

using Symbols = std::vector<std::string>;

// Textbook BPE: recount every adjacent pair after each merge.
std::vector<std::pair<std::string, std::string>> naive_bpe(const std::vector<std::string>& corpus, std::size_t merges) {
    std::map<std::string, std::int64_t> chunks;
    for (const auto& doc : corpus) {
        for (auto c : Tokenizer::pretokenize(doc)) {
            ++chunks[std::string(c)];
        }
    }
    std::vector<std::pair<Symbols, std::int64_t>> words;
    for (const auto& [chunk, f] : chunks) {
        Symbols s;
        for (char ch : chunk) {
            s.emplace_back(1, ch);
        }
        words.push_back({s, f});
    }
    std::vector<std::pair<std::string, std::string>> out;
    while (out.size() < merges) {
        std::map<std::pair<std::string, std::string>, std::int64_t> counts;
        for (const auto& [s, f] : words) {
            for (std::size_t i = 0; i + 1 < s.size(); ++i) {
                counts[{s[i], s[i + 1]}] += f;
            }
        }
        if (counts.empty()) {
            break;
        }
        auto best = counts.begin();
        for (auto it = counts.begin(); it != counts.end(); ++it) {
            if (it->second > best->second) {
                best = it;
            }
        }
        const auto [l, r] = best->first;
        out.push_back({l, r});
        for (auto& [s, f] : words) {
            Symbols merged;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (i + 1 < s.size() && s[i] == l && s[i + 1] == r) {
                    merged.push_back(l + r);
                    ++i;
                } else {
                    merged.push_back(s[i]);
                }
            }
            s = std::move(merged);
        }
    }
    return out;
}

std::vector<std::string> small_corpus() {
    return {"the cat sat on the mat", "the dog sat on the log", "a cat and a dog", "aaa aaaa banana bandana", "cats   and\tdogs\n"};
}

}  // namespace

TEST_CASE("first merge on ababab") {
    const auto tok = Tokenizer::train({"ababab"}, kBaseVocab + 1);
    REQUIRE(tok.merges().size() == 1);
    CHECK(tok.merges()[0] == std::pair<TokenId, TokenId>{kByteBase + 'a', kByteBase + 'b'});
    CHECK(tok.vocab_size() == kBaseVocab + 1);
    CHECK(tok.token_bytes(kBaseVocab) == "ab");
}

TEST_CASE("merges match a textbook BPE trainer") {
    const auto corpus = small_corpus();
    const auto expected = naive_bpe(corpus, 40);
    const auto tok = Tokenizer::train(corpus, kBaseVocab + expected.size());
    REQUIRE(tok.merges().size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
        CAPTURE(i);
        CHECK(tok.token_bytes(tok.merges()[i].first) == expected[i].first);
        CHECK(tok.token_bytes(tok.merges()[i].second) == expected[i].second);
    }
}

TEST_CASE("training is deterministic") {
    const auto corpus = fixtures::child_directed_corpus(3000, 5);
    const auto a = Tokenizer::train(corpus, 400);
    const auto b = Tokenizer::train(corpus, 400);
    CHECK(a.merges() == b.merges());
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("encode equals sequential application of the merge list") {
    const auto corpus = fixtures::child_directed_corpus(3000, 9);
    const auto tok = Tokenizer::train(corpus, 420);
    for (const auto& doc : fixtures::child_directed_corpus(500, 10)) {
        std::vector<TokenId> expected;
        for (auto chunk : Tokenizer::pretokenize(doc)) {
            std::vector<TokenId> s;
            for (unsigned char c : chunk) {
                s.push_back(kByteBase + c);
            }
            for (std::size_t m = 0; m < tok.merges().size(); ++m) {
                const auto [l, r] = tok.merges()[m];
                std::vector<TokenId> next;
                for (std::size_t i = 0; i < s.size(); ++i) {
                    if (i + 1 < s.size() && s[i] == l && s[i + 1] == r) {
                        next.push_back(kBaseVocab + static_cast<TokenId>(m));
                        ++i;
                    } else {
                        next.push_back(s[i]);
                    }
                }
                s = std::move(next);
            }
            expected.insert(expected.end(), s.begin(), s.end());
        }
        CHECK(tok.encode(doc) == expected);
    }
}

TEST_CASE("round trip and special tokens") {
    const auto tok = Tokenizer::train(small_corpus(), kBaseVocab + 30);
    CHECK(tok.decode(tok.encode("hello world")) == "hello world");
    CHECK(tok.encode("", true) == std::vector<TokenId>{SpecialTokens::bos, SpecialTokens::eos});
    const auto with = tok.encode("the cat", true);
    CHECK(with.front() == SpecialTokens::bos);
    CHECK(with.back() == SpecialTokens::eos);
    CHECK(tok.decode(with) == "the cat");
    const std::vector<TokenId> out_of_range{static_cast<TokenId>(tok.vocab_size())};
    CHECK_THROWS(tok.decode(out_of_range));
    CHECK_THROWS(tok.decode(std::vector<TokenId>{-1}));
}

TEST_CASE("arbitrary bytes round trip") {
    const auto tok = Tokenizer::train(small_corpus(), kBaseVocab + 30);
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::string s;
        const auto n = rng.below(40);
        for (std::size_t i = 0; i < n; ++i) {
            s.push_back(static_cast<char>(rng.below(256)));
        }
        CHECK(tok.decode(tok.encode(s)) == s);
    }
}

TEST_CASE("offsets cover the text and respect word boundaries") {
    const auto tok = Tokenizer::train(small_corpus(), kBaseVocab + 36);
    const std::string text = "  the cat\tsat on  a mat ";
    std::vector<TokenSpan> spans;
    const auto ids = tok.encode_with_offsets(text, spans);
    REQUIRE(ids.size() == spans.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        CHECK(spans[i].begin == pos);
        CHECK(text.substr(spans[i].begin, spans[i].end - spans[i].begin) == tok.token_bytes(ids[i]));
        const auto piece = text.substr(spans[i].begin, spans[i].end - spans[i].begin);
        bool seen_word = false;
        for (char c : piece) {
            const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
            CHECK_FALSE((seen_word && space));
            seen_word = seen_word || !space;
        }
        pos = spans[i].end;
    }
    CHECK(pos == text.size());
}

TEST_CASE("pretokenize splits into whitespace-prefixed words") {
    const auto chunks = Tokenizer::pretokenize("hi  there\nyou ");
    REQUIRE(chunks.size() == 4);
    CHECK(chunks[0] == "hi");
    CHECK(chunks[1] == "  there");
    CHECK(chunks[2] == "\nyou");
    CHECK(chunks[3] == " ");
}

TEST_CASE("training errors") {
    CHECK_THROWS(Tokenizer::train({}, 300));
    CHECK_THROWS(Tokenizer::train({"ab"}, kBaseVocab));
    CHECK_THROWS(Tokenizer::train({"ab"}, kBaseVocab + 5));
}

TEST_CASE("JSON round trip") {
    const auto tok = Tokenizer::train(small_corpus(), kBaseVocab + 30);
    const auto back = Tokenizer::from_json(tok.to_json());
    CHECK(back.merges() == tok.merges());
    CHECK(back.encode("the dog and cats") == tok.encode("the dog and cats"));
    auto bad = tok.to_json();
    bad["format"] = "something-else";
    CHECK_THROWS(Tokenizer::from_json(bad));
}

TEST_CASE("vocabulary of 16384 on a pseudo-word corpus") {
    const auto corpus = fixtures::pseudo_word_corpus(20000, 120000, 3);
    const auto tok = Tokenizer::train(corpus, 16384);
    CHECK(tok.vocab_size() == 16384);
    CHECK(tok.merges().size() == 16384 - kBaseVocab);
    CHECK(tok.decode(tok.encode(corpus[0])) == corpus[0]);
}

#include "babyit/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>

#include <fmt/format.h>

namespace babyit {

namespace {

constexpr std::string_view kFormat = "babyit-bpe";
constexpr int kVersion = 1;

std::uint64_t pair_key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

std::string to_hex(std::string_view bytes) {
    std::string out;
    for (unsigned char c : bytes) {
        out += fmt::format("{:02x}", c);
    }
    return out;
}

}  // namespace

Tokenizer::Tokenizer() {
    tokens_ = {"<bos>", "<eos>", "<pad>", "<sep>"};
    for (int b = 0; b < 256; ++b) {
        tokens_.emplace_back(1, static_cast<char>(b));
    }
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw Error(fmt::format("token id {} outside vocabulary of size {}", id, tokens_.size()));
    }
    return tokens_[static_cast<std::size_t>(id)];
}

void Tokenizer::add_merge(TokenId left, TokenId right) {
    const auto rank = static_cast<std::int32_t>(merges_.size());
    merges_.emplace_back(left, right);
    merge_rank_.emplace(pair_key(left, right), rank);
    tokens_.push_back(tokens_[static_cast<std::size_t>(left)] + tokens_[static_cast<std::size_t>(right)]);
}

std::vector<std::string_view> Tokenizer::pretokenize(std::string_view text) {
    std::vector<std::string_view> chunks;
    std::size_t start = 0;
    for (std::size_t i = 1; i < text.size(); ++i) {
        if (is_space(text[i]) && !is_space(text[i - 1])) {
            chunks.push_back(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) {
        chunks.push_back(text.substr(start));
    }
    return chunks;
}

Tokenizer Tokenizer::train(const std::vector<std::string>& corpus, std::size_t vocab_size) {
    if (vocab_size <= static_cast<std::size_t>(kBaseVocab)) {
        throw Error(fmt::format("vocab_size {} must exceed the {} base symbols", vocab_size, kBaseVocab));
    }
    std::map<std::string_view, std::uint64_t> chunk_freq;
    for (const auto& doc : corpus) {
        for (auto chunk : pretokenize(doc)) {
            ++chunk_freq[chunk];
        }
    }
    if (chunk_freq.empty()) {
        throw Error("cannot train a tokenizer on an empty corpus");
    }

    Tokenizer tok;
    std::vector<std::vector<TokenId>> words;
    std::vector<std::int64_t> freq;
    words.reserve(chunk_freq.size());
    for (const auto& [chunk, f] : chunk_freq) {
        std::vector<TokenId> syms;
        for (unsigned char c : chunk) {
            syms.push_back(kByteBase + c);
        }
        words.push_back(std::move(syms));
        freq.push_back(static_cast<std::int64_t>(f));
    }

    const auto& tokens = tok.tokens_;
    struct Candidate {
        std::int64_t count;
        TokenId left;
        TokenId right;
    };
    auto better = [&tokens](const Candidate& a, const Candidate& b) {
        if (a.count != b.count) {
            return a.count > b.count;
        }
        const auto& al = tokens[static_cast<std::size_t>(a.left)];
        const auto& bl = tokens[static_cast<std::size_t>(b.left)];
        if (al != bl) {
            return al < bl;
        }
        const auto& ar = tokens[static_cast<std::size_t>(a.right)];
        const auto& br = tokens[static_cast<std::size_t>(b.right)];
        if (ar != br) {
            return ar < br;
        }
        // Distinct ids can spell the same bytes.
        return std::pair(a.left, a.right) < std::pair(b.left, b.right);
    };
    std::set<Candidate, decltype(better)> queue(better);
    std::unordered_map<std::uint64_t, std::int64_t> counts;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;

    for (std::uint32_t w = 0; w < words.size(); ++w) {
        const auto& s = words[w];
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            const auto key = pair_key(s[i], s[i + 1]);
            counts[key] += freq[w];
            where[key].push_back(w);
        }
    }
    for (const auto& [key, c] : counts) {
        queue.insert(Candidate{c, static_cast<TokenId>(key >> 32), static_cast<TokenId>(key & 0xffffffffU)});
    }

    std::vector<std::uint32_t> stamp(words.size(), 0);
    std::uint32_t round = 0;
    while (tok.tokens_.size() < vocab_size) {
        if (queue.empty()) {
            throw Error(fmt::format("corpus supports only {} merges; cannot reach vocab_size {}", tok.merges_.size(), vocab_size));
        }
        const Candidate best = *queue.begin();
        const auto best_key = pair_key(best.left, best.right);
        const auto new_id = static_cast<TokenId>(tok.tokens_.size());
        tok.add_merge(best.left, best.right);
        ++round;

        std::unordered_map<std::uint64_t, std::int64_t> delta;
        std::vector<std::pair<std::uint64_t, std::uint32_t>> new_where;
        for (auto w : where[best_key]) {
            if (stamp[w] == round) {
                continue;
            }
            stamp[w] = round;
            auto& s = words[w];
            bool present = false;
            for (std::size_t i = 0; i + 1 < s.size(); ++i) {
                if (s[i] == best.left && s[i + 1] == best.right) {
                    present = true;
                    break;
                }
            }
            if (!present) {
                continue;
            }
            for (std::size_t i = 0; i + 1 < s.size(); ++i) {
                delta[pair_key(s[i], s[i + 1])] -= freq[w];
            }
            std::vector<TokenId> merged;
            merged.reserve(s.size());
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (i + 1 < s.size() && s[i] == best.left && s[i + 1] == best.right) {
                    merged.push_back(new_id);
                    ++i;
                } else {
                    merged.push_back(s[i]);
                }
            }
            s = std::move(merged);
            for (std::size_t i = 0; i + 1 < s.size(); ++i) {
                const auto key = pair_key(s[i], s[i + 1]);
                delta[key] += freq[w];
                new_where.emplace_back(key, w);
            }
        }
        for (const auto& [key, d] : delta) {
            if (d == 0) {
                continue;
            }
            auto& c = counts[key];
            const auto left = static_cast<TokenId>(key >> 32);
            const auto right = static_cast<TokenId>(key & 0xffffffffU);
            if (c > 0) {
                queue.erase(Candidate{c, left, right});
            }
            c += d;
            if (c > 0) {
                queue.insert(Candidate{c, left, right});
            } else {
                counts.erase(key);
            }
        }
        for (const auto& [key, w] : new_where) {
            where[key].push_back(w);
        }
        where.erase(best_key);
    }
    return tok;
}

void Tokenizer::encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const {
    std::vector<TokenId> syms;
    syms.reserve(chunk.size());
    for (unsigned char c : chunk) {
        syms.push_back(kByteBase + c);
    }
    while (syms.size() > 1) {
        std::int32_t best_rank = std::numeric_limits<std::int32_t>::max();
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
            auto it = merge_rank_.find(pair_key(syms[i], syms[i + 1]));
            if (it != merge_rank_.end() && it->second < best_rank) {
                best_rank = it->second;
            }
        }
        if (best_rank == std::numeric_limits<std::int32_t>::max()) {
            break;
        }
        const auto [left, right] = merges_[static_cast<std::size_t>(best_rank)];
        const auto merged_id = static_cast<TokenId>(kBaseVocab + best_rank);
        std::size_t o = 0;
        for (std::size_t i = 0; i < syms.size(); ++i) {
            if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
                syms[o++] = merged_id;
                ++i;
            } else {
                syms[o++] = syms[i];
            }
        }
        syms.resize(o);
    }
    out.insert(out.end(), syms.begin(), syms.end());
}

std::vector<TokenId> Tokenizer::encode(std::string_view text, bool add_special) const {
    std::vector<TokenId> ids;
    if (add_special) {
        ids.push_back(SpecialTokens::bos);
    }
    for (auto chunk : pretokenize(text)) {
        encode_chunk(chunk, ids);
    }
    if (add_special) {
        ids.push_back(SpecialTokens::eos);
    }
    return ids;
}

std::vector<TokenId> Tokenizer::encode_with_offsets(std::string_view text, std::vector<TokenSpan>& spans) const {
    std::vector<TokenId> ids;
    spans.clear();
    for (auto chunk : pretokenize(text)) {
        const auto before = ids.size();
        encode_chunk(chunk, ids);
        std::size_t pos = static_cast<std::size_t>(chunk.data() - text.data());
        for (auto i = before; i < ids.size(); ++i) {
            const auto len = tokens_[static_cast<std::size_t>(ids[i])].size();
            spans.push_back(TokenSpan{pos, pos + len});
            pos += len;
        }
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids) {
        const auto& bytes = token_bytes(id);
        if (id >= SpecialTokens::count) {
            out += bytes;
        }
    }
    return out;
}

Json Tokenizer::to_json() const {
    Json merges = Json::array();
    for (const auto& [l, r] : merges_) {
        merges.push_back(Json::array({l, r}));
    }
    Json vocab = Json::array();
    for (std::size_t i = SpecialTokens::count; i < tokens_.size(); ++i) {
        vocab.push_back(to_hex(tokens_[i]));
    }
    return Json{{"format", kFormat},
                {"version", kVersion},
                {"vocab_size", tokens_.size()},
                {"specials", {{"bos", SpecialTokens::bos}, {"eos", SpecialTokens::eos}, {"pad", SpecialTokens::pad}, {"sep", SpecialTokens::sep}}},
                {"merges", merges},
                {"vocab_hex", vocab}};
}

Tokenizer Tokenizer::from_json(const Json& j) {
    if (j.value("format", "") != kFormat) {
        throw Error("not a babyit tokenizer file");
    }
    if (j.at("version").get<int>() != kVersion) {
        throw Error(fmt::format("unsupported tokenizer version {}", j.at("version").get<int>()));
    }
    Tokenizer tok;
    for (const auto& m : j.at("merges")) {
        const auto l = m.at(0).get<TokenId>();
        const auto r = m.at(1).get<TokenId>();
        const auto n = static_cast<TokenId>(tok.tokens_.size());
        if (l < SpecialTokens::count || r < SpecialTokens::count || l >= n || r >= n) {
            throw Error(fmt::format("merge ({}, {}) references an invalid id", l, r));
        }
        tok.add_merge(l, r);
    }
    if (j.at("vocab_size").get<std::size_t>() != tok.tokens_.size()) {
        throw Error("tokenizer vocab_size disagrees with merges");
    }
    if (j.contains("vocab_hex")) {
        const auto& vocab = j.at("vocab_hex");
        for (std::size_t i = 0; i < vocab.size(); ++i) {
            if (vocab[i].get<std::string>() != to_hex(tok.tokens_[i + SpecialTokens::count])) {
                throw Error(fmt::format("tokenizer vocab entry {} disagrees with merges", i + SpecialTokens::count));
            }
        }
    }
    return tok;
}

void Tokenizer::save(const std::filesystem::path& path, const Json& provenance) const {
    auto j = to_json();
    if (!provenance.is_null()) {
        j["provenance"] = provenance;
    }
    write_file(path, j.dump(1) + "\n");
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
    return from_json(Json::parse(read_file(path)));
}

}  // namespace babyit

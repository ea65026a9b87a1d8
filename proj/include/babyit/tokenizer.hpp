#pragma once

// Byte-level BPE tokenizer.
//
// Ids 0..3 are reserved for <bos>, <eos>, <pad>, <sep>; ids 4..259 are the
// 256 byte values; every further id is produced by one merge rule, in merge
// order. Text is pre-split into chunks made of a whitespace run followed by
// a non-whitespace run (" word"), and merges never cross chunk boundaries, so
// every token belongs to exactly one whitespace-delimited word.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "babyit/common.hpp"

namespace babyit {

struct SpecialTokens {
    static constexpr TokenId bos = 0;
    static constexpr TokenId eos = 1;
    static constexpr TokenId pad = 2;
    static constexpr TokenId sep = 3;
    static constexpr TokenId count = 4;
};

inline constexpr TokenId kByteBase = SpecialTokens::count;
inline constexpr TokenId kBaseVocab = kByteBase + 256;

struct TokenSpan {
    std::size_t begin = 0;  // byte offsets into the encoded text
    std::size_t end = 0;
};

class Tokenizer {
public:
    // Byte-only tokenizer (no merges).
    Tokenizer();

    // Greedy highest-frequency pair merging until vocab_size entries exist.
    // Equal frequencies are broken by the lexicographically smallest
    // (left bytes, right bytes) pair. Throws if the corpus is empty or runs
    // out of mergeable pairs before vocab_size is reached.
    static Tokenizer train(const std::vector<std::string>& corpus, std::size_t vocab_size);

    std::vector<TokenId> encode(std::string_view text, bool add_special = false) const;

    // Token ids plus the byte span of each token within text.
    std::vector<TokenId> encode_with_offsets(std::string_view text, std::vector<TokenSpan>& spans) const;

    // Special tokens decode to nothing.
    std::string decode(std::span<const TokenId> ids) const;

    std::size_t vocab_size() const { return tokens_.size(); }
    const std::vector<std::pair<TokenId, TokenId>>& merges() const { return merges_; }
    const std::string& token_bytes(TokenId id) const;

    Json to_json() const;
    static Tokenizer from_json(const Json& j);
    void save(const std::filesystem::path& path, const Json& provenance = Json()) const;
    static Tokenizer load(const std::filesystem::path& path);

    static std::vector<std::string_view> pretokenize(std::string_view text);

private:
    void add_merge(TokenId left, TokenId right);
    void encode_chunk(std::string_view chunk, std::vector<TokenId>& out) const;

    std::vector<std::string> tokens_;
    std::vector<std::pair<TokenId, TokenId>> merges_;
    std::unordered_map<std::uint64_t, std::int32_t> merge_rank_;
};

}  // namespace babyit

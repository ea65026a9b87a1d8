#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace babyit {

using Json = nlohmann::json;
using TokenId = std::int32_t;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Thrown for bad user-supplied configuration (manifests, CLI arguments).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Seeded generator with platform-independent bounded draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    // Uniform real in [0, 1).
    double uniform();

    double normal(double mean, double stddev);

    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Mixes a base seed with a stream index so that per-epoch and per-phase
// generators are independent but reproducible.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);
std::string hash_hex(std::string_view bytes);
std::string hash_file(const std::filesystem::path& path);

std::vector<std::string_view> split_whitespace(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string trim(std::string_view text);

// Decodes UTF-8 into code points. Invalid bytes decode to U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(const std::vector<char32_t>& cps);
void utf8_append(std::string& out, char32_t cp);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// JSON-lines helpers. Lines holding a "_provenance" record are skipped on read.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Json>& records);

// Splits one CSV record. Fields may be double-quoted, with "" as an escaped quote.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view value);

// Formats a real with fixed precision, independent of the global locale.
std::string fixed(double value, int precision);

}  // namespace babyit

#pragma once

// Experiment stages driven by one manifest. Every artifact carries a
// provenance record (stage name, manifest hash, seed), and each stage writes
// provenance/<stage>.json listing the hashes of what it produced.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "babyit/curriculum.hpp"
#include "babyit/manifest.hpp"

namespace babyit::pipeline {

inline constexpr std::array<std::string_view, 8> kStages = {"build-corpus", "augment", "train-tokenizer", "pretrain",
                                                             "instruct-tune", "evaluate", "finetune-eval", "report"};

// Environment variable that overrides augment.url.
inline constexpr const char* kBackendUrlEnv = "BABYIT_BACKEND_URL";

struct RunOptions {
    std::optional<curriculum::Strategy> strategy;  // instruct-tune: one strategy instead of all
    std::optional<std::string> backend_url;
    bool force_stub = false;
    std::optional<int> max_retries;
    std::optional<int> timeout_ms;
    std::optional<std::filesystem::path> results_csv;  // report: input instead of the evaluate output
    std::ostream* log = nullptr;                       // defaults to std::cerr
};

class Pipeline {
public:
    Pipeline(RunManifest manifest, RunOptions options = {});

    void build_corpus();
    void augment();
    void train_tokenizer();
    void pretrain();
    void instruct_tune();
    void evaluate();
    void finetune_eval();
    void report();

    // Every stage in order, instruction tuning over all manifest strategies.
    void run_all();

    // Throws ConfigError for an unknown stage name.
    void run_stage(std::string_view stage);

    const RunManifest& manifest() const { return manifest_; }
    const std::string& manifest_hash() const { return hash_; }
    Json provenance(std::string_view stage) const;

private:
    std::filesystem::path out(const std::string& relative) const;
    void write_text(const std::filesystem::path& path, std::string_view body);
    void write_csv(const std::filesystem::path& path, std::string_view stage, std::string_view body);
    void write_jsonl(const std::filesystem::path& path, std::string_view stage, const std::vector<Json>& records);
    void write_json(const std::filesystem::path& path, std::string_view stage, Json j);
    void finish_stage(std::string_view stage, Json extra = Json::object());
    std::ostream& log() const;
    std::uint64_t stage_seed(std::string_view stage) const;
    void tune_strategy(curriculum::Strategy strategy);

    RunManifest manifest_;
    RunOptions options_;
    std::string hash_;
    std::vector<std::filesystem::path> written_;
};

// Hash of every regular file below dir, keyed by generic relative path.
std::map<std::string, std::string> artifact_hashes(const std::filesystem::path& dir);

// Writes fixture inputs plus a manifest.json referencing them; returns the
// manifest path. small selects the sizes used by the end-to-end check.
std::filesystem::path write_fixture_manifest(const std::filesystem::path& dir, std::uint64_t seed, bool small);

}  // namespace babyit::pipeline

#pragma once

// Run manifest: one JSON file declaring inputs, configurations and the seed
// for every pipeline stage.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "babyit/corpus.hpp"
#include "babyit/curriculum.hpp"
#include "babyit/eval.hpp"
#include "babyit/model.hpp"
#include "babyit/report.hpp"
#include "babyit/train.hpp"

namespace babyit {

struct CorpusInput {
    std::filesystem::path path;
    corpus::Source source = corpus::Source::other;
};

struct CorpusSettings {
    std::vector<CorpusInput> pretrain;
    std::filesystem::path dialogues;
    std::filesystem::path articles;
    double split_fraction = 0.9;
    bool dialogue_level_split = false;
    std::uint64_t word_cap = 100'000'000;
    bool enforce_budget = true;
    std::size_t min_words = corpus::kDefaultMinWords;
    std::uint64_t augment_target_words = 0;  // 0 takes every article
};

struct AugmentSettings {
    std::string backend = "stub";  // "stub" or "http"
    std::string url;
    int max_retries = 2;
    int timeout_ms = 30000;
    std::size_t max_in_flight = 4;
};

struct TokenizerSettings {
    std::size_t vocab_size = 512;
    bool include_instruction_data = true;
};

struct EvalSettings {
    std::filesystem::path items;
    std::filesystem::path reading_times;
    std::filesystem::path classification_train;
    std::filesystem::path classification_test;
    std::vector<eval::Normalization> normalizations{eval::Normalization::none, eval::Normalization::per_token};
    std::size_t subsample_size = 10000;
    std::size_t finetune_epochs = 3;
    std::optional<double> finetune_lr;  // defaults to the instruction-tuning rate
    std::size_t threads = 1;
};

struct RunManifest {
    std::filesystem::path source_path;  // file the manifest was read from
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    CorpusSettings corpus;
    AugmentSettings augment;
    TokenizerSettings tokenizer;
    ModelConfig model;
    train::TrainConfig pretrain = train::TrainConfig::pretrain();
    std::size_t chunk_length = 128;
    train::TrainConfig instruct = train::TrainConfig::instruction();
    std::vector<curriculum::Strategy> strategies{std::begin(curriculum::kAllStrategies), std::end(curriculum::kAllStrategies)};
    std::size_t instruct_epochs = 10;
    std::size_t first_phase_epochs = 5;
    std::size_t instruct_max_length = 256;
    EvalSettings eval;
    report::Standardization standardization = report::Standardization::per_task;
    std::optional<std::filesystem::path> tokenizer_path;
    std::optional<std::filesystem::path> checkpoints_dir;

    // Paths are written relative to relative_to when given.
    Json to_json(const std::filesystem::path& relative_to = {}) const;

    // Hash of the canonical JSON form, recorded in every artifact.
    std::string hash() const;

    std::filesystem::path tokenizer_file() const;
    std::filesystem::path checkpoint_dir() const;
};

class ManifestError : public ConfigError {
public:
    explicit ManifestError(std::vector<std::string> diagnostics);
    std::vector<std::string> diagnostics;
};

// Relative paths resolve against base_dir. Collects every field-level
// problem, including missing input files, before throwing ManifestError.
RunManifest parse_manifest(const Json& j, const std::filesystem::path& base_dir);
RunManifest load_manifest(const std::filesystem::path& path);

// Checks a manifest assembled in code; throws ManifestError.
void validate_manifest(const RunManifest& m);

}  // namespace babyit

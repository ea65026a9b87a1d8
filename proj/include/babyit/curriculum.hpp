#pragma once

// Instruction-tuning curricula: one merged phase over the shuffled union of
// both datasets, two sequential phases in either order, or a single-dataset
// ablation.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "babyit/common.hpp"
#include "babyit/train.hpp"

namespace babyit::curriculum {

enum class Strategy { merged, seq_switch_wiki, seq_wiki_switch, switch_only, wiki_only };

inline constexpr Strategy kAllStrategies[] = {Strategy::merged, Strategy::seq_switch_wiki, Strategy::seq_wiki_switch, Strategy::switch_only,
                                              Strategy::wiki_only};

// Canonical names use dashes ("seq-switch-wiki"); underscores are accepted too.
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

// Model variant name for a strategy, e.g. "it_switch_wiki".
std::string variant_name(Strategy s);

struct Phase {
    std::string dataset_ref;  // "switchboard", "simplewiki" or "merged"
    std::vector<std::string> items;
    std::size_t epochs = 1;
    train::TrainConfig config;  // max_epochs == epochs, seed per phase
};

struct CurriculumPlan {
    Strategy strategy = Strategy::merged;
    std::uint64_t seed = 0;
    std::vector<Phase> phases;

    Json to_json() const;
};

struct PlanOptions {
    std::size_t total_epochs = 10;
    std::size_t first_phase_epochs = 5;  // sequential plans only
};

// switch_items and wiki_items are item ids; they must be disjoint. config
// supplies the shared hyperparameters (its max_epochs is ignored).
CurriculumPlan build_plan(Strategy strategy, const std::vector<std::string>& switch_items, const std::vector<std::string>& wiki_items,
                          const train::TrainConfig& config, std::uint64_t seed, const PlanOptions& options = {});

struct PlannedBatch {
    std::size_t phase = 0;
    std::size_t epoch = 0;  // 1-based within the phase
    std::vector<std::string> items;
};

// Every batch of phase 0 (all epochs) before any batch of phase 1. Within a
// phase the order matches what train::train_run produces for phase.items
// under phase.config.
std::vector<PlannedBatch> iterate_plan(const CurriculumPlan& plan);

}  // namespace babyit::curriculum

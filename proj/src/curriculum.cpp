#include "babyit/curriculum.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

namespace babyit::curriculum {

std::string_view to_string(Strategy s) {
    switch (s) {
        case Strategy::merged:
            return "merged";
        case Strategy::seq_switch_wiki:
            return "seq-switch-wiki";
        case Strategy::seq_wiki_switch:
            return "seq-wiki-switch";
        case Strategy::switch_only:
            return "switch-only";
        case Strategy::wiki_only:
            return "wiki-only";
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    std::string normalized(name);
    std::replace(normalized.begin(), normalized.end(), '_', '-');
    for (auto s : kAllStrategies) {
        if (to_string(s) == normalized) {
            return s;
        }
    }
    throw ConfigError(fmt::format("unknown strategy '{}' (expected merged, seq-switch-wiki, seq-wiki-switch, switch-only or wiki-only)", name));
}

std::string variant_name(Strategy s) {
    switch (s) {
        case Strategy::merged:
            return "it_merged";
        case Strategy::seq_switch_wiki:
            return "it_switch_wiki";
        case Strategy::seq_wiki_switch:
            return "it_wiki_switch";
        case Strategy::switch_only:
            return "it_switch";
        case Strategy::wiki_only:
            return "it_wiki";
    }
    return "it_unknown";
}

Json CurriculumPlan::to_json() const {
    Json phases_json = Json::array();
    for (const auto& p : phases) {
        std::uint64_t h = fnv1a("");
        for (const auto& id : p.items) {
            h = fnv1a(id, h);
            h = fnv1a(std::string_view("\n"), h);
        }
        phases_json.push_back(Json{{"dataset_ref", p.dataset_ref},
                                   {"n_items", p.items.size()},
                                   {"fingerprint", hex64(h)},
                                   {"epochs", p.epochs},
                                   {"seed", p.config.seed},
                                   {"config", p.config.to_json()}});
    }
    return Json{{"strategy", std::string(to_string(strategy))}, {"seed", seed}, {"phases", phases_json}};
}

CurriculumPlan build_plan(Strategy strategy, const std::vector<std::string>& switch_items, const std::vector<std::string>& wiki_items,
                          const train::TrainConfig& config, std::uint64_t seed, const PlanOptions& options) {
    if (options.total_epochs == 0) {
        throw ConfigError("curriculum: total_epochs must be positive");
    }
    const bool uses_switch = strategy != Strategy::wiki_only;
    const bool uses_wiki = strategy != Strategy::switch_only;
    if (uses_switch && switch_items.empty()) {
        throw Error(fmt::format("strategy {} needs a nonempty switchboard dataset", to_string(strategy)));
    }
    if (uses_wiki && wiki_items.empty()) {
        throw Error(fmt::format("strategy {} needs a nonempty simplewiki dataset", to_string(strategy)));
    }
    if (uses_switch && uses_wiki) {
        std::set<std::string> ids(switch_items.begin(), switch_items.end());
        for (const auto& id : wiki_items) {
            if (ids.count(id)) {
                throw Error(fmt::format("item id '{}' appears in both datasets", id));
            }
        }
    }

    CurriculumPlan plan;
    plan.strategy = strategy;
    plan.seed = seed;
    auto make_phase = [&](std::string ref, std::vector<std::string> items, std::size_t epochs) {
        Phase p;
        p.dataset_ref = std::move(ref);
        p.items = std::move(items);
        p.epochs = epochs;
        p.config = config;
        p.config.max_epochs = epochs;
        p.config.seed = derive_seed(seed, plan.phases.size() + 1);
        plan.phases.push_back(std::move(p));
    };
    const bool sequential = strategy == Strategy::seq_switch_wiki || strategy == Strategy::seq_wiki_switch;
    if (sequential && (options.first_phase_epochs == 0 || options.first_phase_epochs >= options.total_epochs)) {
        throw ConfigError("curriculum: first_phase_epochs must leave at least one epoch for each phase");
    }
    switch (strategy) {
        case Strategy::merged: {
            std::vector<std::string> all = switch_items;
            all.insert(all.end(), wiki_items.begin(), wiki_items.end());
            Rng rng(derive_seed(seed, 0));
            rng.shuffle(all);
            make_phase("merged", std::move(all), options.total_epochs);
            break;
        }
        case Strategy::seq_switch_wiki:
            make_phase("switchboard", switch_items, options.first_phase_epochs);
            make_phase("simplewiki", wiki_items, options.total_epochs - options.first_phase_epochs);
            break;
        case Strategy::seq_wiki_switch:
            make_phase("simplewiki", wiki_items, options.first_phase_epochs);
            make_phase("switchboard", switch_items, options.total_epochs - options.first_phase_epochs);
            break;
        case Strategy::switch_only:
            make_phase("switchboard", switch_items, options.total_epochs);
            break;
        case Strategy::wiki_only:
            make_phase("simplewiki", wiki_items, options.total_epochs);
            break;
    }
    return plan;
}

std::vector<PlannedBatch> iterate_plan(const CurriculumPlan& plan) {
    std::vector<PlannedBatch> out;
    for (std::size_t pi = 0; pi < plan.phases.size(); ++pi) {
        const auto& phase = plan.phases[pi];
        const auto n = phase.items.size();
        const auto bs = phase.config.batch_size;
        for (std::size_t epoch = 1; epoch <= phase.epochs; ++epoch) {
            const auto order = train::epoch_order(n, phase.config.seed, epoch);
            for (std::size_t begin = 0; begin < n; begin += bs) {
                PlannedBatch b{pi, epoch, {}};
                for (std::size_t i = begin; i < std::min(n, begin + bs); ++i) {
                    b.items.push_back(phase.items[order[i]]);
                }
                out.push_back(std::move(b));
            }
        }
    }
    return out;
}

}  // namespace babyit::curriculum

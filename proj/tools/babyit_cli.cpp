// babyit: runs the instruction-tuning experiment stages from one manifest.
//
//   babyit fixtures --dir work [--small]
//   babyit run --manifest work/manifest.json
//   babyit instruct-tune --manifest m.json --strategy seq-switch-wiki
//   babyit report --manifest m.json --results eval.csv

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "babyit/manifest.hpp"
#include "babyit/pipeline.hpp"

namespace {

using namespace babyit;

struct Args {
    std::string manifest;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> strategy;
    std::optional<std::string> backend_url;
    bool stub = false;
    std::optional<int> max_retries;
    std::optional<int> timeout_ms;
    std::optional<std::string> results;
    std::string fixture_dir;
    bool small = false;
};

void add_manifest_options(CLI::App* sub, Args& a) {
    sub->add_option("-m,--manifest", a.manifest, "Run manifest (JSON)")->required();
    sub->add_option("--seed", a.seed, "Override the manifest seed");
    sub->add_option("--out-dir", a.out_dir, "Override the output directory");
}

int run(const std::string& command, const Args& a) {
    if (command == "fixtures") {
        const auto path = pipeline::write_fixture_manifest(a.fixture_dir, a.seed.value_or(1), a.small);
        std::cout << path.string() << "\n";
        return 0;
    }
    RunManifest m = load_manifest(a.manifest);
    if (a.seed) {
        m.seed = *a.seed;
    }
    if (a.out_dir) {
        m.out_dir = *a.out_dir;
    }
    pipeline::RunOptions opts;
    if (a.strategy) {
        try {
            opts.strategy = curriculum::parse_strategy(*a.strategy);
        } catch (const ConfigError& e) {
            throw ManifestError({fmt::format("--strategy: {}", e.what())});
        }
    }
    opts.backend_url = a.backend_url;
    opts.force_stub = a.stub;
    opts.max_retries = a.max_retries;
    opts.timeout_ms = a.timeout_ms;
    if (a.results) {
        opts.results_csv = *a.results;
    }
    pipeline::Pipeline p(std::move(m), opts);
    if (command == "validate") {
        std::cout << "manifest ok, hash " << p.manifest_hash() << "\n";
        return 0;
    }
    std::cerr << fmt::format("manifest hash {}\n", p.manifest_hash());
    if (command == "run") {
        p.run_all();
    } else {
        p.run_stage(command);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Instruction-tuning experiments for small language models"};
    app.require_subcommand(1);
    Args a;

    std::vector<std::pair<std::string, std::string>> commands = {
        {"build-corpus", "Clean the pretraining corpus and extract dialogue pairs"},
        {"augment", "Generate question-answer items from articles"},
        {"train-tokenizer", "Train the byte-level BPE tokenizer"},
        {"pretrain", "Pretrain the language model"},
        {"instruct-tune", "Instruction-tune the pretrained model"},
        {"evaluate", "Zero-shot minimal-pair and reading-time evaluation"},
        {"finetune-eval", "Fine-tune a classifier head per model"},
        {"report", "Z-scores, model index and box plot"},
        {"run", "Every stage in order"},
        {"validate", "Check the manifest and print its hash"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        add_manifest_options(sub, a);
        if (name == "augment" || name == "run") {
            sub->add_option("--backend-url", a.backend_url, "Generation backend URL");
            sub->add_flag("--stub", a.stub, "Use the deterministic stub backend");
            sub->add_option("--max-retries", a.max_retries)->check(CLI::NonNegativeNumber);
            sub->add_option("--timeout-ms", a.timeout_ms)->check(CLI::PositiveNumber);
        }
        if (name == "instruct-tune") {
            sub->add_option("--strategy", a.strategy, "merged|seq-switch-wiki|seq-wiki-switch|switch-only|wiki-only")
                ->check(CLI::IsMember({"merged", "seq-switch-wiki", "seq-wiki-switch", "switch-only", "wiki-only"}));
        }
        if (name == "report") {
            sub->add_option("--results", a.results, "Results CSV to aggregate")->check(CLI::ExistingFile);
        }
    }
    auto* fixtures = app.add_subcommand("fixtures", "Write synthetic fixture inputs and a manifest");
    fixtures->add_option("--dir", a.fixture_dir, "Target directory")->required();
    fixtures->add_option("--seed", a.seed, "Fixture seed");
    fixtures->add_flag("--small", a.small, "Sizes for a quick end-to-end run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        return run(command, a);
    } catch (const ManifestError& e) {
        std::cerr << "invalid manifest:\n";
        for (const auto& d : e.diagnostics) {
            std::cerr << "  " << d << "\n";
        }
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << fmt::format("{} failed: {}\n", command, e.what());
        return 1;
    }
}

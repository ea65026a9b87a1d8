// Acceptance checks: one PASS/FAIL line per criterion. Exit status is the
// number of failures.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "babyit/corpus.hpp"
#include "babyit/curriculum.hpp"
#include "babyit/fixtures.hpp"
#include "babyit/pipeline.hpp"
#include "babyit/regression.hpp"
#include "babyit/report.hpp"
#include "oracles.hpp"

using namespace babyit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

fs::path work_dir() {
    static const fs::path dir = [] {
        const auto d = fs::temp_directory_path() / "babyit_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.starts_with("#")) {
            continue;
        }
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
            cells.push_back(line.substr(start, pos - start));
        }
        cells.push_back(line.substr(start));
        rows.push_back(std::move(cells));
    }
    return rows;
}

// Validation loss column of a loss CSV, in file order.
std::vector<double> val_losses(const fs::path& path) {
    const auto rows = read_csv_rows(path);
    const auto col = static_cast<std::size_t>(std::find(rows.at(0).begin(), rows.at(0).end(), "val_loss") - rows.at(0).begin());
    std::vector<double> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        out.push_back(std::stod(rows[r].at(col)));
    }
    return out;
}

// Two complete desk-scale runs from one manifest, shared by the learning and
// end-to-end criteria.
struct DeskRuns {
    fs::path a, b;
    std::string error;
};

const DeskRuns& desk_runs() {
    static const DeskRuns runs = [] {
        DeskRuns r;
        try {
            const auto manifest_path = pipeline::write_fixture_manifest(work_dir() / "desk", 1, false);
            r.a = work_dir() / "desk_run_a";
            r.b = work_dir() / "desk_run_b";
            for (const auto& dir : {r.a, r.b}) {
                auto m = load_manifest(manifest_path);
                m.out_dir = dir;
                std::ostringstream log;
                pipeline::RunOptions opts;
                opts.force_stub = true;
                opts.log = &log;
                pipeline::Pipeline p(std::move(m), opts);
                p.run_all();
            }
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        return r;
    }();
    return runs;
}

Outcome parameter_counts() {
    Outcome o;
    const auto a = param_count(ModelConfig::llama140m()), b = param_count(ModelConfig::llama100m());
    o.require(a == 140'231'872, fmt::format("140M config gives {}", a));
    o.require(b == 100'684'288, fmt::format("100M config gives {}", b));
    o.detail = o.pass ? fmt::format("{} and {}", a, b) : o.detail;
    return o;
}

Outcome word_accounting() {
    Outcome o;
    const auto total = corpus::accounting_report(91'000'000, 8);
    const double eff = corpus::effective_words(728'000'000 + 180'000'000, 0.9);
    o.require(total == 728'000'000, fmt::format("91M x 8 gives {}", total));
    o.require(std::abs(eff - 817e6) / 817e6 <= 0.01, fmt::format("effective words {}", eff));
    if (o.pass) {
        o.detail = fmt::format("{} words, effective {:.4g}", total, eff);
    }
    return o;
}

Outcome gradient_check() {
    Outcome o;
    ModelConfig c;
    c.vocab_size = 13;
    c.hidden_size = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.max_length = 16;
    c.init_std = 0.4;
    auto p = Parameters<double>::init(c, 21);
    o.require(p.count() <= 5000, fmt::format("{} parameters", p.count()));
    const std::vector<train::Example> data{{{1, 5, 2, 8, 3, 3, 12, 0}, {0, 1, 1, 0, 1, 1, 0, 1}}, {{4, 4, 9, 1, 7}, {0, 0, 1, 1, 1}}};
    const auto gc = oracle::gradcheck(p, data);
    o.require(gc.max_relative_error < 1e-6, fmt::format("relative error {:.3e} in {}", gc.max_relative_error, gc.worst_tensor));
    if (o.pass) {
        o.detail = fmt::format("{} parameters, max relative error {:.3e}", p.count(), gc.max_relative_error);
    }
    return o;
}

Outcome loss_masking() {
    Outcome o;
    ModelConfig c;
    c.vocab_size = 13;
    c.hidden_size = 8;
    c.num_heads = 2;
    c.num_layers = 2;
    c.max_length = 16;
    c.init_std = 0.4;
    auto p = Parameters<double>::init(c, 5);
    Rng rng(17);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        train::Example e;
        const auto len = 3 + rng.below(8);
        for (std::size_t t = 0; t < len; ++t) {
            e.ids.push_back(static_cast<TokenId>(rng.below(13)));
            e.mask.push_back(t > 0 && rng.below(3) != 0);
        }
        e.mask[len - 1] = 1;
        const auto logits = forward_logits(p, e.ids).logits;
        worst = std::max(worst, std::abs(train::masked_cross_entropy(logits, e.ids, e.mask) -
                                         oracle::masked_loss(oracle::to_mat(logits), e.ids, e.mask)));
    }
    o.require(worst <= 1e-6, fmt::format("masked loss differs by {:.3e}", worst));

    const std::vector<TokenId> ids{2, 7, 1, 1, 9, 4, 0, 6};
    const std::vector<std::uint8_t> mask{0, 0, 1, 0, 1, 0, 0, 1};
    auto grads = [&](const std::vector<TokenId>& targets) {
        p.zero_grad();
        ag::Tape<double> tape;
        const auto vars = forward(tape, p, ids);
        tape.backward(train::masked_cross_entropy(tape, vars.logits, targets, mask, 3.0));
        std::vector<ag::Matrix<double>> out;
        for (auto& t : p.named()) {
            out.push_back(t.tensor->grad);
        }
        return out;
    };
    const auto base = grads(ids);
    std::size_t perturbations = 0;
    for (std::size_t t = 1; t < ids.size(); ++t) {
        if (mask[t]) {
            continue;
        }
        for (TokenId v = 0; v < 13; ++v) {
            auto targets = ids;
            targets[t] = v;
            const auto g = grads(targets);
            for (std::size_t i = 0; i < g.size(); ++i) {
                o.require(std::memcmp(g[i].data(), base[i].data(), sizeof(double) * static_cast<std::size_t>(g[i].size())) == 0,
                          fmt::format("target at unmasked position {} changed a gradient", t));
            }
            ++perturbations;
        }
    }
    if (o.pass) {
        o.detail = fmt::format("max loss error {:.2e}, {} perturbations bitwise invariant", worst, perturbations);
    }
    return o;
}

Outcome scheduler_keypoints() {
    Outcome o;
    const auto lin = train::TrainConfig::pretrain();
    const std::size_t total = 60000;
    o.require(train::lr_at_step(lin, 0, total) == 0.0, "linear lr(0) != 0");
    o.require(std::abs(train::lr_at_step(lin, 5000, total) - 2e-4) <= 1e-12, "linear lr(5000) != 2e-4");
    o.require(train::lr_at_step(lin, total, total) == 0.0, "linear lr(total) != 0");
    double worst = 0.0;
    for (std::size_t s = 0; s <= total; s += 7) {
        worst = std::max(worst, std::abs(train::lr_at_step(lin, s, total) - oracle::lr(lin, s, total)));
    }
    auto cos = train::TrainConfig::instruction();
    for (std::size_t cycles : {1, 2, 3}) {
        cos.num_cycles = cycles;
        const std::size_t span = 2000;
        const std::size_t steps = cos.warmup_steps + span * cycles;
        for (std::size_t k = 0; k < cycles; ++k) {
            const auto at = cos.warmup_steps + k * span;
            o.require(std::abs(train::lr_at_step(cos, at, steps) - cos.initial_lr) <= 1e-12,
                      fmt::format("cosine cycle {} of {} does not start at the peak", k, cycles));
        }
        for (std::size_t s = 0; s <= steps; ++s) {
            worst = std::max(worst, std::abs(train::lr_at_step(cos, s, steps) - oracle::lr(cos, s, steps)));
        }
    }
    o.require(worst <= 1e-12, fmt::format("schedule deviates from formula by {:.3e}", worst));
    if (o.pass) {
        o.detail = fmt::format("max deviation {:.2e}", worst);
    }
    return o;
}

Outcome curriculum_laws() {
    using namespace curriculum;
    Outcome o;
    std::vector<std::string> s, w;
    for (int i = 0; i < 23; ++i) {
        s.push_back("s" + std::to_string(i));
    }
    for (int i = 0; i < 17; ++i) {
        w.push_back("w" + std::to_string(i));
    }
    auto cfg = train::TrainConfig::instruction();
    cfg.batch_size = 4;
    auto uni = s;
    uni.insert(uni.end(), w.begin(), w.end());
    std::sort(uni.begin(), uni.end());

    std::map<std::size_t, std::vector<std::string>> per_epoch;
    for (const auto& b : iterate_plan(build_plan(Strategy::merged, s, w, cfg, 9, {10, 5}))) {
        per_epoch[b.epoch].insert(per_epoch[b.epoch].end(), b.items.begin(), b.items.end());
    }
    o.require(per_epoch.size() == 10, "merged plan does not run 10 epochs");
    for (auto& [e, items] : per_epoch) {
        std::sort(items.begin(), items.end());
        o.require(items == uni, fmt::format("merged epoch {} is not a permutation of the union", e));
    }

    for (auto strat : {Strategy::seq_switch_wiki, Strategy::seq_wiki_switch}) {
        const std::string first = strat == Strategy::seq_switch_wiki ? "s" : "w";
        bool seen_second = false;
        for (const auto& b : iterate_plan(build_plan(strat, s, w, cfg, 9, {10, 5}))) {
            seen_second = seen_second || b.phase == 1;
            for (const auto& id : b.items) {
                o.require((id.substr(0, 1) == first) == (b.phase == 0), fmt::format("{} mixes datasets", to_string(strat)));
            }
            o.require(!(seen_second && b.phase == 0), fmt::format("{} returns to the first phase", to_string(strat)));
        }
    }

    for (auto strat : kAllStrategies) {
        const auto a = iterate_plan(build_plan(strat, s, w, cfg, 31, {10, 5}));
        const auto b = iterate_plan(build_plan(strat, s, w, cfg, 31, {10, 5}));
        bool same = a.size() == b.size();
        for (std::size_t i = 0; same && i < a.size(); ++i) {
            same = a[i].items == b[i].items && a[i].phase == b[i].phase && a[i].epoch == b[i].epoch;
        }
        o.require(same, fmt::format("{} is not reproducible", to_string(strat)));
    }
    if (o.pass) {
        o.detail = "permutation, isolation and reproducibility hold for all strategies";
    }
    return o;
}

Outcome pipeline_fidelity() {
    using namespace corpus;
    Outcome o;
    const std::vector<DialogueTurn> turns{{Speaker::A, "A1", 0}, {Speaker::B, "B1", 1}, {Speaker::A, "A2", 2}, {Speaker::B, "B2", 3}};
    const auto pairs = extract_prompt_reply_pairs(turns, "d");
    const std::vector<std::pair<std::string, std::string>> expected{{"A1", "B1"}, {"B1", "A2"}, {"A2", "B2"}};
    o.require(pairs.size() == 3, fmt::format("{} pairs from the four-turn fixture", pairs.size()));
    for (std::size_t i = 0; i < std::min(pairs.size(), expected.size()); ++i) {
        o.require(pairs[i].prompt == expected[i].first && pairs[i].reply == expected[i].second, fmt::format("pair {} differs", i));
    }
    o.require(!clean_document("ok then", StripSet::none(), 2), "two-word document kept");
    o.require(!clean_document("", StripSet::none(), 2), "empty document kept");
    o.require(clean_document("ok then go", StripSet::none(), 2).has_value(), "three-word document dropped");
    for (std::size_t n = 2; n <= 64; ++n) {
        std::vector<DialogueTurn> alt;
        for (std::size_t i = 0; i < n; ++i) {
            alt.push_back({i % 2 == 0 ? Speaker::A : Speaker::B, "turn " + std::to_string(i), i});
        }
        const auto p = extract_prompt_reply_pairs(alt);
        o.require(p.size() == n - 1, fmt::format("{} turns give {} pairs", n, p.size()));
    }
    if (o.pass) {
        o.detail = "fixture pairs, discard rule and n-1 law hold";
    }
    return o;
}

Outcome evaluation_math() {
    using namespace eval;
    Outcome o;
    const auto items = fixtures::random_pair_items(1000, 3);
    const auto tok = Tokenizer::train(fixtures::child_directed_corpus(2000, 1), 300);
    const HashScorer hash(99);
    const auto results = evaluate_suite(hash, tok, items, "hash");
    std::size_t correct = 0;
    for (const auto& it : items) {
        correct += oracle::forced_choice(hash, tok, it) == it.correct_index;
    }
    o.require(results.size() == 1 && results[0].value == static_cast<double>(correct) / 1000.0, "accuracy differs from the recount");

    const auto docs = fixtures::child_directed_corpus(1500, 4);
    const auto tok2 = Tokenizer::train(docs, 300);
    ModelConfig mc;
    mc.vocab_size = 300;
    mc.hidden_size = 16;
    mc.num_heads = 2;
    mc.num_layers = 1;
    mc.max_length = 256;
    mc.init_std = 0.2;
    const auto model = Model::init(mc, 3);
    const std::string text = docs[0] + " " + docs[1];
    std::vector<std::string> words;
    for (auto wv : split_whitespace(text)) {
        words.emplace_back(wv);
    }
    const auto s = word_surprisals(ModelScorer(model), tok2, words);
    std::vector<TokenId> ids{SpecialTokens::bos};
    const auto body = tok2.encode(join(words, " "));
    ids.insert(ids.end(), body.begin(), body.end());
    const double gap = std::abs(std::accumulate(s.begin(), s.end(), 0.0) + sequence_logprob(model, ids));
    o.require(gap <= 1e-6, fmt::format("surprisal sum differs by {:.3e}", gap));

    Rng rng(1);
    std::vector<ReadingTimeRow> rows;
    std::vector<double> sur;
    for (int i = 0; i < 200; ++i) {
        sur.push_back(rng.normal(5.0, 2.0));
        rows.push_back({"w", 200.0 + 7.0 * sur.back(), 1.0 + static_cast<double>(rng.below(10)), rng.normal(0.0, 2.0)});
    }
    const auto fit = delta_r2(rows, sur);
    o.require(std::abs(fit.delta_r2 - (1.0 - fit.r2_baseline)) <= 1e-9, "perfect-fit delta R2 is not 1 - r2_baseline");

    Rng rng2(4);
    std::size_t fixtures_run = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = 5 + rng2.below(60);
        std::vector<ReadingTimeRow> rs;
        std::vector<double> ss;
        for (std::size_t i = 0; i < n; ++i) {
            const double len = static_cast<double>(1 + rng2.below(12));
            ss.push_back(rng2.below(4) == 0 ? len * 0.5 : rng2.normal(0.0, 1.0));
            rs.push_back({"w", rng2.normal(300.0, 40.0), len, rng2.normal(0.0, 3.0)});
        }
        try {
            o.require(delta_r2(rs, ss).delta_r2 >= 0.0, fmt::format("negative delta R2 on random fixture {}", trial));
            ++fixtures_run;
        } catch (const stats::CollinearityError&) {
        }
    }
    if (o.pass) {
        o.detail = fmt::format("accuracy {:.3f} matches recount, additivity gap {:.2e}, {} random fixtures non-negative",
                               static_cast<double>(correct) / 1000.0, gap, fixtures_run);
    }
    return o;
}

Outcome aggregation() {
    using namespace report;
    Outcome o;
    const auto golden = [](const std::string& name) { return read_file(fs::path(BABYIT_GOLDEN_DIR) / name); };
    const auto matrix = ScoreMatrix::from_results(eval::parse_results_csv(golden("report_results.csv")));
    const auto z = zscores(matrix);
    for (std::size_t t = 0; t < z.tasks.size(); ++t) {
        oracle::Vec col;
        for (const auto& row : z.z) {
            if (row[t]) {
                col.push_back(*row[t]);
            }
        }
        const auto [mean, sd] = oracle::mean_std(col);
        o.require(std::abs(mean) <= 1e-9 && std::abs(sd - 1.0) <= 1e-9, fmt::format("column {} not standardized", z.tasks[t]));
    }
    const auto two = zscores(ScoreMatrix::from_results({{"t", "a", eval::Metric::accuracy, 0.5, 1, 0}, {"t", "b", eval::Metric::accuracy, 0.7, 1, 0}}));
    o.require(std::abs(*two.z[0][0] + 1.0) <= 1e-12 && std::abs(*two.z[1][0] - 1.0) <= 1e-12, "two-point column is not -1, +1");

    auto close = [](const std::string& actual, const std::string& expected) {
        std::istringstream a(actual), e(expected);
        std::string la, le;
        while (std::getline(e, le)) {
            if (!std::getline(a, la)) {
                return false;
            }
            std::istringstream ca(la), ce(le);
            std::string xa, xe;
            while (std::getline(ce, xe, ',')) {
                if (!std::getline(ca, xa, ',')) {
                    return false;
                }
                char* end = nullptr;
                const double ve = std::strtod(xe.c_str(), &end);
                if (!xe.empty() && xe.find(';') == std::string::npos && end == xe.c_str() + xe.size()) {
                    if (std::abs(std::stod(xa) - ve) > 1e-9) {
                        return false;
                    }
                } else if (xe.find(';') == std::string::npos && xa != xe) {
                    return false;
                } else if (std::count(xa.begin(), xa.end(), ';') != std::count(xe.begin(), xe.end(), ';')) {
                    return false;
                }
            }
        }
        return !std::getline(a, la);
    };
    o.require(close(box_stats_csv(z), golden("report_box_stats.csv")), "box statistics differ from the reference");
    o.require(close(zscores_csv(matrix, z), golden("report_zscores.csv")), "z-scores differ from the reference");
    const auto svg = box_plot_svg(z, "Task z-scores per model", "fixture");
    o.require(svg == box_plot_svg(zscores(matrix), "Task z-scores per model", "fixture"), "SVG differs between renders");
    o.require(svg == golden("report_box_plot.svg"), "SVG differs from the frozen file");
    if (o.pass) {
        o.detail = fmt::format("{} columns standardized, references and SVG match", z.tasks.size());
    }
    return o;
}

Outcome desk_learning() {
    Outcome o;
    const auto& runs = desk_runs();
    o.require(runs.error.empty(), "desk run failed: " + runs.error);
    if (!o.pass) {
        return o;
    }
    const auto m = load_manifest(work_dir() / "desk" / "manifest.json");
    o.require(m.model.num_layers == 2 && m.model.hidden_size == 64 && m.model.vocab_size == 512, "desk preset is not the tiny config");
    o.require(m.pretrain.max_epochs == 3, "desk preset does not pretrain for 3 epochs");
    const auto pre = val_losses(runs.a / "train" / "pretrain_loss.csv");
    const auto it = val_losses(runs.a / "instruct" / (curriculum::variant_name(curriculum::Strategy::wiki_only) + "_loss.csv"));
    const std::size_t qa = read_csv_rows(runs.a / "augment" / "qa.jsonl").size() - 1;
    o.require(pre.size() == 4, "pretraining did not log 3 epochs");
    o.require(!it.empty(), "no instruction-tuning log");
    if (!o.pass) {
        return o;
    }
    const double pre_drop = 1.0 - pre.back() / pre.front();
    const double it_drop = 1.0 - it.back() / it.front();
    o.require(pre_drop >= 0.20, fmt::format("pretraining validation loss fell {:.1f}%", 100 * pre_drop));
    o.require(it_drop >= 0.10, fmt::format("instruction validation loss fell {:.1f}%", 100 * it_drop));
    if (o.pass) {
        o.detail = fmt::format("pretrain val {:.3f} -> {:.3f} (-{:.1f}%), {} QA items, instruct val {:.3f} -> {:.3f} (-{:.1f}%)", pre.front(),
                               pre.back(), 100 * pre_drop, qa, it.front(), it.back(), 100 * it_drop);
    }
    return o;
}

Outcome end_to_end() {
    Outcome o;
    const auto& runs = desk_runs();
    o.require(runs.error.empty(), "desk run failed: " + runs.error);
    if (!o.pass) {
        return o;
    }
    const auto a = pipeline::artifact_hashes(runs.a), b = pipeline::artifact_hashes(runs.b);
    for (auto v : curriculum::kAllStrategies) {
        o.require(a.count("checkpoints/" + curriculum::variant_name(v) + ".ckpt") == 1, "missing variant " + curriculum::variant_name(v));
    }
    for (const char* f : {"corpus/ledger.csv", "tokenizer/tokenizer.json", "checkpoints/pretrained.ckpt", "eval/results.csv",
                          "report/zscores.csv", "report/box_plot.svg"}) {
        o.require(a.count(f) == 1, fmt::format("missing {}", f));
    }
    std::size_t differing = 0;
    std::string first;
    for (const auto& [k, h] : a) {
        const auto it = b.find(k);
        if (it == b.end() || it->second != h) {
            first = first.empty() ? k : first;
            ++differing;
        }
    }
    o.require(a.size() == b.size() && differing == 0, fmt::format("{} artifacts differ, first {}", differing, first));
    if (o.pass) {
        o.detail = fmt::format("{} artifacts identical across two runs", a.size());
    }
    return o;
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"parameter counts", parameter_counts},   {"word accounting", word_accounting},   {"gradient check", gradient_check},
        {"loss masking", loss_masking},           {"scheduler keypoints", scheduler_keypoints}, {"desk-scale learning", desk_learning},
        {"curriculum laws", curriculum_laws},     {"pipeline fidelity", pipeline_fidelity}, {"evaluation math", evaluation_math},
        {"aggregation", aggregation},             {"end-to-end", end_to_end},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !o.pass;
        std::cout << fmt::format("{} {:>2} {}: {} ({:.1f}s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail, secs)
                  << std::flush;
    }
    return failures;
}

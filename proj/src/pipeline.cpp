#include "babyit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include <fmt/format.h>

#include "babyit/augment.hpp"
#include "babyit/checkpoint.hpp"
#include "babyit/fixtures.hpp"
#include "babyit/report.hpp"
#include "babyit/tokenizer.hpp"

namespace babyit::pipeline {

namespace fs = std::filesystem;

namespace {

std::vector<corpus::Document> read_documents(const fs::path& path) {
    std::vector<corpus::Document> out;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(corpus::document_from_json(j));
    }
    return out;
}

std::vector<corpus::PromptReplyPair> read_pairs(const fs::path& path) {
    std::vector<corpus::PromptReplyPair> out;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(corpus::pair_from_json(j));
    }
    return out;
}

std::vector<augment::QAItem> read_qa(const fs::path& path) {
    std::vector<augment::QAItem> out;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(augment::qa_from_json(j));
    }
    return out;
}

std::string pair_id(const corpus::PromptReplyPair& p) {
    return fmt::format("sw:{}/{}", p.dialogue_id, p.window_index);
}

std::string qa_id(const augment::QAItem& q) {
    return fmt::format("qa:{}/{}", q.article_id, q.pair_index);
}

void require_file(const fs::path& path, std::string_view producer) {
    if (!fs::is_regular_file(path)) {
        throw Error(fmt::format("missing {}; run the {} stage first", path.string(), producer));
    }
}

}  // namespace

Pipeline::Pipeline(RunManifest manifest, RunOptions options) : manifest_(std::move(manifest)), options_(std::move(options)) {
    if (const char* env = std::getenv(kBackendUrlEnv); env && *env) {
        manifest_.augment.url = env;
        manifest_.augment.backend = "http";
    }
    if (options_.backend_url) {
        manifest_.augment.url = *options_.backend_url;
        manifest_.augment.backend = "http";
    }
    if (options_.force_stub) {
        manifest_.augment.backend = "stub";
    }
    if (options_.max_retries) {
        manifest_.augment.max_retries = *options_.max_retries;
    }
    if (options_.timeout_ms) {
        manifest_.augment.timeout_ms = *options_.timeout_ms;
    }
    validate_manifest(manifest_);
    hash_ = manifest_.hash();
}

std::ostream& Pipeline::log() const {
    return options_.log ? *options_.log : std::cerr;
}

fs::path Pipeline::out(const std::string& relative) const {
    return manifest_.out_dir / relative;
}

std::uint64_t Pipeline::stage_seed(std::string_view stage) const {
    return derive_seed(manifest_.seed, fnv1a(stage));
}

Json Pipeline::provenance(std::string_view stage) const {
    return Json{{"stage", std::string(stage)}, {"manifest_hash", hash_}, {"seed", manifest_.seed}};
}

void Pipeline::write_text(const fs::path& path, std::string_view body) {
    write_file(path, body);
    written_.push_back(path);
}

void Pipeline::write_csv(const fs::path& path, std::string_view stage, std::string_view body) {
    write_text(path, fmt::format("# provenance: {}\n{}", provenance(stage).dump(), body));
}

void Pipeline::write_jsonl(const fs::path& path, std::string_view stage, const std::vector<Json>& records) {
    std::vector<Json> all{Json{{"_provenance", provenance(stage)}}};
    all.insert(all.end(), records.begin(), records.end());
    write_text(path, to_jsonl(all));
}

void Pipeline::write_json(const fs::path& path, std::string_view stage, Json j) {
    j["provenance"] = provenance(stage);
    write_text(path, j.dump(2) + "\n");
}

void Pipeline::finish_stage(std::string_view stage, Json extra) {
    Json artifacts = Json::object();
    for (const auto& p : written_) {
        artifacts[p.lexically_relative(manifest_.out_dir).generic_string()] = hash_file(p);
    }
    written_.clear();
    auto record = provenance(stage);
    record["artifacts"] = artifacts;
    for (auto& [k, v] : extra.items()) {
        record[k] = v;
    }
    write_file(out(fmt::format("provenance/{}.json", stage)), record.dump(2) + "\n");
    log() << fmt::format("[{}] done, {} artifacts\n", stage, artifacts.size());
}

void Pipeline::build_corpus() {
    constexpr std::string_view stage = "build-corpus";
    const auto& c = manifest_.corpus;
    const auto strip = corpus::StripSet::defaults();
    corpus::WordBudgetLedger ledger(c.word_cap, c.enforce_budget);

    std::vector<corpus::Document> docs;
    std::size_t discarded = 0, rejected = 0;
    for (const auto& input : c.pretrain) {
        const auto blocks = corpus::read_text_blocks(input.path);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto doc = corpus::clean_document(blocks[i], strip, c.min_words);
            if (!doc) {
                ++discarded;
                continue;
            }
            doc->id = fmt::format("{}/{}/{:06}", corpus::to_string(input.source), input.path.stem().string(), i);
            doc->source = input.source;
            if (ledger.enforce_budget(*doc, corpus::BudgetKind::pretrain) == corpus::BudgetDecision::reject) {
                ++rejected;
                continue;
            }
            docs.push_back(std::move(*doc));
        }
    }
    corpus::canonicalize(docs);
    const auto split = corpus::split_train_val(docs, c.split_fraction, derive_seed(stage_seed(stage), 1));
    auto to_records = [](const auto& items) {
        std::vector<Json> out;
        for (const auto& x : items) {
            out.push_back(corpus::to_json(x));
        }
        return out;
    };
    write_jsonl(out("corpus/pretrain_train.jsonl"), stage, to_records(split.train));
    write_jsonl(out("corpus/pretrain_validation.jsonl"), stage, to_records(split.validation));

    std::vector<corpus::PromptReplyPair> pairs;
    std::size_t merged_turns = 0;
    for (const auto& d : corpus::read_dialogues(c.dialogues)) {
        const auto turns = corpus::merge_speaker_turns(d.turns);
        merged_turns += d.turns.size() - turns.size();
        std::string all_text;
        for (const auto& t : turns) {
            all_text += t.text + " ";
        }
        corpus::Document as_doc{d.id, corpus::Source::switchboard, all_text, corpus::count_words(all_text)};
        if (ledger.enforce_budget(as_doc, corpus::BudgetKind::instruction_only) == corpus::BudgetDecision::reject) {
            ++rejected;
            continue;
        }
        auto p = corpus::extract_prompt_reply_pairs(turns, d.id);
        pairs.insert(pairs.end(), p.begin(), p.end());
    }
    const auto pair_split = c.dialogue_level_split
                                ? corpus::split_train_val_grouped<corpus::PromptReplyPair>(
                                      pairs, [](const corpus::PromptReplyPair& p) { return p.dialogue_id; }, c.split_fraction,
                                      derive_seed(stage_seed(stage), 2))
                                : corpus::split_train_val(pairs, c.split_fraction, derive_seed(stage_seed(stage), 2));
    write_jsonl(out("corpus/switchboard_train.jsonl"), stage, to_records(pair_split.train));
    write_jsonl(out("corpus/switchboard_validation.jsonl"), stage, to_records(pair_split.validation));

    std::vector<corpus::Document> articles;
    const auto blocks = corpus::read_text_blocks(c.articles);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto doc = corpus::clean_document(blocks[i], strip, c.min_words);
        if (!doc) {
            ++discarded;
            continue;
        }
        doc->id = fmt::format("simplewiki/{:06}", i);
        doc->source = corpus::Source::simplewiki;
        articles.push_back(std::move(*doc));
    }
    write_jsonl(out("corpus/articles.jsonl"), stage, to_records(articles));
    write_csv(out("corpus/ledger.csv"), stage, ledger.to_csv());

    const auto counts = corpus::count_pair_words(pairs);
    Json stats{{"pretrain_documents", docs.size()},
               {"pretrain_train", split.train.size()},
               {"pretrain_validation", split.validation.size()},
               {"discarded_short", discarded},
               {"rejected_budget", rejected},
               {"merged_turns", merged_turns},
               {"pairs", counts.items},
               {"pairs_unique", counts.unique_items},
               {"pair_words", counts.words},
               {"pair_words_deduplicated", counts.words_deduplicated},
               {"articles", articles.size()}};
    write_json(out("corpus/stats.json"), stage, stats);
    log() << fmt::format("[{}] {} documents ({} discarded), {} pairs, {} articles\n", stage, docs.size(), discarded, pairs.size(),
                         articles.size());
    finish_stage(stage);
}

void Pipeline::augment() {
    constexpr std::string_view stage = "augment";
    require_file(out("corpus/articles.jsonl"), "build-corpus");
    auto articles = read_documents(out("corpus/articles.jsonl"));
    if (manifest_.corpus.augment_target_words > 0) {
        articles = augment::sample_articles(articles, manifest_.corpus.augment_target_words, derive_seed(stage_seed(stage), 1));
    }
    std::unique_ptr<augment::GenerationBackend> backend;
    if (manifest_.augment.backend == "http") {
        backend = std::make_unique<augment::HttpBackend>(manifest_.augment.url, std::chrono::milliseconds(manifest_.augment.timeout_ms));
    } else {
        backend = std::make_unique<augment::StubBackend>();
    }
    augment::GenerationOptions options;
    options.max_retries = manifest_.augment.max_retries;
    const auto result = augment::augment_articles(articles, *backend, options, manifest_.augment.max_in_flight);
    if (result.items.size() < 2) {
        throw Error("augment: fewer than 2 QA items generated");
    }
    const auto split = corpus::split_train_val(result.items, manifest_.corpus.split_fraction, derive_seed(stage_seed(stage), 2));
    auto to_records = [](const std::vector<augment::QAItem>& items) {
        std::vector<Json> out;
        for (const auto& x : items) {
            out.push_back(augment::to_json(x));
        }
        return out;
    };
    write_jsonl(out("augment/qa.jsonl"), stage, to_records(result.items));
    write_jsonl(out("augment/qa_train.jsonl"), stage, to_records(split.train));
    write_jsonl(out("augment/qa_validation.jsonl"), stage, to_records(split.validation));
    std::vector<Json> skipped;
    for (const auto& s : result.skipped) {
        skipped.push_back(Json{{"article_id", s.article_id}, {"reason", s.reason}});
    }
    write_jsonl(out("augment/skipped.jsonl"), stage, skipped);
    log() << fmt::format("[{}] {} articles -> {} QA items, {} skipped ({} backend)\n", stage, articles.size(), result.items.size(),
                         result.skipped.size(), manifest_.augment.backend);
    finish_stage(stage, Json{{"backend", manifest_.augment.backend}});
}

void Pipeline::train_tokenizer() {
    constexpr std::string_view stage = "train-tokenizer";
    for (const char* f : {"corpus/pretrain_train.jsonl", "corpus/pretrain_validation.jsonl", "corpus/switchboard_train.jsonl",
                          "corpus/switchboard_validation.jsonl"}) {
        require_file(out(f), "build-corpus");
    }
    std::vector<std::string> texts;
    for (const char* f : {"corpus/pretrain_train.jsonl", "corpus/pretrain_validation.jsonl"}) {
        for (const auto& d : read_documents(out(f))) {
            texts.push_back(d.text);
        }
    }
    if (manifest_.tokenizer.include_instruction_data) {
        require_file(out("augment/qa.jsonl"), "augment");
        for (const char* f : {"corpus/switchboard_train.jsonl", "corpus/switchboard_validation.jsonl"}) {
            for (const auto& p : read_pairs(out(f))) {
                texts.push_back(p.prompt);
                texts.push_back(p.reply);
            }
        }
        for (const auto& q : read_qa(out("augment/qa.jsonl"))) {
            texts.push_back(q.question);
            texts.push_back(q.answer);
        }
    }
    const auto tok = Tokenizer::train(texts, manifest_.tokenizer.vocab_size);
    const auto path = manifest_.tokenizer_file();
    tok.save(path, provenance(stage));
    written_.push_back(path);
    log() << fmt::format("[{}] vocabulary of {} from {} texts\n", stage, tok.vocab_size(), texts.size());
    finish_stage(stage);
}

namespace {

std::vector<train::Example> packed(const Tokenizer& tok, const std::vector<corpus::Document>& docs, std::size_t chunk_length) {
    std::vector<std::vector<TokenId>> ids;
    for (const auto& d : docs) {
        ids.push_back(tok.encode(d.text));
    }
    return train::pack_documents(ids, chunk_length);
}

}  // namespace

void Pipeline::pretrain() {
    constexpr std::string_view stage = "pretrain";
    require_file(manifest_.tokenizer_file(), "train-tokenizer");
    const auto tok = Tokenizer::load(manifest_.tokenizer_file());
    if (tok.vocab_size() != static_cast<std::size_t>(manifest_.model.vocab_size)) {
        throw Error(fmt::format("tokenizer has {} entries but model.vocab_size is {}", tok.vocab_size(), manifest_.model.vocab_size));
    }
    const auto train_set = packed(tok, read_documents(out("corpus/pretrain_train.jsonl")), manifest_.chunk_length);
    const auto val_set = packed(tok, read_documents(out("corpus/pretrain_validation.jsonl")), manifest_.chunk_length);
    auto model = Model::init(manifest_.model, derive_seed(stage_seed(stage), 1));
    auto config = manifest_.pretrain;
    config.seed = derive_seed(stage_seed(stage), 2);
    log() << fmt::format("[{}] {} parameters, {} train / {} validation chunks, {} epochs\n", stage, model.count(), train_set.size(),
                         val_set.size(), config.max_epochs);
    train::TrainHooks hooks;
    hooks.on_epoch_end = [&](const train::EpochStats& s, const Model&) {
        log() << fmt::format("[{}] epoch {} train {:.4f} validation {:.4f}\n", stage, s.epoch, s.train_loss, s.val_loss);
    };
    const auto report = train::train_run(model, train_set, val_set, config, hooks);
    const auto ckpt = manifest_.checkpoint_dir() / "pretrained.ckpt";
    auto prov = provenance(stage);
    prov["train_fingerprint"] = train::fingerprint(train_set);
    checkpoint::save(ckpt, model, prov);
    written_.push_back(ckpt);
    write_csv(out("train/pretrain_loss.csv"), stage, report.loss_csv());
    finish_stage(stage, Json{{"parameters", model.count()}, {"total_steps", report.total_steps}});
}

void Pipeline::tune_strategy(curriculum::Strategy strategy) {
    constexpr std::string_view stage = "instruct-tune";
    const auto variant = curriculum::variant_name(strategy);
    const auto tok = Tokenizer::load(manifest_.tokenizer_file());
    const auto max_len = manifest_.instruct_max_length;

    std::map<std::string, train::Example> examples;
    std::vector<std::string> switch_train, wiki_train;
    std::vector<train::Example> switch_val, wiki_val;
    for (const auto& p : read_pairs(out("corpus/switchboard_train.jsonl"))) {
        switch_train.push_back(pair_id(p));
        examples[switch_train.back()] = train::instruction_example(tok, p.prompt, p.reply, max_len);
    }
    for (const auto& p : read_pairs(out("corpus/switchboard_validation.jsonl"))) {
        switch_val.push_back(train::instruction_example(tok, p.prompt, p.reply, max_len));
    }
    for (const auto& q : read_qa(out("augment/qa_train.jsonl"))) {
        wiki_train.push_back(qa_id(q));
        examples[wiki_train.back()] = train::instruction_example(tok, q.question, q.answer, max_len);
    }
    for (const auto& q : read_qa(out("augment/qa_validation.jsonl"))) {
        wiki_val.push_back(train::instruction_example(tok, q.question, q.answer, max_len));
    }

    curriculum::PlanOptions plan_options{manifest_.instruct_epochs, manifest_.first_phase_epochs};
    const auto plan = curriculum::build_plan(strategy, switch_train, wiki_train, manifest_.instruct,
                                             derive_seed(stage_seed(stage), static_cast<std::uint64_t>(strategy) + 1), plan_options);
    std::vector<train::Example> validation;
    if (strategy != curriculum::Strategy::wiki_only) {
        validation.insert(validation.end(), switch_val.begin(), switch_val.end());
    }
    if (strategy != curriculum::Strategy::switch_only) {
        validation.insert(validation.end(), wiki_val.begin(), wiki_val.end());
    }

    auto model = checkpoint::load(manifest_.checkpoint_dir() / "pretrained.ckpt").model;
    std::string loss = "phase,dataset,epoch,step,train_loss,val_loss,lr\n";
    for (std::size_t pi = 0; pi < plan.phases.size(); ++pi) {
        const auto& phase = plan.phases[pi];
        std::vector<train::Example> data;
        for (const auto& id : phase.items) {
            data.push_back(examples.at(id));
        }
        log() << fmt::format("[{}] {} phase {} ({}): {} items, {} epochs\n", stage, variant, pi + 1, phase.dataset_ref, data.size(),
                             phase.epochs);
        const auto report = train::train_run(model, data, validation, phase.config);
        for (const auto& e : report.epochs) {
            loss += fmt::format("{},{},{},{},{},{},{:.6e}\n", pi + 1, phase.dataset_ref, e.epoch, e.step, fixed(e.train_loss, 6),
                                fixed(e.val_loss, 6), e.lr);
        }
        log() << fmt::format("[{}] {} phase {} validation {:.4f} -> {:.4f}\n", stage, variant, pi + 1, report.epochs.front().val_loss,
                             report.epochs.back().val_loss);
    }
    auto prov = provenance(stage);
    prov["strategy"] = std::string(curriculum::to_string(strategy));
    checkpoint::save(manifest_.checkpoint_dir() / (variant + ".ckpt"), model, prov);
    written_.push_back(manifest_.checkpoint_dir() / (variant + ".ckpt"));
    write_json(out(fmt::format("instruct/{}_plan.json", variant)), stage, plan.to_json());
    write_csv(out(fmt::format("instruct/{}_loss.csv", variant)), stage, loss);
}

void Pipeline::instruct_tune() {
    constexpr std::string_view stage = "instruct-tune";
    require_file(manifest_.checkpoint_dir() / "pretrained.ckpt", "pretrain");
    require_file(out("augment/qa_train.jsonl"), "augment");
    std::vector<curriculum::Strategy> strategies = manifest_.strategies;
    if (options_.strategy) {
        strategies = {*options_.strategy};
    }
    Json names = Json::array();
    for (auto s : strategies) {
        tune_strategy(s);
        names.push_back(std::string(curriculum::to_string(s)));
    }
    finish_stage(options_.strategy ? fmt::format("{}-{}", stage, curriculum::to_string(*options_.strategy)) : std::string(stage),
                 Json{{"strategies", names}});
}

namespace {

struct NamedModel {
    std::string id;
    fs::path path;
};

std::vector<NamedModel> available_models(const RunManifest& m, std::ostream& log) {
    std::vector<NamedModel> out;
    const auto dir = m.checkpoint_dir();
    require_file(dir / "pretrained.ckpt", "pretrain");
    out.push_back({"pretrained", dir / "pretrained.ckpt"});
    for (auto s : m.strategies) {
        const auto name = curriculum::variant_name(s);
        const auto p = dir / (name + ".ckpt");
        if (fs::is_regular_file(p)) {
            out.push_back({name, p});
        } else {
            log << fmt::format("warning: no checkpoint for {}; skipped\n", name);
        }
    }
    return out;
}

}  // namespace

void Pipeline::evaluate() {
    constexpr std::string_view stage = "evaluate";
    const auto tok = Tokenizer::load(manifest_.tokenizer_file());
    const auto items = eval::read_eval_items(manifest_.eval.items);
    const auto rt_rows = eval::read_reading_times(manifest_.eval.reading_times);
    std::vector<std::string> words;
    for (const auto& r : rt_rows) {
        words.push_back(r.word);
    }
    std::map<eval::Normalization, std::vector<eval::TaskResult>> results;
    std::vector<Json> regressions;
    std::vector<std::string> warnings;
    for (const auto& nm : available_models(manifest_, log())) {
        const auto model = checkpoint::load(nm.path).model;
        const eval::ModelScorer scorer(model);
        std::optional<eval::TaskResult> rt;
        {
            const auto surprisal = eval::word_surprisals(scorer, tok, words);
            const auto reg = eval::delta_r2(rt_rows, surprisal);
            rt = eval::TaskResult{"reading_time", nm.id, eval::Metric::delta_r2, reg.delta_r2, rt_rows.size(), 0};
            regressions.push_back(Json{{"model_id", nm.id},
                                       {"r2_baseline", reg.r2_baseline},
                                       {"r2_full", reg.r2_full},
                                       {"delta_r2", reg.delta_r2},
                                       {"coefficients_baseline", reg.coefficients_baseline},
                                       {"coefficients_full", reg.coefficients_full},
                                       {"surprisal_collinear", reg.surprisal_collinear}});
        }
        for (auto norm : manifest_.eval.normalizations) {
            eval::SuiteOptions opts{norm, manifest_.eval.threads};
            auto r = eval::evaluate_suite(scorer, tok, items, nm.id, opts, &warnings);
            auto& dst = results[norm];
            dst.insert(dst.end(), r.begin(), r.end());
            dst.push_back(*rt);
        }
        log() << fmt::format("[{}] {} scored\n", stage, nm.id);
    }
    for (std::size_t i = 0; i < manifest_.eval.normalizations.size(); ++i) {
        const auto norm = manifest_.eval.normalizations[i];
        const auto name = i == 0 ? std::string("eval/results.csv") : fmt::format("eval/results_{}.csv", eval::to_string(norm));
        write_csv(out(name), stage, eval::results_csv(results[norm]));
    }
    write_jsonl(out("eval/regression.jsonl"), stage, regressions);
    for (const auto& w : warnings) {
        log() << "warning: " << w << "\n";
    }
    finish_stage(stage, Json{{"primary_normalization", std::string(eval::to_string(manifest_.eval.normalizations.front()))},
                             {"warnings", warnings}});
}

void Pipeline::finetune_eval() {
    constexpr std::string_view stage = "finetune-eval";
    const auto tok = Tokenizer::load(manifest_.tokenizer_file());
    const auto train_set = eval::read_labeled(manifest_.eval.classification_train);
    const auto test_set = eval::read_labeled(manifest_.eval.classification_test);
    eval::ClassifierOptions opts;
    opts.subsample_size = manifest_.eval.subsample_size;
    opts.seed = derive_seed(stage_seed(stage), 1);
    opts.epochs = manifest_.eval.finetune_epochs;
    opts.train = manifest_.instruct;
    if (manifest_.eval.finetune_lr) {
        opts.train.initial_lr = *manifest_.eval.finetune_lr;
    }
    std::vector<eval::TaskResult> results;
    Json diagnostics = Json::object();
    for (const auto& nm : available_models(manifest_, log())) {
        const auto model = checkpoint::load(nm.path).model;
        const auto r = eval::finetune_classifier(model, tok, train_set, test_set, opts);
        results.push_back(eval::TaskResult{"marker_classification", nm.id, eval::Metric::accuracy, r.accuracy, r.n_test, 0});
        diagnostics[nm.id] = Json{{"subsample_size", r.subsample.size()}, {"diagnostics", r.diagnostics}};
        log() << fmt::format("[{}] {} accuracy {:.3f}\n", stage, nm.id, r.accuracy);
    }
    write_csv(out("eval/finetune.csv"), stage, eval::results_csv(results));
    finish_stage(stage, Json{{"models", diagnostics}});
}

void Pipeline::report() {
    constexpr std::string_view stage = "report";
    std::vector<eval::TaskResult> results;
    if (options_.results_csv) {
        results = eval::parse_results_csv(read_file(*options_.results_csv));
    } else {
        require_file(out("eval/results.csv"), "evaluate");
        results = eval::parse_results_csv(read_file(out("eval/results.csv")));
        if (fs::is_regular_file(out("eval/finetune.csv"))) {
            const auto ft = eval::parse_results_csv(read_file(out("eval/finetune.csv")));
            results.insert(results.end(), ft.begin(), ft.end());
        }
    }
    const auto matrix = report::ScoreMatrix::from_results(results);
    std::vector<std::string> warnings;
    const auto z = report::zscores(matrix, manifest_.standardization, &warnings);
    const auto index = report::aggregate_model_index(z);
    write_csv(out("report/zscores.csv"), stage, report::zscores_csv(matrix, z));
    write_csv(out("report/model_index.csv"), stage, report::model_index_csv(index));
    write_csv(out("report/box_stats.csv"), stage, report::box_stats_csv(z));
    write_text(out("report/box_plot.svg"), report::box_plot_svg(z, "Task z-scores per model", "provenance: " + provenance(stage).dump()));
    for (const auto& w : warnings) {
        log() << "warning: " << w << "\n";
    }
    finish_stage(stage, Json{{"warnings", warnings}});
}

void Pipeline::run_all() {
    const auto saved = options_.strategy;
    options_.strategy.reset();
    for (auto s : kStages) {
        run_stage(s);
    }
    options_.strategy = saved;
}

void Pipeline::run_stage(std::string_view stage) {
    if (stage == "build-corpus") {
        build_corpus();
    } else if (stage == "augment") {
        augment();
    } else if (stage == "train-tokenizer") {
        train_tokenizer();
    } else if (stage == "pretrain") {
        pretrain();
    } else if (stage == "instruct-tune") {
        instruct_tune();
    } else if (stage == "evaluate") {
        evaluate();
    } else if (stage == "finetune-eval") {
        finetune_eval();
    } else if (stage == "report") {
        report();
    } else {
        throw ConfigError(fmt::format("unknown stage '{}'", stage));
    }
}

std::map<std::string, std::string> artifact_hashes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out[e.path().lexically_relative(dir).generic_string()] = hash_file(e.path());
        }
    }
    return out;
}

fs::path write_fixture_manifest(const fs::path& dir, std::uint64_t seed, bool small) {
    fixtures::FixtureSizes sizes;
    if (small) {
        sizes.pretrain_words = 6000;
        sizes.dialogues = 16;
        sizes.articles = 24;
        sizes.eval_items_per_task = 10;
        sizes.reading_time_words = 120;
        sizes.classification_train = 96;
        sizes.classification_test = 48;
    }
    const auto paths = fixtures::write_fixture_tree(dir / "inputs", sizes, seed);
    Json pretrain_inputs = Json::array();
    for (std::size_t i = 0; i < paths.pretrain_text.size(); ++i) {
        pretrain_inputs.push_back(Json{{"path", paths.pretrain_text[i].lexically_relative(dir).generic_string()},
                                       {"source", paths.pretrain_sources[i]}});
    }
    auto rel = [&](const fs::path& p) { return p.lexically_relative(dir).generic_string(); };
    Json model = small ? Json{{"vocab_size", 384}, {"max_length", 128}, {"hidden_size", 32}, {"num_heads", 2}, {"num_layers", 1}}
                       : Json{{"vocab_size", 512}, {"max_length", 256}, {"hidden_size", 64}, {"num_heads", 4}, {"num_layers", 2}};
    Json pretrain = small ? Json{{"initial_lr", 1e-3}, {"max_epochs", 1}, {"warmup_steps", 2}, {"chunk_length", 64}}
                          : Json{{"initial_lr", 1e-3}, {"max_epochs", 3}, {"warmup_steps", 20}, {"chunk_length", 128}};
    Json instruct = small ? Json{{"initial_lr", 5e-4}, {"epochs", 2}, {"first_phase_epochs", 1}, {"warmup_steps", 1}, {"max_length", 96}}
                          : Json{{"initial_lr", 5e-4}, {"epochs", 10}, {"first_phase_epochs", 5}, {"warmup_steps", 10}, {"max_length", 192}};
    Json j{{"seed", seed},
           {"out_dir", "run"},
           {"corpus", {{"pretrain", pretrain_inputs}, {"dialogues", rel(paths.dialogues)}, {"articles", rel(paths.articles)}}},
           {"augment", {{"backend", "stub"}}},
           {"tokenizer", {{"vocab_size", model["vocab_size"]}}},
           {"model", model},
           {"pretrain", pretrain},
           {"instruct", instruct},
           {"eval",
            {{"items", rel(paths.eval_items)},
             {"reading_times", rel(paths.reading_times)},
             {"classification_train", rel(paths.classification_train)},
             {"classification_test", rel(paths.classification_test)},
             {"subsample_size", small ? 64 : 10000},
             {"finetune_epochs", small ? 1 : 3},
             {"finetune_lr", 1e-3}}}};
    const auto path = dir / "manifest.json";
    write_file(path, j.dump(2) + "\n");
    return path;
}

}  // namespace babyit::pipeline

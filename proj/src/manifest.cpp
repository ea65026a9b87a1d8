#include "babyit/manifest.hpp"

#include <fmt/format.h>

namespace babyit {

ManifestError::ManifestError(std::vector<std::string> diags)
    : ConfigError(fmt::format("invalid manifest:\n  {}", join(diags, "\n  "))), diagnostics(std::move(diags)) {}

namespace {

std::string rel(const std::filesystem::path& p, const std::filesystem::path& base) {
    if (base.empty() || p.empty()) {
        return p.generic_string();
    }
    return p.lexically_relative(base).generic_string();
}

Json train_json(const train::TrainConfig& c) {
    auto j = c.to_json();
    j.erase("seed");  // stages derive their seeds from the global one
    return j;
}

// Reads typed fields and records a diagnostic per problem instead of
// stopping at the first.
class Reader {
public:
    Reader(std::vector<std::string>& diags, std::filesystem::path base) : diags_(diags), base_(std::move(base)) {}

    const Json* object(const Json& parent, const std::string& key, const std::string& where, std::initializer_list<const char*> allowed) {
        if (!parent.contains(key)) {
            return nullptr;
        }
        const auto& j = parent.at(key);
        if (!j.is_object()) {
            error(where, "expected an object");
            return nullptr;
        }
        check_keys(j, where, allowed);
        return &j;
    }

    void check_keys(const Json& j, const std::string& where, std::initializer_list<const char*> allowed) {
        for (const auto& [k, v] : j.items()) {
            bool known = false;
            for (const char* a : allowed) {
                known = known || k == a;
            }
            if (!known) {
                error(where.empty() ? k : where + "." + k, "unknown field");
            }
        }
    }

    template <class T>
    void get(const Json* obj, const std::string& where, const char* key, T& out) {
        if (obj == nullptr || !obj->contains(key)) {
            return;
        }
        try {
            out = obj->at(key).get<T>();
        } catch (const Json::exception&) {
            error(field(where, key), fmt::format("expected {}", type_name<T>()));
        }
    }

    void path(const Json* obj, const std::string& where, const char* key, std::filesystem::path& out, bool required) {
        std::string s;
        if (obj == nullptr || !obj->contains(key)) {
            if (required) {
                error(field(where, key), "required");
            }
            return;
        }
        get(obj, where, key, s);
        if (!s.empty()) {
            out = resolve(s);
        }
    }

    std::filesystem::path resolve(const std::string& s) const {
        std::filesystem::path p(s);
        return p.is_absolute() || base_.empty() ? p : (base_ / p).lexically_normal();
    }

    void error(const std::string& where, const std::string& what) { diags_.push_back(fmt::format("{}: {}", where, what)); }

private:
    static std::string field(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

    template <class T>
    static const char* type_name() {
        if constexpr (std::is_same_v<T, bool>) {
            return "a boolean";
        } else if constexpr (std::is_integral_v<T>) {
            return "an integer";
        } else if constexpr (std::is_floating_point_v<T>) {
            return "a number";
        } else if constexpr (std::is_same_v<T, std::string>) {
            return "a string";
        } else {
            return "a value of another type";
        }
    }

    std::vector<std::string>& diags_;
    std::filesystem::path base_;
};

void read_train(Reader& r, const Json& root, const std::string& key, train::TrainConfig& c) {
    const auto* j = r.object(root, key, key,
                             {"initial_lr", "batch_size", "max_epochs", "scheduler", "warmup_steps", "num_cycles", "patience", "optimizer"});
    if (!j) {
        return;
    }
    r.get(j, key, "initial_lr", c.initial_lr);
    r.get(j, key, "batch_size", c.batch_size);
    r.get(j, key, "max_epochs", c.max_epochs);
    r.get(j, key, "warmup_steps", c.warmup_steps);
    r.get(j, key, "num_cycles", c.num_cycles);
    r.get(j, key, "patience", c.patience);
    std::string scheduler;
    r.get(j, key, "scheduler", scheduler);
    if (!scheduler.empty()) {
        try {
            c.scheduler = train::parse_scheduler(scheduler);
        } catch (const ConfigError&) {
            r.error(key + ".scheduler", fmt::format("unknown scheduler '{}' (linear or cosine_with_restarts)", scheduler));
        }
    }
    const auto where = key + ".optimizer";
    if (const auto* o = r.object(*j, "optimizer", where, {"beta1", "beta2", "eps", "weight_decay", "grad_clip"})) {
        r.get(o, where, "beta1", c.optimizer.beta1);
        r.get(o, where, "beta2", c.optimizer.beta2);
        r.get(o, where, "eps", c.optimizer.eps);
        r.get(o, where, "weight_decay", c.optimizer.weight_decay);
        r.get(o, where, "grad_clip", c.optimizer.grad_clip);
    }
}

void check_train(std::vector<std::string>& d, const std::string& key, const train::TrainConfig& c) {
    auto require = [&](bool ok, const char* field, const char* why) {
        if (!ok) {
            d.push_back(fmt::format("{}.{}: {}", key, field, why));
        }
    };
    require(c.initial_lr > 0.0, "initial_lr", "must be positive");
    require(c.batch_size > 0, "batch_size", "must be positive");
    require(c.max_epochs > 0, "max_epochs", "must be positive");
    require(c.num_cycles > 0, "num_cycles", "must be positive");
    require(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
    require(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
    require(c.optimizer.eps > 0.0, "optimizer.eps", "must be positive");
    require(c.optimizer.weight_decay >= 0.0, "optimizer.weight_decay", "must be non-negative");
}

void check_input(std::vector<std::string>& d, const std::string& field, const std::filesystem::path& p) {
    if (p.empty()) {
        d.push_back(fmt::format("{}: required", field));
    } else if (!std::filesystem::is_regular_file(p)) {
        d.push_back(fmt::format("{}: file '{}' does not exist", field, p.string()));
    }
}

void collect_problems(const RunManifest& m, std::vector<std::string>& d) {
    if (m.out_dir.empty()) {
        d.push_back("out_dir: required");
    }
    if (m.corpus.pretrain.empty()) {
        d.push_back("corpus.pretrain: at least one input required");
    }
    for (std::size_t i = 0; i < m.corpus.pretrain.size(); ++i) {
        check_input(d, fmt::format("corpus.pretrain[{}].path", i), m.corpus.pretrain[i].path);
    }
    check_input(d, "corpus.dialogues", m.corpus.dialogues);
    check_input(d, "corpus.articles", m.corpus.articles);
    if (!(m.corpus.split_fraction > 0.0 && m.corpus.split_fraction < 1.0)) {
        d.push_back("corpus.split_fraction: must lie strictly between 0 and 1");
    }
    if (m.corpus.word_cap == 0) {
        d.push_back("corpus.word_cap: must be positive");
    }
    if (m.augment.backend != "stub" && m.augment.backend != "http") {
        d.push_back(fmt::format("augment.backend: expected 'stub' or 'http', got '{}'", m.augment.backend));
    }
    if (m.augment.backend == "http" && m.augment.url.empty()) {
        d.push_back("augment.url: required for the http backend");
    }
    if (m.augment.max_retries < 0) {
        d.push_back("augment.max_retries: must be non-negative");
    }
    if (m.augment.timeout_ms <= 0) {
        d.push_back("augment.timeout_ms: must be positive");
    }
    if (m.augment.max_in_flight == 0) {
        d.push_back("augment.max_in_flight: must be positive");
    }
    if (m.tokenizer.vocab_size <= static_cast<std::size_t>(kBaseVocab)) {
        d.push_back(fmt::format("tokenizer.vocab_size: must exceed {}", kBaseVocab));
    }
    try {
        m.model.validate();
    } catch (const ConfigError& e) {
        d.push_back(e.what());
    }
    if (m.model.vocab_size != static_cast<std::int64_t>(m.tokenizer.vocab_size)) {
        d.push_back(fmt::format("model.vocab_size: {} differs from tokenizer.vocab_size {}", m.model.vocab_size, m.tokenizer.vocab_size));
    }
    check_train(d, "pretrain", m.pretrain);
    check_train(d, "instruct", m.instruct);
    if (m.chunk_length < 2 || static_cast<std::int64_t>(m.chunk_length) > m.model.max_length + 1) {
        d.push_back(fmt::format("pretrain.chunk_length: must lie in [2, model.max_length + 1 = {}]", m.model.max_length + 1));
    }
    if (m.instruct_max_length < 4 || static_cast<std::int64_t>(m.instruct_max_length) > m.model.max_length + 1) {
        d.push_back(fmt::format("instruct.max_length: must lie in [4, model.max_length + 1 = {}]", m.model.max_length + 1));
    }
    if (m.strategies.empty()) {
        d.push_back("instruct.strategies: at least one strategy required");
    }
    if (m.instruct_epochs == 0) {
        d.push_back("instruct.epochs: must be positive");
    }
    if (m.first_phase_epochs == 0 || m.first_phase_epochs >= m.instruct_epochs) {
        d.push_back("instruct.first_phase_epochs: must lie in [1, instruct.epochs - 1]");
    }
    check_input(d, "eval.items", m.eval.items);
    check_input(d, "eval.reading_times", m.eval.reading_times);
    check_input(d, "eval.classification_train", m.eval.classification_train);
    check_input(d, "eval.classification_test", m.eval.classification_test);
    if (m.eval.normalizations.empty()) {
        d.push_back("eval.normalizations: at least one mode required");
    }
    if (m.eval.subsample_size == 0) {
        d.push_back("eval.subsample_size: must be positive");
    }
    if (m.eval.finetune_epochs == 0) {
        d.push_back("eval.finetune_epochs: must be positive");
    }
    if (m.eval.finetune_lr && !(*m.eval.finetune_lr > 0.0)) {
        d.push_back("eval.finetune_lr: must be positive");
    }
}

}  // namespace

Json RunManifest::to_json(const std::filesystem::path& relative_to) const {
    Json pretrain_inputs = Json::array();
    for (const auto& in : corpus.pretrain) {
        pretrain_inputs.push_back(Json{{"path", rel(in.path, relative_to)}, {"source", std::string(corpus::to_string(in.source))}});
    }
    Json strategies_json = Json::array();
    for (auto s : strategies) {
        strategies_json.push_back(std::string(curriculum::to_string(s)));
    }
    Json norms = Json::array();
    for (auto n : eval.normalizations) {
        norms.push_back(std::string(eval::to_string(n)));
    }
    auto pre = train_json(pretrain);
    pre["chunk_length"] = chunk_length;
    auto ins = train_json(instruct);
    ins["strategies"] = strategies_json;
    ins["epochs"] = instruct_epochs;
    ins["first_phase_epochs"] = first_phase_epochs;
    ins["max_length"] = instruct_max_length;
    ins.erase("max_epochs");
    Json ev{{"items", rel(eval.items, relative_to)},
            {"reading_times", rel(eval.reading_times, relative_to)},
            {"classification_train", rel(eval.classification_train, relative_to)},
            {"classification_test", rel(eval.classification_test, relative_to)},
            {"normalizations", norms},
            {"subsample_size", eval.subsample_size},
            {"finetune_epochs", eval.finetune_epochs},
            {"threads", eval.threads}};
    if (eval.finetune_lr) {
        ev["finetune_lr"] = *eval.finetune_lr;
    }
    Json j{{"seed", seed},
           {"out_dir", rel(out_dir, relative_to)},
           {"corpus",
            {{"pretrain", pretrain_inputs},
             {"dialogues", rel(corpus.dialogues, relative_to)},
             {"articles", rel(corpus.articles, relative_to)},
             {"split_fraction", corpus.split_fraction},
             {"dialogue_level_split", corpus.dialogue_level_split},
             {"word_cap", corpus.word_cap},
             {"enforce_budget", corpus.enforce_budget},
             {"min_words", corpus.min_words},
             {"augment_target_words", corpus.augment_target_words}}},
           {"augment",
            {{"backend", augment.backend},
             {"url", augment.url},
             {"max_retries", augment.max_retries},
             {"timeout_ms", augment.timeout_ms},
             {"max_in_flight", augment.max_in_flight}}},
           {"tokenizer", {{"vocab_size", tokenizer.vocab_size}, {"include_instruction_data", tokenizer.include_instruction_data}}},
           {"model", model.to_json()},
           {"pretrain", pre},
           {"instruct", ins},
           {"eval", ev},
           {"report", {{"standardization", standardization == report::Standardization::per_task ? "per_task" : "pooled_by_metric"}}}};
    if (tokenizer_path || checkpoints_dir) {
        Json a = Json::object();
        if (tokenizer_path) {
            a["tokenizer"] = rel(*tokenizer_path, relative_to);
        }
        if (checkpoints_dir) {
            a["checkpoints"] = rel(*checkpoints_dir, relative_to);
        }
        j["artifacts"] = a;
    }
    return j;
}

std::string RunManifest::hash() const {
    // Inputs enter by content, and the output location not at all, so the
    // same experiment hashes the same wherever it runs.
    auto j = to_json();
    j.erase("out_dir");
    j.erase("artifacts");
    j["corpus"].erase("pretrain");
    j["corpus"].erase("dialogues");
    j["corpus"].erase("articles");
    for (const char* k : {"items", "reading_times", "classification_train", "classification_test"}) {
        j["eval"].erase(k);
    }
    j["augment"].erase("url");
    Json inputs = Json::array();
    auto add = [&](const std::string& name, const std::filesystem::path& p) {
        inputs.push_back(Json{{"name", name}, {"hash", std::filesystem::is_regular_file(p) ? hash_file(p) : std::string("missing")}});
    };
    for (const auto& in : corpus.pretrain) {
        add(std::string(corpus::to_string(in.source)), in.path);
    }
    add("dialogues", corpus.dialogues);
    add("articles", corpus.articles);
    add("eval.items", eval.items);
    add("eval.reading_times", eval.reading_times);
    add("eval.classification_train", eval.classification_train);
    add("eval.classification_test", eval.classification_test);
    j["inputs"] = inputs;
    return hash_hex(j.dump());
}

std::filesystem::path RunManifest::tokenizer_file() const {
    return tokenizer_path.value_or(out_dir / "tokenizer" / "tokenizer.json");
}

std::filesystem::path RunManifest::checkpoint_dir() const {
    return checkpoints_dir.value_or(out_dir / "checkpoints");
}

RunManifest parse_manifest(const Json& j, const std::filesystem::path& base_dir) {
    std::vector<std::string> d;
    RunManifest m;
    if (!j.is_object()) {
        throw ManifestError({"manifest: expected a JSON object"});
    }
    Reader r(d, base_dir);
    r.check_keys(j, "", {"seed", "out_dir", "corpus", "augment", "tokenizer", "model", "pretrain", "instruct", "eval", "report", "artifacts"});
    r.get(&j, "", "seed", m.seed);
    r.path(&j, "", "out_dir", m.out_dir, true);

    if (const auto* c = r.object(j, "corpus", "corpus",
                                 {"pretrain", "dialogues", "articles", "split_fraction", "dialogue_level_split", "word_cap", "enforce_budget",
                                  "min_words", "augment_target_words"})) {
        if (c->contains("pretrain")) {
            const auto& arr = c->at("pretrain");
            if (!arr.is_array()) {
                r.error("corpus.pretrain", "expected an array");
            } else {
                for (std::size_t i = 0; i < arr.size(); ++i) {
                    const auto where = fmt::format("corpus.pretrain[{}]", i);
                    if (!arr[i].is_object()) {
                        r.error(where, "expected an object {path, source}");
                        continue;
                    }
                    r.check_keys(arr[i], where, {"path", "source"});
                    CorpusInput in;
                    r.path(&arr[i], where, "path", in.path, true);
                    std::string source = "other";
                    r.get(&arr[i], where, "source", source);
                    try {
                        in.source = corpus::parse_source(source);
                    } catch (const Error&) {
                        r.error(where + ".source", fmt::format("unknown source '{}'", source));
                    }
                    m.corpus.pretrain.push_back(std::move(in));
                }
            }
        }
        r.path(c, "corpus", "dialogues", m.corpus.dialogues, false);
        r.path(c, "corpus", "articles", m.corpus.articles, false);
        r.get(c, "corpus", "split_fraction", m.corpus.split_fraction);
        r.get(c, "corpus", "dialogue_level_split", m.corpus.dialogue_level_split);
        r.get(c, "corpus", "word_cap", m.corpus.word_cap);
        r.get(c, "corpus", "enforce_budget", m.corpus.enforce_budget);
        r.get(c, "corpus", "min_words", m.corpus.min_words);
        r.get(c, "corpus", "augment_target_words", m.corpus.augment_target_words);
    }
    if (const auto* a = r.object(j, "augment", "augment", {"backend", "url", "max_retries", "timeout_ms", "max_in_flight"})) {
        r.get(a, "augment", "backend", m.augment.backend);
        r.get(a, "augment", "url", m.augment.url);
        r.get(a, "augment", "max_retries", m.augment.max_retries);
        r.get(a, "augment", "timeout_ms", m.augment.timeout_ms);
        r.get(a, "augment", "max_in_flight", m.augment.max_in_flight);
    }
    if (const auto* t = r.object(j, "tokenizer", "tokenizer", {"vocab_size", "include_instruction_data"})) {
        r.get(t, "tokenizer", "vocab_size", m.tokenizer.vocab_size);
        r.get(t, "tokenizer", "include_instruction_data", m.tokenizer.include_instruction_data);
    }
    if (const auto* mo = r.object(j, "model", "model",
                                  {"vocab_size", "max_length", "hidden_size", "num_heads", "num_layers", "tied_embeddings", "rope_base", "norm_eps",
                                   "init_std"})) {
        r.get(mo, "model", "vocab_size", m.model.vocab_size);
        r.get(mo, "model", "max_length", m.model.max_length);
        r.get(mo, "model", "hidden_size", m.model.hidden_size);
        r.get(mo, "model", "num_heads", m.model.num_heads);
        r.get(mo, "model", "num_layers", m.model.num_layers);
        r.get(mo, "model", "tied_embeddings", m.model.tied_embeddings);
        r.get(mo, "model", "rope_base", m.model.rope_base);
        r.get(mo, "model", "norm_eps", m.model.norm_eps);
        r.get(mo, "model", "init_std", m.model.init_std);
    }
    if (j.contains("pretrain") && j.at("pretrain").is_object()) {
        auto pre = j.at("pretrain");
        const Json* pj = &j.at("pretrain");
        r.get(pj, "pretrain", "chunk_length", m.chunk_length);
        pre.erase("chunk_length");
        read_train(r, Json{{"pretrain", pre}}, "pretrain", m.pretrain);
    } else if (j.contains("pretrain")) {
        r.error("pretrain", "expected an object");
    }
    if (j.contains("instruct") && j.at("instruct").is_object()) {
        auto ins = j.at("instruct");
        const Json* ij = &j.at("instruct");
        r.get(ij, "instruct", "epochs", m.instruct_epochs);
        r.get(ij, "instruct", "first_phase_epochs", m.first_phase_epochs);
        r.get(ij, "instruct", "max_length", m.instruct_max_length);
        if (ij->contains("strategies")) {
            std::vector<std::string> names;
            r.get(ij, "instruct", "strategies", names);
            m.strategies.clear();
            for (const auto& n : names) {
                try {
                    m.strategies.push_back(curriculum::parse_strategy(n));
                } catch (const ConfigError& e) {
                    r.error("instruct.strategies", e.what());
                }
            }
        }
        for (const char* k : {"epochs", "first_phase_epochs", "max_length", "strategies"}) {
            ins.erase(k);
        }
        read_train(r, Json{{"instruct", ins}}, "instruct", m.instruct);
        m.instruct.max_epochs = m.instruct_epochs;
    } else if (j.contains("instruct")) {
        r.error("instruct", "expected an object");
    }
    if (const auto* e = r.object(j, "eval", "eval",
                                 {"items", "reading_times", "classification_train", "classification_test", "normalizations", "subsample_size",
                                  "finetune_epochs", "finetune_lr", "threads"})) {
        r.path(e, "eval", "items", m.eval.items, false);
        r.path(e, "eval", "reading_times", m.eval.reading_times, false);
        r.path(e, "eval", "classification_train", m.eval.classification_train, false);
        r.path(e, "eval", "classification_test", m.eval.classification_test, false);
        if (e->contains("normalizations")) {
            std::vector<std::string> names;
            r.get(e, "eval", "normalizations", names);
            m.eval.normalizations.clear();
            for (const auto& n : names) {
                try {
                    m.eval.normalizations.push_back(eval::parse_normalization(n));
                } catch (const ConfigError& ex) {
                    r.error("eval.normalizations", ex.what());
                }
            }
        }
        r.get(e, "eval", "subsample_size", m.eval.subsample_size);
        r.get(e, "eval", "finetune_epochs", m.eval.finetune_epochs);
        if (e->contains("finetune_lr")) {
            double lr = 0.0;
            r.get(e, "eval", "finetune_lr", lr);
            m.eval.finetune_lr = lr;
        }
        r.get(e, "eval", "threads", m.eval.threads);
    }
    if (const auto* rep = r.object(j, "report", "report", {"standardization"})) {
        std::string mode = "per_task";
        r.get(rep, "report", "standardization", mode);
        if (mode == "per_task") {
            m.standardization = report::Standardization::per_task;
        } else if (mode == "pooled_by_metric") {
            m.standardization = report::Standardization::pooled_by_metric;
        } else {
            r.error("report.standardization", fmt::format("expected per_task or pooled_by_metric, got '{}'", mode));
        }
    }
    if (const auto* a = r.object(j, "artifacts", "artifacts", {"tokenizer", "checkpoints"})) {
        std::filesystem::path p;
        if (a->contains("tokenizer")) {
            r.path(a, "artifacts", "tokenizer", p, false);
            m.tokenizer_path = p;
        }
        if (a->contains("checkpoints")) {
            r.path(a, "artifacts", "checkpoints", p, false);
            m.checkpoints_dir = p;
        }
    }
    collect_problems(m, d);
    if (!d.empty()) {
        throw ManifestError(std::move(d));
    }
    return m;
}

RunManifest load_manifest(const std::filesystem::path& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw ManifestError({fmt::format("manifest: {} is not valid JSON: {}", path.string(), e.what())});
    } catch (const Error& e) {
        throw ManifestError({fmt::format("manifest: {}", e.what())});
    }
    auto m = parse_manifest(j, std::filesystem::absolute(path).parent_path());
    m.source_path = path;
    return m;
}

void validate_manifest(const RunManifest& m) {
    std::vector<std::string> d;
    collect_problems(m, d);
    if (!d.empty()) {
        throw ManifestError(std::move(d));
    }
}

}  // namespace babyit

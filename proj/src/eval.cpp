#include "babyit/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "babyit/regression.hpp"

namespace babyit::eval {

std::vector<double> ModelScorer::token_logprobs(std::span<const TokenId> ids) const {
    return babyit::token_logprobs(model_, ids);
}

std::vector<double> UniformScorer::token_logprobs(std::span<const TokenId> ids) const {
    std::vector<double> out(ids.size(), -std::log(static_cast<double>(vocab_)));
    if (!out.empty()) {
        out[0] = 0.0;
    }
    return out;
}

std::vector<double> HashScorer::token_logprobs(std::span<const TokenId> ids) const {
    std::vector<double> out(ids.size(), 0.0);
    std::uint64_t h = seed_;
    for (std::size_t t = 0; t < ids.size(); ++t) {
        h = derive_seed(h, static_cast<std::uint64_t>(ids[t]) + 1);
        if (t > 0) {
            out[t] = -10.0 * static_cast<double>(h >> 11) / 9007199254740992.0;
        }
    }
    return out;
}

void validate_item(const EvalItem& item) {
    if (item.candidates.size() < 2) {
        throw Error(fmt::format("item '{}': needs at least 2 candidates, got {}", item.id, item.candidates.size()));
    }
    std::set<std::string> seen;
    for (std::size_t i = 0; i < item.candidates.size(); ++i) {
        if (item.candidates[i].empty()) {
            throw Error(fmt::format("item '{}': candidate {} is empty", item.id, i));
        }
        if (!seen.insert(item.candidates[i]).second) {
            throw Error(fmt::format("item '{}': duplicate candidate '{}'", item.id, item.candidates[i]));
        }
    }
    if (item.correct_index >= item.candidates.size()) {
        throw Error(fmt::format("item '{}': correct_index {} out of range for {} candidates", item.id, item.correct_index,
                                item.candidates.size()));
    }
}

std::string_view to_string(Normalization n) {
    return n == Normalization::none ? "none" : "per_token";
}

Normalization parse_normalization(std::string_view name) {
    if (name == "none") {
        return Normalization::none;
    }
    if (name == "per_token" || name == "per-token") {
        return Normalization::per_token;
    }
    throw ConfigError(fmt::format("unknown normalization '{}'", name));
}

ChoiceResult score_forced_choice(const TokenScorer& scorer, const Tokenizer& tokenizer, const EvalItem& item, Normalization normalization) {
    validate_item(item);
    std::vector<TokenId> prefix{SpecialTokens::bos};
    const bool has_context = item.context && !item.context->empty();
    if (has_context) {
        const auto ctx = tokenizer.encode(*item.context);
        prefix.insert(prefix.end(), ctx.begin(), ctx.end());
    }
    ChoiceResult r;
    for (std::size_t c = 0; c < item.candidates.size(); ++c) {
        const auto text = has_context ? " " + item.candidates[c] : item.candidates[c];
        auto ids = prefix;
        const auto cand = tokenizer.encode(text);
        ids.insert(ids.end(), cand.begin(), cand.end());
        if (ids.size() > scorer.max_length()) {
            throw TokenizationOverflow(fmt::format("item '{}': candidate {} needs {} tokens, max_length is {}", item.id, c, ids.size(),
                                                   scorer.max_length()));
        }
        const auto lp = scorer.token_logprobs(ids);
        double sum = 0.0;
        for (std::size_t t = prefix.size(); t < ids.size(); ++t) {
            sum += lp[t];
        }
        r.logprobs.push_back(sum);
        r.token_counts.push_back(cand.size());
        r.scores.push_back(normalization == Normalization::per_token ? sum / static_cast<double>(cand.size()) : sum);
    }
    r.chosen = 0;
    for (std::size_t c = 1; c < r.scores.size(); ++c) {
        if (r.scores[c] > r.scores[r.chosen]) {
            r.chosen = c;
        }
    }
    for (std::size_t c = 0; c < r.scores.size(); ++c) {
        if (c != r.chosen && r.scores[c] == r.scores[r.chosen]) {
            r.tie = true;
        }
    }
    return r;
}

std::string_view to_string(Metric m) {
    return m == Metric::accuracy ? "accuracy" : "delta_r2";
}

Metric parse_metric(std::string_view name) {
    if (name == "accuracy") {
        return Metric::accuracy;
    }
    if (name == "delta_r2") {
        return Metric::delta_r2;
    }
    throw Error(fmt::format("unknown metric '{}'", name));
}

std::vector<ItemOutcome> score_items(const TokenScorer& scorer, const Tokenizer& tokenizer, const std::vector<EvalItem>& items,
                                     const SuiteOptions& options) {
    std::vector<ItemOutcome> out(items.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            auto& o = out[i];
            o.item = i;
            try {
                const auto r = score_forced_choice(scorer, tokenizer, items[i], options.normalization);
                o.chosen = r.chosen;
                o.tie = r.tie;
                o.correct = r.chosen == items[i].correct_index;
            } catch (const TokenizationOverflow& e) {
                o.skipped = true;
                o.diagnostic = e.what();
            }
        }
    };
    const auto n_threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(items.size(), 1));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) {
            pool.emplace_back(worker);
        }
    }
    return out;
}

std::vector<TaskResult> evaluate_suite(const TokenScorer& scorer, const Tokenizer& tokenizer, const std::vector<EvalItem>& items,
                                       const std::string& model_id, const SuiteOptions& options, std::vector<std::string>* warnings) {
    for (const auto& item : items) {
        validate_item(item);
    }
    const auto outcomes = score_items(scorer, tokenizer, items, options);
    struct Tally {
        std::size_t scored = 0, correct = 0, ties = 0, skipped = 0;
    };
    std::map<std::string, Tally> tallies;
    for (const auto& o : outcomes) {
        auto& t = tallies[items[o.item].task];
        if (o.skipped) {
            ++t.skipped;
            if (warnings) {
                warnings->push_back(o.diagnostic);
            }
            continue;
        }
        ++t.scored;
        t.correct += o.correct ? 1 : 0;
        t.ties += o.tie ? 1 : 0;
    }
    std::vector<TaskResult> results;
    for (const auto& [task, t] : tallies) {
        if (t.scored == 0) {
            if (warnings) {
                warnings->push_back(fmt::format("task '{}' has no scorable items; omitted", task));
            }
            continue;
        }
        results.push_back(TaskResult{task, model_id, Metric::accuracy, static_cast<double>(t.correct) / static_cast<double>(t.scored),
                                     t.scored, t.ties});
    }
    return results;
}

namespace {

// Surprisals for one block of words, scored from <bos>.
std::vector<double> block_surprisals(const TokenScorer& scorer, const std::vector<TokenId>& ids, const std::vector<std::size_t>& owner,
                                     std::size_t n_words) {
    std::vector<TokenId> seq{SpecialTokens::bos};
    seq.insert(seq.end(), ids.begin(), ids.end());
    const auto lp = scorer.token_logprobs(seq);
    std::vector<double> out(n_words, 0.0);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        out[owner[t]] -= lp[t + 1];
    }
    return out;
}

}  // namespace

std::vector<double> word_surprisals(const TokenScorer& scorer, const Tokenizer& tokenizer, const std::vector<std::string>& words) {
    if (words.empty()) {
        throw Error("word_surprisals: no words");
    }
    std::vector<std::size_t> word_end;
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
        const auto& w = words[i];
        if (w.empty()) {
            throw Error(fmt::format("word_surprisals: word {} is empty", i));
        }
        if (w.find_first_of(" \t\n\r\f\v") != std::string::npos) {
            throw Error(fmt::format("word_surprisals: word {} ('{}') contains whitespace", i, w));
        }
        if (i > 0) {
            text += ' ';
        }
        text += w;
        word_end.push_back(text.size());
    }
    std::vector<TokenSpan> spans;
    const auto ids = tokenizer.encode_with_offsets(text, spans);

    // Each token belongs to the word whose [previous end, end) range holds it.
    std::vector<std::size_t> owner(ids.size());
    std::vector<std::size_t> first_token(words.size(), ids.size());
    std::size_t w = 0;
    for (std::size_t t = 0; t < ids.size(); ++t) {
        while (w < words.size() && spans[t].begin >= word_end[w]) {
            ++w;
        }
        const std::size_t start = w == 0 ? 0 : word_end[w - 1];
        if (w == words.size() || spans[t].begin < start || spans[t].end > word_end[w]) {
            throw Error(fmt::format("word_surprisals: token {} crosses the boundary of word {}", t, std::min(w, words.size() - 1)));
        }
        owner[t] = w;
        first_token[w] = std::min(first_token[w], t);
    }
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (first_token[i] == ids.size()) {
            throw Error(fmt::format("word_surprisals: word {} ('{}') received no tokens", i, words[i]));
        }
    }

    if (ids.size() + 1 <= scorer.max_length()) {
        return block_surprisals(scorer, ids, owner, words.size());
    }
    const std::size_t budget = scorer.max_length() - 1;
    std::vector<double> out(words.size(), 0.0);
    std::size_t begin_word = 0;
    while (begin_word < words.size()) {
        std::size_t end_word = begin_word;
        const auto tok_begin = first_token[begin_word];
        while (end_word < words.size()) {
            const auto tok_end = end_word + 1 < words.size() ? first_token[end_word + 1] : ids.size();
            if (tok_end - tok_begin > budget) {
                break;
            }
            ++end_word;
        }
        if (end_word == begin_word) {
            throw Error(fmt::format("word_surprisals: word {} alone exceeds max_length {}", begin_word, scorer.max_length()));
        }
        const auto tok_end = end_word < words.size() ? first_token[end_word] : ids.size();
        std::vector<TokenId> block(ids.begin() + static_cast<std::ptrdiff_t>(tok_begin), ids.begin() + static_cast<std::ptrdiff_t>(tok_end));
        std::vector<std::size_t> local(owner.begin() + static_cast<std::ptrdiff_t>(tok_begin),
                                       owner.begin() + static_cast<std::ptrdiff_t>(tok_end));
        for (auto& o : local) {
            o -= begin_word;
        }
        const auto s = block_surprisals(scorer, block, local, end_word - begin_word);
        std::copy(s.begin(), s.end(), out.begin() + static_cast<std::ptrdiff_t>(begin_word));
        begin_word = end_word;
    }
    return out;
}

std::vector<ReadingTimeRow> parse_reading_times(std::string_view csv) {
    std::vector<ReadingTimeRow> rows;
    std::istringstream in{std::string(csv)};
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto fields = split_csv_line(line);
        if (!header) {
            if (fields != std::vector<std::string>{"word", "reading_time", "word_length", "log_frequency"}) {
                throw Error(fmt::format("reading-time CSV line {}: expected header word,reading_time,word_length,log_frequency", line_no));
            }
            header = true;
            continue;
        }
        if (fields.size() != 4) {
            throw Error(fmt::format("reading-time CSV line {}: expected 4 fields, got {}", line_no, fields.size()));
        }
        ReadingTimeRow r;
        r.word = fields[0];
        try {
            r.reading_time = std::stod(fields[1]);
            r.word_length = std::stod(fields[2]);
            r.log_frequency = std::stod(fields[3]);
        } catch (const std::exception&) {
            throw Error(fmt::format("reading-time CSV line {}: non-numeric field", line_no));
        }
        if (!(r.reading_time > 0.0)) {
            throw Error(fmt::format("reading-time CSV line {}: reading_time must be positive", line_no));
        }
        rows.push_back(std::move(r));
    }
    if (!header) {
        throw Error("reading-time CSV: missing header");
    }
    return rows;
}

std::vector<ReadingTimeRow> read_reading_times(const std::filesystem::path& path) {
    return parse_reading_times(read_file(path));
}

RegressionResult delta_r2(const std::vector<ReadingTimeRow>& rows, const std::vector<double>& surprisals) {
    if (rows.size() != surprisals.size()) {
        throw Error(fmt::format("delta_r2: {} rows but {} surprisals", rows.size(), surprisals.size()));
    }
    if (rows.size() < 5) {
        throw Error(fmt::format("delta_r2: need at least 5 rows, got {}", rows.size()));
    }
    std::vector<double> y, length, freq;
    for (const auto& r : rows) {
        y.push_back(r.reading_time);
        length.push_back(r.word_length);
        freq.push_back(r.log_frequency);
    }
    const std::vector<std::vector<double>> baseline{length, freq};
    const auto base = stats::ols(baseline, {"word_length", "log_frequency"}, y);
    RegressionResult out;
    out.r2_baseline = base.r2;
    out.coefficients_baseline = base.coefficients;
    if (stats::residual_share(baseline, surprisals) < 1e-9) {
        out.surprisal_collinear = true;
        out.r2_full = base.r2;
        out.coefficients_full = base.coefficients;
        out.coefficients_full.push_back(0.0);
        out.delta_r2 = 0.0;
        return out;
    }
    auto full_predictors = baseline;
    full_predictors.push_back(surprisals);
    const auto full = stats::ols(full_predictors, {"word_length", "log_frequency", "surprisal"}, y);
    out.r2_full = full.r2;
    out.coefficients_full = full.coefficients;
    out.delta_r2 = full.r2 - base.r2;
    return out;
}

std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    if (k < n) {
        Rng rng(seed);
        rng.shuffle(idx);
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

namespace {

std::vector<TokenId> classifier_input(const Tokenizer& tokenizer, const std::string& text, std::size_t max_length) {
    std::vector<TokenId> ids{SpecialTokens::bos};
    const auto body = tokenizer.encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    if (ids.size() > max_length) {
        ids.resize(max_length);
    }
    return ids;
}

}  // namespace

ClassifierResult finetune_classifier(const Model& model, const Tokenizer& tokenizer, const std::vector<LabeledText>& train_set,
                                     const std::vector<LabeledText>& test_set, const ClassifierOptions& options) {
    if (train_set.empty()) {
        throw Error("finetune_classifier: empty training set");
    }
    if (test_set.empty()) {
        throw Error("finetune_classifier: empty test set");
    }
    options.train.validate();
    ClassifierResult result;

    std::uint64_t seed = options.seed;
    std::set<int> labels;
    for (std::size_t attempt = 0;; ++attempt) {
        result.subsample = subsample_indices(train_set.size(), options.subsample_size, seed);
        labels.clear();
        for (auto i : result.subsample) {
            labels.insert(train_set[i].label);
        }
        if (labels.size() >= 2) {
            break;
        }
        if (result.subsample.size() == train_set.size() || attempt >= options.max_resamples) {
            throw Error(fmt::format("finetune_classifier: only one class present after {} draws", attempt + 1));
        }
        seed = derive_seed(options.seed, attempt + 1);
        result.diagnostics.push_back(fmt::format("subsample draw {} held a single class; redrawing", attempt + 1));
    }
    result.classes.assign(labels.begin(), labels.end());
    const auto n_classes = static_cast<Eigen::Index>(result.classes.size());
    auto class_of = [&](int label) -> std::optional<std::size_t> {
        auto it = std::lower_bound(result.classes.begin(), result.classes.end(), label);
        if (it == result.classes.end() || *it != label) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - result.classes.begin());
    };

    Model tuned = model;
    const auto h = tuned.config.hidden_size;
    const auto max_len = static_cast<std::size_t>(tuned.config.max_length);
    ag::Tensor<float> head(h, n_classes);
    Rng rng(derive_seed(seed, 0x68656164));
    for (Eigen::Index i = 0; i < head.value.size(); ++i) {
        head.value.data()[i] = static_cast<float>(rng.normal(0.0, tuned.config.init_std));
    }
    auto tensors = tuned.named();
    tensors.push_back(NamedTensor<float>{"head", &head, false});

    std::vector<std::vector<TokenId>> inputs;
    std::vector<std::size_t> targets;
    for (auto i : result.subsample) {
        inputs.push_back(classifier_input(tokenizer, train_set[i].text, max_len));
        targets.push_back(*class_of(train_set[i].label));
    }

    auto config = options.train;
    const auto bs = config.batch_size;
    const auto per_epoch = train::steps_per_epoch(inputs.size(), bs);
    const auto total = per_epoch * options.epochs;
    if (config.warmup_steps * 10 > total) {
        config.warmup_steps = total / 10;
    }
    train::AdamW<float> optimizer(config.optimizer);
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        const auto order = train::epoch_order(inputs.size(), seed, epoch);
        for (std::size_t begin = 0; begin < order.size(); begin += bs) {
            const auto end = std::min(order.size(), begin + bs);
            for (auto& nt : tensors) {
                nt.tensor->zero_grad();
            }
            for (std::size_t b = begin; b < end; ++b) {
                const auto& ids = inputs[order[b]];
                ag::Tape<float> tape;
                auto out = forward(tape, tuned, ids);
                auto last = ag::select_row(tape, out.hidden, ids.size() - 1);
                auto logits = ag::matmul(tape, last, tape.parameter(head));
                const ag::Target target{0, static_cast<TokenId>(targets[order[b]])};
                auto loss = ag::cross_entropy(tape, logits, std::span<const ag::Target>(&target, 1), static_cast<float>(end - begin));
                tape.backward(loss);
            }
            train::clip_grad_norm(tensors, config.optimizer.grad_clip);
            optimizer.step(tensors, train::lr_at_step(config, step, total));
            ++step;
        }
    }

    std::size_t correct = 0;
    for (const auto& ex : test_set) {
        const auto ids = classifier_input(tokenizer, ex.text, max_len);
        const auto out = forward_logits(tuned, ids);
        const ag::Matrix<float> logits = out.hidden.row(out.hidden.rows() - 1) * head.value;
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < n_classes; ++c) {
            if (logits(0, c) > logits(0, best)) {
                best = c;
            }
        }
        const auto truth = class_of(ex.label);
        if (truth && static_cast<Eigen::Index>(*truth) == best) {
            ++correct;
        }
    }
    result.n_test = test_set.size();
    result.accuracy = static_cast<double>(correct) / static_cast<double>(test_set.size());
    return result;
}

EvalItem item_from_json(const Json& j, std::size_t index) {
    EvalItem item;
    try {
        item.task = j.at("task").get<std::string>();
        if (j.contains("context") && !j.at("context").is_null()) {
            item.context = j.at("context").get<std::string>();
        }
        item.candidates = j.at("candidates").get<std::vector<std::string>>();
        item.correct_index = j.value("correct_index", std::size_t{0});
        item.id = j.contains("id") ? j.at("id").get<std::string>() : fmt::format("{}/{}", item.task, index);
    } catch (const Json::exception& e) {
        throw Error(fmt::format("eval item {}: {}", index, e.what()));
    }
    validate_item(item);
    return item;
}

Json to_json(const EvalItem& item) {
    Json j{{"id", item.id}, {"task", item.task}, {"candidates", item.candidates}, {"correct_index", item.correct_index}};
    if (item.context) {
        j["context"] = *item.context;
    }
    return j;
}

std::vector<EvalItem> read_eval_items(const std::filesystem::path& path) {
    std::vector<EvalItem> items;
    const auto records = read_jsonl(path);
    for (std::size_t i = 0; i < records.size(); ++i) {
        items.push_back(item_from_json(records[i], i));
    }
    return items;
}

std::vector<LabeledText> read_labeled(const std::filesystem::path& path) {
    std::vector<LabeledText> out;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(LabeledText{j.at("text").get<std::string>(), j.at("label").get<int>()});
    }
    return out;
}

std::string results_csv(const std::vector<TaskResult>& results) {
    std::string out = "task,model_id,metric,value,n_items,n_ties\n";
    for (const auto& r : results) {
        out += fmt::format("{},{},{},{},{},{}\n", csv_field(r.task), csv_field(r.model_id), to_string(r.metric), fixed(r.value, 6),
                           r.n_items, r.n_ties);
    }
    return out;
}

std::vector<TaskResult> parse_results_csv(std::string_view csv) {
    std::vector<TaskResult> out;
    std::istringstream in{std::string(csv)};
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto f = split_csv_line(line);
        if (!header) {
            if (f.size() < 4 || f[0] != "task" || f[1] != "model_id" || f[2] != "metric" || f[3] != "value") {
                throw Error(fmt::format("results CSV line {}: expected header task,model_id,metric,value[,n_items,n_ties]", line_no));
            }
            header = true;
            continue;
        }
        if (f.size() != 4 && f.size() != 6) {
            throw Error(fmt::format("results CSV line {}: expected 4 or 6 fields, got {}", line_no, f.size()));
        }
        TaskResult r;
        r.task = f[0];
        r.model_id = f[1];
        r.metric = parse_metric(f[2]);
        try {
            r.value = std::stod(f[3]);
            if (f.size() == 6) {
                r.n_items = std::stoul(f[4]);
                r.n_ties = std::stoul(f[5]);
            }
        } catch (const std::exception&) {
            throw Error(fmt::format("results CSV line {}: non-numeric field", line_no));
        }
        out.push_back(std::move(r));
    }
    if (!header) {
        throw Error("results CSV: missing header");
    }
    return out;
}

}  // namespace babyit::eval

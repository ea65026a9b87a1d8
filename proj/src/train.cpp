#include "babyit/train.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace babyit::train {

std::string_view to_string(Scheduler s) {
    return s == Scheduler::linear ? "linear" : "cosine_with_restarts";
}

Scheduler parse_scheduler(std::string_view name) {
    if (name == "linear") {
        return Scheduler::linear;
    }
    if (name == "cosine_with_restarts") {
        return Scheduler::cosine_with_restarts;
    }
    throw ConfigError(fmt::format("unknown scheduler '{}'", name));
}

TrainConfig TrainConfig::pretrain() {
    TrainConfig c;
    c.initial_lr = 2e-4;
    c.batch_size = 8;
    c.max_epochs = 8;
    c.scheduler = Scheduler::linear;
    c.warmup_steps = 5000;
    return c;
}

TrainConfig TrainConfig::instruction() {
    TrainConfig c;
    c.initial_lr = 2e-5;
    c.batch_size = 8;
    c.max_epochs = 10;
    c.scheduler = Scheduler::cosine_with_restarts;
    c.warmup_steps = 500;
    return c;
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* field, const char* why) {
        if (!ok) {
            throw ConfigError(fmt::format("train.{}: {}", field, why));
        }
    };
    require(initial_lr > 0.0, "initial_lr", "must be positive");
    require(batch_size > 0, "batch_size", "must be positive");
    require(max_epochs > 0, "max_epochs", "must be positive");
    require(num_cycles > 0, "num_cycles", "must be positive");
    require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
    require(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
    require(optimizer.eps > 0.0, "optimizer.eps", "must be positive");
    require(optimizer.weight_decay >= 0.0, "optimizer.weight_decay", "must be non-negative");
}

Json TrainConfig::to_json() const {
    return Json{{"initial_lr", initial_lr},
                {"batch_size", batch_size},
                {"max_epochs", max_epochs},
                {"scheduler", std::string(to_string(scheduler))},
                {"warmup_steps", warmup_steps},
                {"num_cycles", num_cycles},
                {"seed", seed},
                {"patience", patience},
                {"optimizer",
                 {{"beta1", optimizer.beta1},
                  {"beta2", optimizer.beta2},
                  {"eps", optimizer.eps},
                  {"weight_decay", optimizer.weight_decay},
                  {"grad_clip", optimizer.grad_clip}}}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
    TrainConfig c;
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    if (j.contains("scheduler")) {
        c.scheduler = parse_scheduler(j.at("scheduler").get<std::string>());
    }
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.num_cycles = j.value("num_cycles", c.num_cycles);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
        c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
        c.optimizer.eps = o.value("eps", c.optimizer.eps);
        c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
        c.optimizer.grad_clip = o.value("grad_clip", c.optimizer.grad_clip);
    }
    return c;
}

double lr_at_step(const TrainConfig& config, std::size_t step, std::size_t total_steps) {
    if (step > total_steps) {
        throw Error(fmt::format("lr_at_step: step {} beyond total_steps {}", step, total_steps));
    }
    if (config.warmup_steps >= total_steps) {
        throw ConfigError(fmt::format("warmup_steps {} must be below total_steps {}", config.warmup_steps, total_steps));
    }
    const double peak = config.initial_lr;
    if (step < config.warmup_steps) {
        return peak * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
    }
    const std::size_t span = total_steps - config.warmup_steps;
    const std::size_t done = step - config.warmup_steps;
    if (config.scheduler == Scheduler::linear) {
        return peak * static_cast<double>(span - done) / static_cast<double>(span);
    }
    if (done >= span) {
        return 0.0;
    }
    // Integer arithmetic keeps cycle boundaries exact.
    const auto cycles = static_cast<std::size_t>(config.num_cycles);
    const double frac = static_cast<double>((done * cycles) % span) / static_cast<double>(span);
    return peak * 0.5 * (1.0 + std::cos(M_PI * frac));
}

std::size_t Example::target_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<Example> pack_documents(const std::vector<std::vector<TokenId>>& documents, std::size_t chunk_length) {
    if (chunk_length < 2) {
        throw Error("pack_documents: chunk_length must be at least 2");
    }
    std::vector<TokenId> stream;
    for (const auto& doc : documents) {
        stream.insert(stream.end(), doc.begin(), doc.end());
        stream.push_back(SpecialTokens::eos);
    }
    std::vector<Example> out;
    for (std::size_t start = 0; start < stream.size(); start += chunk_length) {
        const auto end = std::min(stream.size(), start + chunk_length);
        if (end - start < 2) {
            break;
        }
        Example ex;
        ex.ids.assign(stream.begin() + static_cast<std::ptrdiff_t>(start), stream.begin() + static_cast<std::ptrdiff_t>(end));
        ex.mask.assign(ex.ids.size(), 1);
        ex.mask[0] = 0;
        out.push_back(std::move(ex));
    }
    return out;
}

Example instruction_example(const Tokenizer& tokenizer, std::string_view prompt, std::string_view target, std::size_t max_length) {
    if (max_length < 4) {
        throw Error("instruction_example: max_length must be at least 4");
    }
    auto p = tokenizer.encode(prompt);
    auto t = tokenizer.encode(target);
    const std::size_t fixed_tokens = 3;  // bos, sep, eos
    if (t.size() + fixed_tokens > max_length) {
        t.resize(max_length - fixed_tokens);
    }
    if (p.size() + t.size() + fixed_tokens > max_length) {
        const auto keep = max_length - fixed_tokens - t.size();
        p.erase(p.begin(), p.end() - static_cast<std::ptrdiff_t>(keep));
    }
    Example ex;
    ex.ids.push_back(SpecialTokens::bos);
    ex.ids.insert(ex.ids.end(), p.begin(), p.end());
    ex.ids.push_back(SpecialTokens::sep);
    ex.mask.assign(ex.ids.size(), 0);
    ex.ids.insert(ex.ids.end(), t.begin(), t.end());
    ex.ids.push_back(SpecialTokens::eos);
    ex.mask.resize(ex.ids.size(), 1);
    return ex;
}

Example pad_to(const Example& example, std::size_t length) {
    Example out = example;
    if (out.ids.size() < length) {
        out.ids.resize(length, SpecialTokens::pad);
        out.mask.resize(length, 0);
    }
    return out;
}

namespace {

std::vector<ag::Target> targets_of(std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
    if (targets.size() != mask.size()) {
        throw Error(fmt::format("masked_cross_entropy: {} targets but {} mask flags", targets.size(), mask.size()));
    }
    std::vector<ag::Target> out;
    for (std::size_t t = 1; t < targets.size(); ++t) {
        if (mask[t]) {
            out.push_back(ag::Target{t - 1, targets[t]});
        }
    }
    return out;
}

}  // namespace

template <class T>
double masked_cross_entropy(const ag::Matrix<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask) {
    const auto tg = targets_of(targets, mask);
    if (tg.empty()) {
        throw Error("masked_cross_entropy: mask has no target positions");
    }
    ag::Tape<T> tape(false);
    auto l = tape.view(logits);
    auto loss = ag::cross_entropy(tape, l, std::span<const ag::Target>(tg), static_cast<T>(tg.size()));
    return static_cast<double>(tape.value(loss)(0, 0));
}

template <class T>
ag::Var masked_cross_entropy(ag::Tape<T>& tape, ag::Var logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                             T normalizer) {
    const auto tg = targets_of(targets, mask);
    return ag::cross_entropy(tape, logits, std::span<const ag::Target>(tg), normalizer);
}

template <class T>
void AdamW<T>::step(Parameters<T>& params, double lr) {
    step(params.named(), lr);
}

template <class T>
void AdamW<T>::step(const std::vector<NamedTensor<T>>& named, double lr) {
    if (m_.empty()) {
        for (auto& nt : named) {
            m_.push_back(ag::Matrix<T>::Zero(nt.tensor->value.rows(), nt.tensor->value.cols()));
            v_.push_back(ag::Matrix<T>::Zero(nt.tensor->value.rows(), nt.tensor->value.cols()));
        }
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<T>(config_.beta1);
    const auto b2 = static_cast<T>(config_.beta2);
    const auto step_size = static_cast<T>(lr / bc1);
    const auto inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const auto eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& p = named[i].tensor->value;
        const auto& g = named[i].tensor->grad;
        if (!named[i].is_norm && config_.weight_decay > 0.0) {
            p *= static_cast<T>(1.0 - lr * config_.weight_decay);
        }
        m_[i] = b1 * m_[i] + (T(1) - b1) * g;
        v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseProduct(g);
        p.array() -= step_size * m_[i].array() / ((v_[i].array().sqrt() * inv_sqrt_bc2) + eps);
    }
}

template <class T>
double clip_grad_norm(Parameters<T>& params, double max_norm) {
    return clip_grad_norm(params.named(), max_norm);
}

template <class T>
double clip_grad_norm(const std::vector<NamedTensor<T>>& named, double max_norm) {
    double sq = 0.0;
    for (auto& nt : named) {
        sq += static_cast<double>(nt.tensor->grad.squaredNorm());
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const auto scale = static_cast<T>(max_norm / (norm + 1e-6));
        for (auto& nt : named) {
            nt.tensor->grad *= scale;
        }
    }
    return norm;
}

template <class T>
StepResult accumulate_gradients(Parameters<T>& params, std::span<const Example* const> batch) {
    StepResult r;
    for (const auto* ex : batch) {
        r.targets += ex->target_count();
    }
    params.zero_grad();
    if (r.targets == 0) {
        r.skipped = true;
        return r;
    }
    const auto normalizer = static_cast<T>(r.targets);
    for (const auto* ex : batch) {
        if (ex->target_count() == 0) {
            continue;
        }
        if (ex->ids.size() != ex->mask.size()) {
            throw Error("example ids and mask differ in length");
        }
        ag::Tape<T> tape;
        const std::span<const TokenId> ids(ex->ids);
        auto out = forward(tape, params, ids.first(ids.size() - 1));
        auto loss = masked_cross_entropy(tape, out.logits, ids, std::span<const std::uint8_t>(ex->mask), normalizer);
        r.loss += static_cast<double>(tape.value(loss)(0, 0));
        tape.backward(loss);
    }
    return r;
}

template <class T>
StepResult train_step(Parameters<T>& params, AdamW<T>& optimizer, std::span<const Example* const> batch, double lr, double grad_clip) {
    auto r = accumulate_gradients(params, batch);
    if (r.skipped) {
        return r;
    }
    if (!std::isfinite(r.loss)) {
        throw TrainingDiverged(fmt::format("non-finite loss {} at optimizer step {}", r.loss, optimizer.step_count() + 1));
    }
    clip_grad_norm(params, grad_clip);
    optimizer.step(params, lr);
    return r;
}

template <class T>
double evaluate_loss(const Parameters<T>& params, const std::vector<Example>& examples) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& ex : examples) {
        const auto n = ex.target_count();
        if (n == 0) {
            continue;
        }
        const std::span<const TokenId> ids(ex.ids);
        const auto out = forward_logits(params, ids.first(ids.size() - 1));
        total += masked_cross_entropy(out.logits, ids, std::span<const std::uint8_t>(ex.mask)) * static_cast<double>(n);
        count += n;
    }
    if (count == 0) {
        throw Error("evaluate_loss: no target positions");
    }
    return total / static_cast<double>(count);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    Rng rng(derive_seed(seed, epoch));
    rng.shuffle(order);
    return order;
}

std::size_t steps_per_epoch(std::size_t n_examples, std::size_t batch_size) {
    return (n_examples + batch_size - 1) / batch_size;
}

std::string TrainReport::loss_csv() const {
    std::string out = "epoch,step,train_loss,val_loss,lr\n";
    for (const auto& e : epochs) {
        out += fmt::format("{},{},{},{},{}\n", e.epoch, e.step, fixed(e.train_loss, 6), fixed(e.val_loss, 6), fmt::format("{:.6e}", e.lr));
    }
    return out;
}

TrainReport train_run(Model& model, const std::vector<Example>& train, const std::vector<Example>& validation, const TrainConfig& config,
                      const TrainHooks& hooks) {
    config.validate();
    if (train.empty()) {
        throw Error("train_run: no training examples");
    }
    TrainReport report;
    const auto per_epoch = steps_per_epoch(train.size(), config.batch_size);
    report.total_steps = per_epoch * config.max_epochs;
    lr_at_step(config, 0, report.total_steps);  // validates warm-up against the run length

    const auto validate = [&] { return validation.empty() ? 0.0 : evaluate_loss(model, validation); };
    report.epochs.push_back(EpochStats{0, 0, 0.0, validate(), 0.0});

    AdamW<float> optimizer(config.optimizer);
    std::size_t step = 0;
    double best_val = report.epochs[0].val_loss;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto order = epoch_order(train.size(), config.seed, epoch);
        double loss_sum = 0.0;
        std::size_t target_sum = 0;
        double lr = 0.0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const auto begin = b * config.batch_size;
            const auto end = std::min(train.size(), begin + config.batch_size);
            const std::span<const std::size_t> ids(order.data() + begin, end - begin);
            std::vector<const Example*> batch;
            for (auto i : ids) {
                batch.push_back(&train[i]);
            }
            if (hooks.on_batch) {
                hooks.on_batch(epoch, step, ids);
            }
            lr = lr_at_step(config, step, report.total_steps);
            StepResult r;
            try {
                r = train_step(model, optimizer, std::span<const Example* const>(batch), lr, config.optimizer.grad_clip);
            } catch (const TrainingDiverged& e) {
                throw TrainingDiverged(fmt::format("epoch {}, batch {}: {}", epoch, b, e.what()));
            }
            ++step;
            if (r.skipped) {
                ++report.skipped_batches;
                continue;
            }
            loss_sum += r.loss * static_cast<double>(r.targets);
            target_sum += r.targets;
        }
        EpochStats stats{epoch, step, target_sum ? loss_sum / static_cast<double>(target_sum) : 0.0, validate(), lr};
        report.epochs.push_back(stats);
        if (hooks.on_epoch_end) {
            hooks.on_epoch_end(stats, model);
        }
        if (config.patience > 0 && !validation.empty()) {
            if (stats.val_loss < best_val) {
                best_val = stats.val_loss;
                since_best = 0;
            } else if (++since_best >= config.patience) {
                report.stopped_early = true;
                break;
            }
        }
    }
    return report;
}

std::string fingerprint(const std::vector<Example>& examples) {
    std::uint64_t h = fnv1a("");
    for (const auto& ex : examples) {
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(ex.ids.data()), ex.ids.size() * sizeof(TokenId)), h);
        h = fnv1a(std::string_view(reinterpret_cast<const char*>(ex.mask.data()), ex.mask.size()), h);
    }
    return hex64(h);
}

template double masked_cross_entropy<float>(const ag::Matrix<float>&, std::span<const TokenId>, std::span<const std::uint8_t>);
template double masked_cross_entropy<double>(const ag::Matrix<double>&, std::span<const TokenId>, std::span<const std::uint8_t>);
template ag::Var masked_cross_entropy<float>(ag::Tape<float>&, ag::Var, std::span<const TokenId>, std::span<const std::uint8_t>, float);
template ag::Var masked_cross_entropy<double>(ag::Tape<double>&, ag::Var, std::span<const TokenId>, std::span<const std::uint8_t>, double);
template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(Parameters<float>&, double);
template double clip_grad_norm<double>(Parameters<double>&, double);
template double clip_grad_norm<float>(const std::vector<NamedTensor<float>>&, double);
template double clip_grad_norm<double>(const std::vector<NamedTensor<double>>&, double);
template StepResult accumulate_gradients<float>(Parameters<float>&, std::span<const Example* const>);
template StepResult accumulate_gradients<double>(Parameters<double>&, std::span<const Example* const>);
template StepResult train_step<float>(Parameters<float>&, AdamW<float>&, std::span<const Example* const>, double, double);
template StepResult train_step<double>(Parameters<double>&, AdamW<double>&, std::span<const Example* const>, double, double);
template double evaluate_loss<float>(const Parameters<float>&, const std::vector<Example>&);
template double evaluate_loss<double>(const Parameters<double>&, const std::vector<Example>&);

}  // namespace babyit::train

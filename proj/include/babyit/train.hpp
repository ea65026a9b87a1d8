#pragma once

// Masked language-model training: loss, AdamW, learning-rate schedules and
// the epoch loop shared by pre-training and instruction tuning.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "babyit/autograd.hpp"
#include "babyit/model.hpp"
#include "babyit/tokenizer.hpp"

namespace babyit::train {

enum class Scheduler { linear, cosine_with_restarts };

std::string_view to_string(Scheduler s);
Scheduler parse_scheduler(std::string_view name);

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double grad_clip = 1.0;  // global L2 norm; <= 0 disables clipping

    bool operator==(const OptimizerConfig&) const = default;
};

struct TrainConfig {
    double initial_lr = 2e-4;
    std::size_t batch_size = 8;
    std::size_t max_epochs = 8;
    Scheduler scheduler = Scheduler::linear;
    std::size_t warmup_steps = 5000;
    int num_cycles = 2;
    std::uint64_t seed = 0;
    std::size_t patience = 0;  // 0 disables early stopping
    OptimizerConfig optimizer;

    static TrainConfig pretrain();     // 2e-4, batch 8, 8 epochs, linear, 5,000 warm-up
    static TrainConfig instruction();  // 2e-5, batch 8, 10 epochs, cosine w/ restarts, 500 warm-up

    void validate() const;
    Json to_json() const;
    static TrainConfig from_json(const Json& j);

    bool operator==(const TrainConfig&) const = default;
};

// Warm-up ramps linearly from 0 to initial_lr. Afterwards: linear decays to
// 0 at total_steps; cosine_with_restarts runs num_cycles equal cosine cycles,
// each starting again at initial_lr. Throws if step > total_steps.
double lr_at_step(const TrainConfig& config, std::size_t step, std::size_t total_steps);

// One tokenized training sequence. mask[t] set means ids[t] is a prediction
// target (scored from logits at t - 1); mask[0] is always clear.
struct Example {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> mask;

    std::size_t target_count() const;
};

// Documents joined with <eos> and cut into chunks of chunk_length tokens;
// every position but the first is a target. Trailing chunks shorter than 2
// tokens are dropped.
std::vector<Example> pack_documents(const std::vector<std::vector<TokenId>>& documents, std::size_t chunk_length);

// <bos> prompt <sep> target <eos>, with the loss on target tokens and <eos>.
// Prompts that do not fit are cut from the front, then targets from the end.
Example instruction_example(const Tokenizer& tokenizer, std::string_view prompt, std::string_view target, std::size_t max_length);

// Appends <pad> up to length; padded positions are never targets.
Example pad_to(const Example& example, std::size_t length);

// Mean over masked positions t of -log softmax(logits[t-1])[targets[t]].
// logits must hold at least targets.size() - 1 rows. Throws on an all-clear mask.
template <class T>
double masked_cross_entropy(const ag::Matrix<T>& logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask);

// Recorded variant; divides the summed loss by normalizer so several
// examples can share one batch-level mean.
template <class T>
ag::Var masked_cross_entropy(ag::Tape<T>& tape, ag::Var logits, std::span<const TokenId> targets, std::span<const std::uint8_t> mask,
                             T normalizer);

template <class T>
class AdamW {
public:
    explicit AdamW(OptimizerConfig config = {}) : config_(config) {}

    // Decoupled weight decay applies to matrices, not to norm scales.
    void step(Parameters<T>& params, double lr);

    // Same update over an explicit tensor list; the list must keep the same
    // order and shapes across calls.
    void step(const std::vector<NamedTensor<T>>& tensors, double lr);

    std::uint64_t step_count() const { return steps_; }

private:
    OptimizerConfig config_;
    std::uint64_t steps_ = 0;
    std::vector<ag::Matrix<T>> m_;
    std::vector<ag::Matrix<T>> v_;
};

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
template <class T>
double clip_grad_norm(Parameters<T>& params, double max_norm);

template <class T>
double clip_grad_norm(const std::vector<NamedTensor<T>>& tensors, double max_norm);

struct StepResult {
    double loss = 0.0;
    std::size_t targets = 0;
    bool skipped = false;
};

// Zeroes gradients, accumulates the batch-mean masked loss gradient over all
// examples, computes loss/targets. Does not touch parameters.
template <class T>
StepResult accumulate_gradients(Parameters<T>& params, std::span<const Example* const> batch);

// accumulate_gradients + clipping + one optimizer step. A batch without any
// target position is skipped and leaves parameters and optimizer untouched.
template <class T>
StepResult train_step(Parameters<T>& params, AdamW<T>& optimizer, std::span<const Example* const> batch, double lr, double grad_clip);

// Target-weighted mean masked loss, no parameter updates.
template <class T>
double evaluate_loss(const Parameters<T>& params, const std::vector<Example>& examples);

// Example order for one epoch: a permutation of [0, n) determined by
// (seed, epoch) alone.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

std::size_t steps_per_epoch(std::size_t n_examples, std::size_t batch_size);

struct EpochStats {
    std::size_t epoch = 0;  // 0 = before training
    std::size_t step = 0;   // optimizer steps completed
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;  // epochs[0] is the pre-training baseline
    std::size_t total_steps = 0;
    std::size_t skipped_batches = 0;
    bool stopped_early = false;

    // epoch,step,train_loss,val_loss,lr
    std::string loss_csv() const;
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

struct TrainHooks {
    std::function<void(std::size_t epoch, std::size_t step, std::span<const std::size_t> batch)> on_batch;
    std::function<void(const EpochStats&, const Model&)> on_epoch_end;
};

// Runs config.max_epochs epochs (or fewer with patience) over train,
// measuring validation loss before training and after every epoch.
// Deterministic under config.seed. Throws TrainingDiverged on a non-finite loss.
TrainReport train_run(Model& model, const std::vector<Example>& train, const std::vector<Example>& validation, const TrainConfig& config,
                      const TrainHooks& hooks = {});

// Fingerprint of a tokenized dataset, for manifests.
std::string fingerprint(const std::vector<Example>& examples);

}  // namespace babyit::train

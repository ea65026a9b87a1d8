#pragma once

// Decoder-only transformer: pre-norm RMS normalization, rotary positions,
// gated (SiLU) feed-forward with intermediate size 4 * hidden, no biases,
// untied input embedding and output head by default.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "babyit/autograd.hpp"
#include "babyit/common.hpp"

namespace babyit {

struct ModelConfig {
    std::int64_t vocab_size = 512;
    std::int64_t max_length = 256;
    std::int64_t hidden_size = 64;
    std::int64_t num_heads = 4;
    std::int64_t num_layers = 2;
    bool tied_embeddings = false;
    double rope_base = 10000.0;
    double norm_eps = 1e-5;
    double init_std = 0.02;

    std::int64_t head_dim() const { return hidden_size / num_heads; }
    std::int64_t intermediate_size() const { return 4 * hidden_size; }

    // Throws ConfigError naming the offending field.
    void validate() const;

    static ModelConfig llama140m();
    static ModelConfig llama100m();

    Json to_json() const;
    static ModelConfig from_json(const Json& j);

    bool operator==(const ModelConfig&) const = default;
};

// Trainable parameter count:
// (tied ? 1 : 2)·V·H + L·(4·H² + 3·H·4H + 2·H) + H
std::int64_t param_count(const ModelConfig& config);

template <class T>
struct LayerParameters {
    ag::Tensor<T> attn_norm;  // [1 x H]
    ag::Tensor<T> wq, wk, wv, wo;  // [H x H]
    ag::Tensor<T> mlp_norm;  // [1 x H]
    ag::Tensor<T> w_gate, w_up;  // [H x 4H]
    ag::Tensor<T> w_down;  // [4H x H]
};

template <class T>
struct NamedTensor {
    std::string name;
    ag::Tensor<T>* tensor;
    bool is_norm;
};

template <class T>
struct Parameters {
    ModelConfig config;
    ag::Tensor<T> embedding;  // [V x H]
    std::vector<LayerParameters<T>> layers;
    ag::Tensor<T> final_norm;  // [1 x H]
    ag::Tensor<T> lm_head;  // [H x V], empty when embeddings are tied

    // Normal(0, init_std) matrices, unit norm scales.
    static Parameters init(const ModelConfig& config, std::uint64_t seed);

    // Every trainable tensor in a fixed canonical order.
    std::vector<NamedTensor<T>> named();
    std::int64_t count();
    void zero_grad();

    template <class U>
    Parameters<U> cast() const;
};

template <class T>
struct ForwardVars {
    ag::Var hidden;  // final normalized hidden states [seq x H]
    ag::Var logits;  // [seq x V]
};

// Records a forward pass over ids on tape. Throws on overlong input or
// out-of-range ids.
template <class T>
ForwardVars<T> forward(ag::Tape<T>& tape, Parameters<T>& params, std::span<const TokenId> ids);

template <class T>
struct ForwardOutput {
    ag::Matrix<T> logits;  // [seq x V]
    ag::Matrix<T> hidden;  // [seq x H]
};

// Inference-only forward pass.
template <class T>
ForwardOutput<T> forward_logits(const Parameters<T>& params, std::span<const TokenId> ids);

// Half-open range of target positions.
struct PositionSpan {
    std::size_t begin = 1;
    std::size_t end = 0;
};

// log p(ids[t] | ids[<t]) for t = 1..n-1, with element 0 set to 0.
template <class T>
std::vector<double> token_logprobs(const Parameters<T>& params, std::span<const TokenId> ids);

// Sum over t in span (default [1, n)) of log softmax(logits[t-1])[ids[t]].
template <class T>
double sequence_logprob(const Parameters<T>& params, std::span<const TokenId> ids, std::optional<PositionSpan> span = std::nullopt);

using Model = Parameters<float>;

}  // namespace babyit

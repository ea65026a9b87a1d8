#include "babyit/model.hpp"

#include <cmath>
#include <type_traits>

#include <fmt/format.h>

namespace babyit {

void ModelConfig::validate() const {
    auto require = [](bool ok, const char* field, const std::string& why) {
        if (!ok) {
            throw ConfigError(fmt::format("model.{}: {}", field, why));
        }
    };
    require(vocab_size > 0, "vocab_size", "must be positive");
    require(max_length >= 1, "max_length", "must be at least 1");
    require(hidden_size > 0, "hidden_size", "must be positive");
    require(num_heads > 0, "num_heads", "must be positive");
    require(num_layers >= 0, "num_layers", "must be non-negative");
    require(hidden_size % std::max<std::int64_t>(num_heads, 1) == 0, "num_heads",
            fmt::format("hidden_size {} is not divisible by {}", hidden_size, num_heads));
    require(head_dim() % 2 == 0, "num_heads", "head dimension must be even for rotary encoding");
    require(rope_base > 1.0, "rope_base", "must exceed 1");
    require(norm_eps > 0.0, "norm_eps", "must be positive");
    require(init_std > 0.0, "init_std", "must be positive");
}

ModelConfig ModelConfig::llama140m() {
    ModelConfig c;
    c.vocab_size = 32000;
    c.max_length = 6144;
    c.hidden_size = 704;
    c.num_heads = 11;
    c.num_layers = 12;
    return c;
}

ModelConfig ModelConfig::llama100m() {
    ModelConfig c;
    c.vocab_size = 16384;
    c.max_length = 6000;
    c.hidden_size = 512;
    c.num_heads = 8;
    c.num_layers = 20;
    return c;
}

Json ModelConfig::to_json() const {
    return Json{{"vocab_size", vocab_size}, {"max_length", max_length}, {"hidden_size", hidden_size}, {"num_heads", num_heads},
                {"num_layers", num_layers}, {"tied_embeddings", tied_embeddings}, {"rope_base", rope_base}, {"norm_eps", norm_eps},
                {"init_std", init_std}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_length = j.value("max_length", c.max_length);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.tied_embeddings = j.value("tied_embeddings", c.tied_embeddings);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.init_std = j.value("init_std", c.init_std);
    return c;
}

std::int64_t param_count(const ModelConfig& c) {
    const auto v = c.vocab_size;
    const auto h = c.hidden_size;
    const auto per_layer = 4 * h * h + 3 * h * (4 * h) + 2 * h;
    return (c.tied_embeddings ? 1 : 2) * v * h + c.num_layers * per_layer + h;
}

template <class T>
Parameters<T> Parameters<T>::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const auto v = config.vocab_size;
    const auto h = config.hidden_size;
    Parameters p;
    p.config = config;
    p.embedding = ag::Tensor<T>(v, h);
    p.layers.resize(static_cast<std::size_t>(config.num_layers));
    for (auto& l : p.layers) {
        l.attn_norm = ag::Tensor<T>(1, h);
        l.wq = ag::Tensor<T>(h, h);
        l.wk = ag::Tensor<T>(h, h);
        l.wv = ag::Tensor<T>(h, h);
        l.wo = ag::Tensor<T>(h, h);
        l.mlp_norm = ag::Tensor<T>(1, h);
        l.w_gate = ag::Tensor<T>(h, 4 * h);
        l.w_up = ag::Tensor<T>(h, 4 * h);
        l.w_down = ag::Tensor<T>(4 * h, h);
    }
    p.final_norm = ag::Tensor<T>(1, h);
    if (!config.tied_embeddings) {
        p.lm_head = ag::Tensor<T>(h, v);
    }
    Rng rng(seed);
    for (auto& nt : p.named()) {
        auto& value = nt.tensor->value;
        if (nt.is_norm) {
            value.setOnes();
        } else {
            for (Eigen::Index i = 0; i < value.size(); ++i) {
                value.data()[i] = static_cast<T>(rng.normal(0.0, config.init_std));
            }
        }
    }
    return p;
}

template <class T>
std::vector<NamedTensor<T>> Parameters<T>::named() {
    std::vector<NamedTensor<T>> out;
    out.push_back({"embedding", &embedding, false});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& l = layers[i];
        const auto prefix = fmt::format("layers.{}.", i);
        out.push_back({prefix + "attn_norm", &l.attn_norm, true});
        out.push_back({prefix + "wq", &l.wq, false});
        out.push_back({prefix + "wk", &l.wk, false});
        out.push_back({prefix + "wv", &l.wv, false});
        out.push_back({prefix + "wo", &l.wo, false});
        out.push_back({prefix + "mlp_norm", &l.mlp_norm, true});
        out.push_back({prefix + "w_gate", &l.w_gate, false});
        out.push_back({prefix + "w_up", &l.w_up, false});
        out.push_back({prefix + "w_down", &l.w_down, false});
    }
    out.push_back({"final_norm", &final_norm, true});
    if (!config.tied_embeddings) {
        out.push_back({"lm_head", &lm_head, false});
    }
    return out;
}

template <class T>
std::int64_t Parameters<T>::count() {
    std::int64_t n = 0;
    for (auto& nt : named()) {
        n += nt.tensor->size();
    }
    return n;
}

template <class T>
void Parameters<T>::zero_grad() {
    for (auto& nt : named()) {
        nt.tensor->zero_grad();
    }
}

template <class T>
template <class U>
Parameters<U> Parameters<T>::cast() const {
    auto& self = const_cast<Parameters<T>&>(*this);
    Parameters<U> out = Parameters<U>::init(config, 0);
    auto src = self.named();
    auto dst = out.named();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i].tensor->value = src[i].tensor->value.template cast<U>();
        dst[i].tensor->zero_grad();
    }
    return out;
}

namespace {

template <class T, class P>
ag::Var leaf(ag::Tape<T>& tape, P& tensor) {
    if constexpr (std::is_const_v<P>) {
        return tape.view(tensor.value);
    } else {
        return tape.parameter(tensor);
    }
}

template <class T, class P>
ForwardVars<T> forward_impl(ag::Tape<T>& tape, P& params, std::span<const TokenId> ids) {
    const auto& c = params.config;
    if (ids.empty()) {
        throw Error("forward: empty input");
    }
    if (static_cast<std::int64_t>(ids.size()) > c.max_length) {
        throw Error(fmt::format("forward: sequence of {} tokens exceeds max_length {}", ids.size(), c.max_length));
    }
    const int heads = static_cast<int>(c.num_heads);
    const auto eps = static_cast<T>(c.norm_eps);
    const auto embedding = leaf(tape, params.embedding);
    auto x = ag::embedding(tape, embedding, ids);
    for (auto& l : params.layers) {
        auto n = ag::rms_norm(tape, x, leaf(tape, l.attn_norm), eps);
        auto q = ag::rope(tape, ag::matmul(tape, n, leaf(tape, l.wq)), heads, c.rope_base);
        auto k = ag::rope(tape, ag::matmul(tape, n, leaf(tape, l.wk)), heads, c.rope_base);
        auto v = ag::matmul(tape, n, leaf(tape, l.wv));
        auto attn = ag::causal_attention(tape, q, k, v, heads);
        x = ag::add(tape, x, ag::matmul(tape, attn, leaf(tape, l.wo)));
        auto n2 = ag::rms_norm(tape, x, leaf(tape, l.mlp_norm), eps);
        auto gate = ag::silu(tape, ag::matmul(tape, n2, leaf(tape, l.w_gate)));
        auto up = ag::matmul(tape, n2, leaf(tape, l.w_up));
        x = ag::add(tape, x, ag::matmul(tape, ag::mul(tape, gate, up), leaf(tape, l.w_down)));
    }
    auto hidden = ag::rms_norm(tape, x, leaf(tape, params.final_norm), eps);
    auto logits = c.tied_embeddings ? ag::matmul_transposed(tape, hidden, embedding) : ag::matmul(tape, hidden, leaf(tape, params.lm_head));
    return ForwardVars<T>{hidden, logits};
}

}  // namespace

template <class T>
ForwardVars<T> forward(ag::Tape<T>& tape, Parameters<T>& params, std::span<const TokenId> ids) {
    return forward_impl(tape, params, ids);
}

template <class T>
ForwardOutput<T> forward_logits(const Parameters<T>& params, std::span<const TokenId> ids) {
    ag::Tape<T> tape(false);
    auto vars = forward_impl(tape, params, ids);
    return ForwardOutput<T>{tape.value(vars.logits), tape.value(vars.hidden)};
}

template <class T>
std::vector<double> token_logprobs(const Parameters<T>& params, std::span<const TokenId> ids) {
    if (ids.size() < 2) {
        throw Error("token_logprobs: need at least 2 tokens");
    }
    const auto out = forward_logits(params, ids.first(ids.size() - 1));
    const auto lp = ag::log_softmax_rows(out.logits);
    std::vector<double> result(ids.size(), 0.0);
    for (std::size_t t = 1; t < ids.size(); ++t) {
        result[t] = static_cast<double>(lp(static_cast<Eigen::Index>(t - 1), ids[t]));
    }
    return result;
}

template <class T>
double sequence_logprob(const Parameters<T>& params, std::span<const TokenId> ids, std::optional<PositionSpan> span) {
    if (ids.size() < 2) {
        throw Error("sequence_logprob: need at least 2 tokens");
    }
    PositionSpan s = span.value_or(PositionSpan{1, ids.size()});
    if (s.begin < 1 || s.end > ids.size() || s.begin >= s.end) {
        throw Error(fmt::format("sequence_logprob: span [{}, {}) outside [1, {})", s.begin, s.end, ids.size()));
    }
    // Positions past span.end cannot influence the scored logits.
    const auto lp = token_logprobs(params, ids.first(s.end));
    double total = 0.0;
    for (std::size_t t = s.begin; t < s.end; ++t) {
        total += lp[t];
    }
    return total;
}

template struct Parameters<float>;
template struct Parameters<double>;
template Parameters<double> Parameters<float>::cast<double>() const;
template Parameters<float> Parameters<double>::cast<float>() const;
template Parameters<float> Parameters<float>::cast<float>() const;
template Parameters<double> Parameters<double>::cast<double>() const;
template ForwardVars<float> forward<float>(ag::Tape<float>&, Parameters<float>&, std::span<const TokenId>);
template ForwardVars<double> forward<double>(ag::Tape<double>&, Parameters<double>&, std::span<const TokenId>);
template ForwardOutput<float> forward_logits<float>(const Parameters<float>&, std::span<const TokenId>);
template ForwardOutput<double> forward_logits<double>(const Parameters<double>&, std::span<const TokenId>);
template std::vector<double> token_logprobs<float>(const Parameters<float>&, std::span<const TokenId>);
template std::vector<double> token_logprobs<double>(const Parameters<double>&, std::span<const TokenId>);
template double sequence_logprob<float>(const Parameters<float>&, std::span<const TokenId>, std::optional<PositionSpan>);
template double sequence_logprob<double>(const Parameters<double>&, std::span<const TokenId>, std::optional<PositionSpan>);

}  // namespace babyit

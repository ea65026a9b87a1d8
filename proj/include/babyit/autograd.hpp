#pragma once

// Minimal reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records every operation of one forward pass in creation order,
// which is a valid topological order; backward() walks it in reverse.
// Parameter leaves point at externally owned storage so gradients from
// several tapes (e.g. the examples of a batch) accumulate in place.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "babyit/common.hpp"

namespace babyit::ag {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A trainable tensor and its accumulated gradient.
template <class T>
struct Tensor {
    Matrix<T> value;
    Matrix<T> grad;

    Tensor() = default;
    Tensor(Eigen::Index rows, Eigen::Index cols) : value(Matrix<T>::Zero(rows, cols)), grad(Matrix<T>::Zero(rows, cols)) {}

    Eigen::Index size() const { return value.size(); }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct Var {
    std::size_t index = 0;
};

template <class T>
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    // With gradients disabled, parameters are recorded as constants and no
    // backward closures are kept.
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix<T> value);
    Var parameter(Tensor<T>& tensor);

    // Leaf over externally owned storage that never receives a gradient.
    Var view(const Matrix<T>& value);

    // Registers an op output. inputs decide whether the output needs a gradient.
    Var record(Matrix<T> value, std::initializer_list<Var> inputs, Backward backward);

    const Matrix<T>& value(Var v) const { return *nodes_[v.index]->value; }
    bool needs_grad(Var v) const { return nodes_[v.index]->needs_grad; }

    // Gradient buffer of v, allocated as zeros on first use.
    Matrix<T>& grad(Var v);

    // Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
    // loss must be 1x1.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Matrix<T> own_value;
        Matrix<T> own_grad;
        const Matrix<T>* value = nullptr;
        Matrix<T>* grad = nullptr;
        Backward backward;
        bool needs_grad = false;
        bool has_grad = false;
    };

    std::vector<std::unique_ptr<Node>> nodes_;
    bool grad_enabled_ = true;
};

// (row, label) pairs selecting log-probabilities in cross_entropy.
struct Target {
    std::size_t row = 0;
    TokenId label = 0;
};

// out[t] = table[ids[t]]
template <class T>
Var embedding(Tape<T>& tape, Var table, std::span<const TokenId> ids);

// x [n x k] * w [k x m]
template <class T>
Var matmul(Tape<T>& tape, Var x, Var w);

// x [n x k] * w^T, w is [m x k]
template <class T>
Var matmul_transposed(Tape<T>& tape, Var x, Var w);

template <class T>
Var add(Tape<T>& tape, Var a, Var b);

// Elementwise product.
template <class T>
Var mul(Tape<T>& tape, Var a, Var b);

// x * sigmoid(x)
template <class T>
Var silu(Tape<T>& tape, Var x);

// Per-row x / sqrt(mean(x^2) + eps) * scale, scale is [1 x cols].
template <class T>
Var rms_norm(Tape<T>& tape, Var x, Var scale, T eps);

// Rotary position encoding applied per head, rotating dimension i with
// i + head_dim/2 by angle pos * base^(-2i/head_dim).
template <class T>
Var rope(Tape<T>& tape, Var x, int num_heads, double base);

// Multi-head causal softmax attention; inputs are [seq x hidden].
template <class T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, int num_heads);

// Row r of x as a [1 x cols] matrix.
template <class T>
Var select_row(Tape<T>& tape, Var x, std::size_t r);

// sum over targets of -log softmax(logits[row])[label], divided by normalizer.
template <class T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const Target> targets, T normalizer);

// Row-wise log-softmax without recording.
template <class T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits);

}  // namespace babyit::ag

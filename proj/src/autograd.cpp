#include "babyit/autograd.hpp"

#include <cmath>

#include <fmt/format.h>

namespace babyit::ag {

namespace {

template <class T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error(fmt::format("{}: shape mismatch {}x{} vs {}x{}", op, a.rows(), a.cols(), b.rows(), b.cols()));
    }
}

struct RopeTable {
    std::vector<double> cos;
    std::vector<double> sin;
    int half = 0;
};

RopeTable make_rope_table(Eigen::Index seq, int head_dim, double base) {
    RopeTable t;
    t.half = head_dim / 2;
    t.cos.resize(static_cast<std::size_t>(seq * t.half));
    t.sin.resize(t.cos.size());
    for (Eigen::Index p = 0; p < seq; ++p) {
        for (int i = 0; i < t.half; ++i) {
            const double inv_freq = std::pow(base, -2.0 * i / head_dim);
            const double angle = static_cast<double>(p) * inv_freq;
            t.cos[static_cast<std::size_t>(p * t.half + i)] = std::cos(angle);
            t.sin[static_cast<std::size_t>(p * t.half + i)] = std::sin(angle);
        }
    }
    return t;
}

}  // namespace

template <class T>
Var Tape<T>::constant(Matrix<T> value) {
    auto node = std::make_unique<Node>();
    node->own_value = std::move(value);
    node->value = &node->own_value;
    node->grad = &node->own_grad;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::parameter(Tensor<T>& tensor) {
    if (grad_enabled_ && (tensor.grad.rows() != tensor.value.rows() || tensor.grad.cols() != tensor.value.cols())) {
        tensor.zero_grad();
    }
    auto node = std::make_unique<Node>();
    node->value = &tensor.value;
    if (grad_enabled_) {
        node->grad = &tensor.grad;
        node->needs_grad = true;
        node->has_grad = true;
    } else {
        node->grad = &node->own_grad;
    }
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::view(const Matrix<T>& value) {
    auto node = std::make_unique<Node>();
    node->value = &value;
    node->grad = &node->own_grad;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::record(Matrix<T> value, std::initializer_list<Var> inputs, Backward backward) {
    auto node = std::make_unique<Node>();
    node->own_value = std::move(value);
    node->value = &node->own_value;
    node->grad = &node->own_grad;
    for (auto in : inputs) {
        node->needs_grad = node->needs_grad || (grad_enabled_ && nodes_[in.index]->needs_grad);
    }
    if (node->needs_grad) {
        node->backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
}

template <class T>
Matrix<T>& Tape<T>::grad(Var v) {
    auto& node = *nodes_[v.index];
    if (!node.has_grad) {
        node.grad->setZero(node.value->rows(), node.value->cols());
        node.has_grad = true;
    }
    return *node.grad;
}

template <class T>
void Tape<T>::backward(Var loss) {
    if (value(loss).size() != 1) {
        throw Error("backward: loss must be a scalar");
    }
    grad(loss)(0, 0) += T(1);
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        auto& node = *nodes_[i];
        if (node.backward && node.has_grad) {
            node.backward(*this);
        }
    }
}

template <class T>
Var embedding(Tape<T>& tape, Var table, std::span<const TokenId> ids) {
    const auto& w = tape.value(table);
    Matrix<T> out(static_cast<Eigen::Index>(ids.size()), w.cols());
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || ids[t] >= w.rows()) {
            throw Error(fmt::format("embedding: id {} outside vocabulary of size {}", ids[t], w.rows()));
        }
        out.row(static_cast<Eigen::Index>(t)) = w.row(ids[t]);
    }
    std::vector<TokenId> ids_copy(ids.begin(), ids.end());
    Var out_var{tape.size()};
    return tape.record(std::move(out), {table}, [table, out_var, ids_copy = std::move(ids_copy)](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        auto& gw = tp.grad(table);
        for (std::size_t t = 0; t < ids_copy.size(); ++t) {
            gw.row(ids_copy[t]) += g.row(static_cast<Eigen::Index>(t));
        }
    });
}

template <class T>
Var matmul(Tape<T>& tape, Var x, Var w) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    if (xv.cols() != wv.rows()) {
        throw Error(fmt::format("matmul: inner dimensions {} and {} differ", xv.cols(), wv.rows()));
    }
    Matrix<T> out(xv.rows(), wv.cols());
    out.noalias() = xv * wv;
    Var out_var{tape.size()};
    return tape.record(std::move(out), {x, w}, [x, w, out_var](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        if (tp.needs_grad(x)) {
            tp.grad(x).noalias() += g * tp.value(w).transpose();
        }
        if (tp.needs_grad(w)) {
            tp.grad(w).noalias() += tp.value(x).transpose() * g;
        }
    });
}

template <class T>
Var matmul_transposed(Tape<T>& tape, Var x, Var w) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(w);
    if (xv.cols() != wv.cols()) {
        throw Error(fmt::format("matmul_transposed: inner dimensions {} and {} differ", xv.cols(), wv.cols()));
    }
    Matrix<T> out(xv.rows(), wv.rows());
    out.noalias() = xv * wv.transpose();
    Var out_var{tape.size()};
    return tape.record(std::move(out), {x, w}, [x, w, out_var](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        if (tp.needs_grad(x)) {
            tp.grad(x).noalias() += g * tp.value(w);
        }
        if (tp.needs_grad(w)) {
            tp.grad(w).noalias() += g.transpose() * tp.value(x);
        }
    });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
    require_same_shape(tape.value(a), tape.value(b), "add");
    Matrix<T> out = tape.value(a) + tape.value(b);
    Var out_var{tape.size()};
    return tape.record(std::move(out), {a, b}, [a, b, out_var](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        if (tp.needs_grad(a)) {
            tp.grad(a) += g;
        }
        if (tp.needs_grad(b)) {
            tp.grad(b) += g;
        }
    });
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
    require_same_shape(tape.value(a), tape.value(b), "mul");
    Matrix<T> out = tape.value(a).cwiseProduct(tape.value(b));
    Var out_var{tape.size()};
    return tape.record(std::move(out), {a, b}, [a, b, out_var](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        if (tp.needs_grad(a)) {
            tp.grad(a) += g.cwiseProduct(tp.value(b));
        }
        if (tp.needs_grad(b)) {
            tp.grad(b) += g.cwiseProduct(tp.value(a));
        }
    });
}

template <class T>
Var silu(Tape<T>& tape, Var x) {
    const auto& xv = tape.value(x);
    Matrix<T> out = xv.unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
    Var out_var{tape.size()};
    return tape.record(std::move(out), {x}, [x, out_var](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        const auto& xv = tp.value(x);
        auto& gx = tp.grad(x);
        for (Eigen::Index i = 0; i < xv.size(); ++i) {
            const T v = xv.data()[i];
            const T s = T(1) / (T(1) + std::exp(-v));
            gx.data()[i] += g.data()[i] * s * (T(1) + v * (T(1) - s));
        }
    });
}

template <class T>
Var rms_norm(Tape<T>& tape, Var x, Var scale, T eps) {
    const auto& xv = tape.value(x);
    const auto& sv = tape.value(scale);
    if (sv.rows() != 1 || sv.cols() != xv.cols()) {
        throw Error("rms_norm: scale must be [1 x cols]");
    }
    const auto n = xv.rows();
    const auto h = xv.cols();
    Matrix<T> out(n, h);
    std::vector<T> inv(static_cast<std::size_t>(n));
    for (Eigen::Index t = 0; t < n; ++t) {
        const T ms = xv.row(t).squaredNorm() / static_cast<T>(h);
        const T r = T(1) / std::sqrt(ms + eps);
        inv[static_cast<std::size_t>(t)] = r;
        out.row(t) = xv.row(t).cwiseProduct(sv) * r;
    }
    Var out_var{tape.size()};
    return tape.record(std::move(out), {x, scale}, [x, scale, out_var, inv = std::move(inv)](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        const auto& xv = tp.value(x);
        const auto& sv = tp.value(scale);
        const auto h = static_cast<T>(xv.cols());
        for (Eigen::Index t = 0; t < xv.rows(); ++t) {
            const T r = inv[static_cast<std::size_t>(t)];
            if (tp.needs_grad(scale)) {
                tp.grad(scale) += g.row(t).cwiseProduct(xv.row(t)) * r;
            }
            if (tp.needs_grad(x)) {
                const auto gs = g.row(t).cwiseProduct(sv);
                const T dot = gs.dot(xv.row(t));
                tp.grad(x).row(t) += gs * r - xv.row(t) * (r * r * r * dot / h);
            }
        }
    });
}

template <class T>
Var rope(Tape<T>& tape, Var x, int num_heads, double base) {
    const auto& xv = tape.value(x);
    const auto n = xv.rows();
    const auto hidden = xv.cols();
    if (num_heads <= 0 || hidden % num_heads != 0 || (hidden / num_heads) % 2 != 0) {
        throw Error("rope: head dimension must be a positive even number");
    }
    const int head_dim = static_cast<int>(hidden / num_heads);
    auto table = std::make_shared<RopeTable>(make_rope_table(n, head_dim, base));
    const int half = table->half;
    Matrix<T> out(n, hidden);
    for (Eigen::Index p = 0; p < n; ++p) {
        for (int h = 0; h < num_heads; ++h) {
            const Eigen::Index o = h * head_dim;
            for (int i = 0; i < half; ++i) {
                const auto c = static_cast<T>(table->cos[static_cast<std::size_t>(p * half + i)]);
                const auto s = static_cast<T>(table->sin[static_cast<std::size_t>(p * half + i)]);
                const T x1 = xv(p, o + i);
                const T x2 = xv(p, o + i + half);
                out(p, o + i) = x1 * c - x2 * s;
                out(p, o + i + half) = x2 * c + x1 * s;
            }
        }
    }
    Var out_var{tape.size()};
    return tape.record(std::move(out), {x}, [x, out_var, table, num_heads, head_dim](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        auto& gx = tp.grad(x);
        const int half = table->half;
        for (Eigen::Index p = 0; p < g.rows(); ++p) {
            for (int h = 0; h < num_heads; ++h) {
                const Eigen::Index o = h * head_dim;
                for (int i = 0; i < half; ++i) {
                    const auto c = static_cast<T>(table->cos[static_cast<std::size_t>(p * half + i)]);
                    const auto s = static_cast<T>(table->sin[static_cast<std::size_t>(p * half + i)]);
                    const T g1 = g(p, o + i);
                    const T g2 = g(p, o + i + half);
                    gx(p, o + i) += g1 * c + g2 * s;
                    gx(p, o + i + half) += g2 * c - g1 * s;
                }
            }
        }
    });
}

template <class T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, int num_heads) {
    const auto& qv = tape.value(q);
    const auto& kv = tape.value(k);
    const auto& vv = tape.value(v);
    require_same_shape(qv, kv, "causal_attention");
    require_same_shape(qv, vv, "causal_attention");
    const auto n = qv.rows();
    const auto hidden = qv.cols();
    if (num_heads <= 0 || hidden % num_heads != 0) {
        throw Error("causal_attention: hidden size not divisible by head count");
    }
    const auto d = hidden / num_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    auto probs = std::make_shared<std::vector<Matrix<T>>>(static_cast<std::size_t>(num_heads));
    Matrix<T> out(n, hidden);
    for (int h = 0; h < num_heads; ++h) {
        const auto qh = qv.middleCols(h * d, d);
        const auto kh = kv.middleCols(h * d, d);
        const auto vh = vv.middleCols(h * d, d);
        Matrix<T> s(n, n);
        s.noalias() = qh * kh.transpose();
        Matrix<T>& p = (*probs)[static_cast<std::size_t>(h)];
        p = Matrix<T>::Zero(n, n);
        for (Eigen::Index t = 0; t < n; ++t) {
            T mx = s(t, 0) * scale;
            for (Eigen::Index j = 1; j <= t; ++j) {
                mx = std::max(mx, s(t, j) * scale);
            }
            T sum = 0;
            for (Eigen::Index j = 0; j <= t; ++j) {
                const T e = std::exp(s(t, j) * scale - mx);
                p(t, j) = e;
                sum += e;
            }
            for (Eigen::Index j = 0; j <= t; ++j) {
                p(t, j) /= sum;
            }
        }
        out.middleCols(h * d, d).noalias() = p * vh;
    }
    Var out_var{tape.size()};
    return tape.record(std::move(out), {q, k, v}, [q, k, v, out_var, probs, num_heads, d, scale](Tape<T>& tp) {
        const auto& g = tp.grad(out_var);
        const auto& qv = tp.value(q);
        const auto& kv = tp.value(k);
        const auto& vv = tp.value(v);
        const auto n = qv.rows();
        for (int h = 0; h < num_heads; ++h) {
            const Matrix<T>& p = (*probs)[static_cast<std::size_t>(h)];
            const auto gh = g.middleCols(h * d, d);
            if (tp.needs_grad(v)) {
                tp.grad(v).middleCols(h * d, d).noalias() += p.transpose() * gh;
            }
            Matrix<T> dp(n, n);
            dp.noalias() = gh * vv.middleCols(h * d, d).transpose();
            Matrix<T> ds = Matrix<T>::Zero(n, n);
            for (Eigen::Index t = 0; t < n; ++t) {
                T dot = 0;
                for (Eigen::Index j = 0; j <= t; ++j) {
                    dot += p(t, j) * dp(t, j);
                }
                for (Eigen::Index j = 0; j <= t; ++j) {
                    ds(t, j) = p(t, j) * (dp(t, j) - dot) * scale;
                }
            }
            if (tp.needs_grad(q)) {
                tp.grad(q).middleCols(h * d, d).noalias() += ds * kv.middleCols(h * d, d);
            }
            if (tp.needs_grad(k)) {
                tp.grad(k).middleCols(h * d, d).noalias() += ds.transpose() * qv.middleCols(h * d, d);
            }
        }
    });
}

template <class T>
Var select_row(Tape<T>& tape, Var x, std::size_t r) {
    const auto& xv = tape.value(x);
    if (static_cast<Eigen::Index>(r) >= xv.rows()) {
        throw Error("select_row: row out of range");
    }
    Matrix<T> out = xv.row(static_cast<Eigen::Index>(r));
    Var out_var{tape.size()};
    return tape.record(std::move(out), {x}, [x, r, out_var](Tape<T>& tp) {
        tp.grad(x).row(static_cast<Eigen::Index>(r)) += tp.grad(out_var).row(0);
    });
}

template <class T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const Target> targets, T normalizer) {
    const auto& lv = tape.value(logits);
    if (!(normalizer > T(0))) {
        throw Error("cross_entropy: normalizer must be positive");
    }
    double total = 0.0;
    for (const auto& tg : targets) {
        if (static_cast<Eigen::Index>(tg.row) >= lv.rows() || tg.label < 0 || tg.label >= lv.cols()) {
            throw Error(fmt::format("cross_entropy: target (row {}, label {}) out of range", tg.row, tg.label));
        }
        const auto row = lv.row(static_cast<Eigen::Index>(tg.row));
        const T mx = row.maxCoeff();
        const T lse = mx + std::log((row.array() - mx).exp().sum());
        total += static_cast<double>(lse - row(tg.label));
    }
    Matrix<T> out(1, 1);
    out(0, 0) = static_cast<T>(total / static_cast<double>(normalizer));
    std::vector<Target> tg_copy(targets.begin(), targets.end());
    Var out_var{tape.size()};
    return tape.record(std::move(out), {logits}, [logits, out_var, normalizer, tg_copy = std::move(tg_copy)](Tape<T>& tp) {
        const T g = tp.grad(out_var)(0, 0) / normalizer;
        const auto& lv = tp.value(logits);
        auto& gl = tp.grad(logits);
        for (const auto& tg : tg_copy) {
            const auto r = static_cast<Eigen::Index>(tg.row);
            const auto row = lv.row(r);
            const T mx = row.maxCoeff();
            Eigen::Array<T, 1, Eigen::Dynamic> e = (row.array() - mx).exp();
            e /= e.sum();
            gl.row(r) += (e * g).matrix();
            gl(r, tg.label) -= g;
        }
    });
}

template <class T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits) {
    Matrix<T> out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const T mx = logits.row(r).maxCoeff();
        const T lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
        out.row(r) = logits.row(r).array() - lse;
    }
    return out;
}

#define BABYIT_INSTANTIATE(T)                                                                   \
    template class Tape<T>;                                                                     \
    template Var embedding<T>(Tape<T>&, Var, std::span<const TokenId>);                         \
    template Var matmul<T>(Tape<T>&, Var, Var);                                                 \
    template Var matmul_transposed<T>(Tape<T>&, Var, Var);                                      \
    template Var add<T>(Tape<T>&, Var, Var);                                                    \
    template Var mul<T>(Tape<T>&, Var, Var);                                                    \
    template Var silu<T>(Tape<T>&, Var);                                                        \
    template Var rms_norm<T>(Tape<T>&, Var, Var, T);                                            \
    template Var rope<T>(Tape<T>&, Var, int, double);                                           \
    template Var causal_attention<T>(Tape<T>&, Var, Var, Var, int);                             \
    template Var select_row<T>(Tape<T>&, Var, std::size_t);                                     \
    template Var cross_entropy<T>(Tape<T>&, Var, std::span<const Target>, T);                   \
    template Matrix<T> log_softmax_rows<T>(const Matrix<T>&);

BABYIT_INSTANTIATE(float)
BABYIT_INSTANTIATE(double)

#undef BABYIT_INSTANTIATE

}  // namespace babyit::ag

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tinyadapt/errors.hpp"
#include "tinyadapt/rng.hpp"
#include "tinyadapt/tensor.hpp"

namespace tinyadapt {

using TokenId = std::int32_t;

namespace ops_detail {

template <class T>
using NodeT = detail::Node<T>;

template <class T>
void require_rank2(const TensorT<T>& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <class T>
void require_same(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

/// Row-major [rows x cols] -> [cols x rows].
template <class T>
std::vector<T> transpose(std::span<const T> v, std::size_t rows, std::size_t cols) {
    std::vector<T> out(v.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = v[r * cols + c];
    return out;
}

}  // namespace ops_detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    ops_detail::require_same(a, b, "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return TensorT<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()},
                               [pa = a.node(), pb = b.node()](detail::Node<T>& self) {
                                   for (auto* p : {pa.get(), pb.get()}) {
                                       if (!p->requires_grad) continue;
                                       auto& g = p->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                   }
                               });
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    ops_detail::require_same(a, b, "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return TensorT<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()},
                               [pa = a.node(), pb = b.node()](detail::Node<T>& self) {
                                   if (pa->requires_grad) {
                                       auto& g = pa->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                                   }
                                   if (pb->requires_grad) {
                                       auto& g = pb->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
                                   }
                               });
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    ops_detail::require_same(a, b, "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return TensorT<T>::from_op(a.shape(), std::move(out), {a.node(), b.node()},
                               [pa = a.node(), pb = b.node()](detail::Node<T>& self) {
                                   if (pa->requires_grad) {
                                       auto& g = pa->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
                                   }
                                   if (pb->requires_grad) {
                                       auto& g = pb->grad_buffer();
                                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
                                   }
                               });
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T factor) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
    return TensorT<T>::from_op(a.shape(), std::move(out), {a.node()},
                               [pa = a.node(), factor](detail::Node<T>& self) {
                                   auto& g = pa->grad_buffer();
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
                               });
}

template <class T>
TensorT<T> silu(const TensorT<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = a.data()[i];
        out[i] = x / (T(1) + std::exp(-x));
    }
    return TensorT<T>::from_op(a.shape(), std::move(out), {a.node()}, [pa = a.node()](detail::Node<T>& self) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T x = pa->data[i];
            const T s = T(1) / (T(1) + std::exp(-x));
            g[i] += self.grad[i] * s * (T(1) + x * (T(1) - s));
        }
    });
}

/// log(sigmoid(x)) elementwise, evaluated without overflow for large |x|.
template <class T>
TensorT<T> log_sigmoid(const TensorT<T>& a) {
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const T x = a.data()[i];
        out[i] = std::min(x, T(0)) - std::log1p(std::exp(-std::abs(x)));
    }
    return TensorT<T>::from_op(a.shape(), std::move(out), {a.node()}, [pa = a.node()](detail::Node<T>& self) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            // d/dx log sigmoid(x) = sigmoid(-x)
            const T x = pa->data[i];
            const T s = x >= 0 ? std::exp(-x) / (T(1) + std::exp(-x)) : T(1) / (T(1) + std::exp(x));
            g[i] += self.grad[i] * s;
        }
    });
}

template <class T>
TensorT<T> sum(const TensorT<T>& a) {
    T total = 0;
    for (const T v : a.data()) total += v;
    return TensorT<T>::from_op({1}, {total}, {a.node()}, [pa = a.node()](detail::Node<T>& self) {
        auto& g = pa->grad_buffer();
        for (auto& v : g) v += self.grad[0];
    });
}

/// Sum of a list of single-element tensors.
template <class T>
TensorT<T> add_scalars(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw DataError("add_scalars: empty list");
    TensorT<T> acc = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
    return acc;
}

/// Inverted dropout; identity when p == 0.
template <class T>
TensorT<T> dropout(const TensorT<T>& a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    if (p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
    auto mask = std::make_shared<std::vector<T>>(a.numel());
    const T keep_scale = T(1.0 / (1.0 - p));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
        out[i] = a.data()[i] * (*mask)[i];
    }
    return TensorT<T>::from_op(a.shape(), std::move(out), {a.node()}, [pa = a.node(), mask](detail::Node<T>& self) {
        auto& g = pa->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// Matrix products

/// a[m x k] * b[k x n] -> [m x n]
template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    ops_detail::require_rank2(a, "matmul");
    ops_detail::require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const auto A = a.data();
    const auto B = b.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
        }
    }
    return TensorT<T>::from_op({m, n}, std::move(out), {a.node(), b.node()},
                               [pa = a.node(), pb = b.node(), m, k, n](detail::Node<T>& self) {
                                   const auto& G = self.grad;
                                   if (pa->requires_grad) {
                                       auto& ga = pa->grad_buffer();
                                       const auto bt = ops_detail::transpose<T>(pb->data, k, n);
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < n; ++j) {
                                               const T gv = G[i * n + j];
                                               for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * bt[j * k + p];
                                           }
                                   }
                                   if (pb->requires_grad) {
                                       auto& gb = pb->grad_buffer();
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t p = 0; p < k; ++p) {
                                               const T av = pa->data[i * k + p];
                                               for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                                           }
                                   }
                               });
}

/// x[m x in] * w[out x in]^T -> [m x out]; the projection convention used by
/// every weight matrix in the model.
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w) {
    ops_detail::require_rank2(x, "linear");
    ops_detail::require_rank2(w, "linear");
    if (x.dim(1) != w.dim(1)) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                             shape_str(w.shape()));
    }
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(0);
    std::vector<T> out(m * n, T(0));
    const auto X = x.data();
    const auto wt = ops_detail::transpose<T>(w.data(), n, k);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T xv = X[i * k + p];
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += xv * wt[p * n + j];
        }
    }
    return TensorT<T>::from_op({m, n}, std::move(out), {x.node(), w.node()},
                               [px = x.node(), pw = w.node(), m, k, n](detail::Node<T>& self) {
                                   const auto& G = self.grad;
                                   if (px->requires_grad) {
                                       auto& gx = px->grad_buffer();
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < n; ++j) {
                                               const T gv = G[i * n + j];
                                               for (std::size_t p = 0; p < k; ++p) gx[i * k + p] += gv * pw->data[j * k + p];
                                           }
                                   }
                                   if (pw->requires_grad) {
                                       auto& gw = pw->grad_buffer();
                                       for (std::size_t i = 0; i < m; ++i)
                                           for (std::size_t j = 0; j < n; ++j) {
                                               const T gv = G[i * n + j];
                                               for (std::size_t p = 0; p < k; ++p) gw[j * k + p] += gv * px->data[i * k + p];
                                           }
                                   }
                               });
}

// ---------------------------------------------------------------------------
// Normalization and softmax

/// out = x / sqrt(mean(x^2) + eps) * gain over the trailing dimension.
template <class T>
TensorT<T> rms_norm(const TensorT<T>& x, const TensorT<T>& gain, T eps) {
    if (gain.rank() != 1) throw DimensionError("rms_norm: gain must be a vector, got " + shape_str(gain.shape()));
    const std::size_t d = gain.dim(0);
    if (x.shape().back() != d) {
        throw DimensionError("rms_norm: trailing dim of " + shape_str(x.shape()) + " does not match gain " +
                             shape_str(gain.shape()));
    }
    if (!(eps > T(0))) throw NumericError("rms_norm: eps must be positive");
    const std::size_t rows = x.numel() / d;
    auto inv = std::make_shared<std::vector<T>>(rows);
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        T ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += x.data()[r * d + j] * x.data()[r * d + j];
        (*inv)[r] = T(1) / std::sqrt(ss / T(d) + eps);
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.data()[r * d + j] * (*inv)[r] * gain.data()[j];
    }
    check_finite<T>(out, "rms_norm");
    return TensorT<T>::from_op(x.shape(), std::move(out), {x.node(), gain.node()},
                               [px = x.node(), pg = gain.node(), inv, rows, d](detail::Node<T>& self) {
                                   const auto& G = self.grad;
                                   const auto& X = px->data;
                                   const auto& Gain = pg->data;
                                   if (px->requires_grad) {
                                       auto& gx = px->grad_buffer();
                                       for (std::size_t r = 0; r < rows; ++r) {
                                           const T s = (*inv)[r];
                                           T dot = 0;
                                           for (std::size_t j = 0; j < d; ++j) dot += G[r * d + j] * Gain[j] * X[r * d + j];
                                           const T c = s * s * s * dot / T(d);
                                           for (std::size_t j = 0; j < d; ++j)
                                               gx[r * d + j] += s * Gain[j] * G[r * d + j] - c * X[r * d + j];
                                       }
                                   }
                                   if (pg->requires_grad) {
                                       auto& gg = pg->grad_buffer();
                                       for (std::size_t r = 0; r < rows; ++r)
                                           for (std::size_t j = 0; j < d; ++j) gg[j] += G[r * d + j] * X[r * d + j] * (*inv)[r];
                                   }
                               });
}

/// Row-wise log-softmax, stabilized by subtracting the row maximum.
template <class T>
TensorT<T> log_softmax_rows(const TensorT<T>& x) {
    ops_detail::require_rank2(x, "log_softmax_rows");
    check_finite<T>(x.data(), "log_softmax_rows input");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(x.numel());
    for (std::size_t r = 0; r < m; ++r) {
        const T* row = x.data().data() + r * n;
        const T mx = *std::max_element(row, row + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
        const T lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
    }
    return TensorT<T>::from_op(x.shape(), std::move(out), {x.node()}, [px = x.node(), m, n](detail::Node<T>& self) {
        auto& g = px->grad_buffer();
        for (std::size_t r = 0; r < m; ++r) {
            T gs = 0;
            for (std::size_t j = 0; j < n; ++j) gs += self.grad[r * n + j];
            for (std::size_t j = 0; j < n; ++j)
                g[r * n + j] += self.grad[r * n + j] - std::exp(self.data[r * n + j]) * gs;
        }
    });
}

/// Sum of x[t, targets[t]] over positions where mask[t] is set.
template <class T>
TensorT<T> pick_sum(const TensorT<T>& x, std::span<const TokenId> targets, const std::vector<bool>& mask) {
    ops_detail::require_rank2(x, "pick_sum");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (targets.size() != rows || mask.size() != rows) {
        throw DimensionError("pick_sum: " + std::to_string(targets.size()) + " targets / " +
                             std::to_string(mask.size()) + " mask entries for " + shape_str(x.shape()));
    }
    for (const auto t : targets) {
        if (t < 0 || static_cast<std::size_t>(t) >= cols) {
            throw IndexError("target id " + std::to_string(t) + " outside [0, " + std::to_string(cols) + ")");
        }
    }
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r)
        if (mask[r]) total += x.data()[r * cols + static_cast<std::size_t>(targets[r])];
    std::vector<TokenId> tg(targets.begin(), targets.end());
    return TensorT<T>::from_op({1}, {total}, {x.node()},
                               [px = x.node(), tg = std::move(tg), mask, cols](detail::Node<T>& self) {
                                   auto& g = px->grad_buffer();
                                   for (std::size_t r = 0; r < tg.size(); ++r)
                                       if (mask[r]) g[r * cols + static_cast<std::size_t>(tg[r])] += self.grad[0];
                               });
}

/// Mean over masked positions of -log_softmax(logits)[t, targets[t]].
template <class T>
TensorT<T> cross_entropy_next_token(const TensorT<T>& logits, std::span<const TokenId> targets,
                                    const std::vector<bool>& mask) {
    std::size_t count = 0;
    for (const bool b : mask) count += b ? 1 : 0;
    if (count == 0) throw DataError("cross_entropy_next_token: mask selects no positions (empty loss)");
    auto lp = log_softmax_rows(logits);
    auto loss = scale(pick_sum(lp, targets, mask), T(-1) / T(count));
    check_finite<T>(loss.data(), "cross_entropy_next_token");
    return loss;
}

// ---------------------------------------------------------------------------
// Transformer pieces

/// Row gather from an embedding table[V x d].
template <class T>
TensorT<T> embedding(const TensorT<T>& table, std::span<const TokenId> ids) {
    ops_detail::require_rank2(table, "embedding");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    if (ids.empty()) throw DimensionError("embedding: empty id list");
    std::vector<T> out(ids.size() * d);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
            throw IndexError("token id " + std::to_string(ids[t]) + " outside vocabulary of " + std::to_string(vocab));
        }
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[t]) * d), d,
                    out.begin() + static_cast<std::ptrdiff_t>(t * d));
    }
    std::vector<TokenId> idv(ids.begin(), ids.end());
    return TensorT<T>::from_op({ids.size(), d}, std::move(out), {table.node()},
                               [pt = table.node(), idv = std::move(idv), d](detail::Node<T>& self) {
                                   auto& g = pt->grad_buffer();
                                   for (std::size_t t = 0; t < idv.size(); ++t)
                                       for (std::size_t j = 0; j < d; ++j)
                                           g[static_cast<std::size_t>(idv[t]) * d + j] += self.grad[t * d + j];
                               });
}

/// Rotary position encoding over x[T x d] split into n_heads heads; dims
/// (2i, 2i+1) of each head rotate by pos * theta^(-2i/head_dim).
template <class T>
TensorT<T> rope(const TensorT<T>& x, std::size_t n_heads, double theta) {
    ops_detail::require_rank2(x, "rope");
    const std::size_t seq = x.dim(0), d = x.dim(1);
    if (n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0) {
        throw DimensionError("rope: width " + std::to_string(d) + " does not split into " + std::to_string(n_heads) +
                             " even-sized heads");
    }
    const std::size_t hd = d / n_heads;
    auto cs = std::make_shared<std::vector<T>>(seq * hd);  // cos, sin interleaved per pair
    for (std::size_t t = 0; t < seq; ++t)
        for (std::size_t i = 0; i < hd / 2; ++i) {
            const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
            const double ang = static_cast<double>(t) * freq;
            (*cs)[t * hd + 2 * i] = static_cast<T>(std::cos(ang));
            (*cs)[t * hd + 2 * i + 1] = static_cast<T>(std::sin(ang));
        }
    std::vector<T> out(x.numel());
    for (std::size_t t = 0; t < seq; ++t)
        for (std::size_t h = 0; h < n_heads; ++h)
            for (std::size_t i = 0; i < hd / 2; ++i) {
                const std::size_t base = t * d + h * hd + 2 * i;
                const T c = (*cs)[t * hd + 2 * i], s = (*cs)[t * hd + 2 * i + 1];
                const T x0 = x.data()[base], x1 = x.data()[base + 1];
                out[base] = x0 * c - x1 * s;
                out[base + 1] = x0 * s + x1 * c;
            }
    return TensorT<T>::from_op(x.shape(), std::move(out), {x.node()},
                               [px = x.node(), cs, seq, d, hd, n_heads](detail::Node<T>& self) {
                                   auto& g = px->grad_buffer();
                                   for (std::size_t t = 0; t < seq; ++t)
                                       for (std::size_t h = 0; h < n_heads; ++h)
                                           for (std::size_t i = 0; i < hd / 2; ++i) {
                                               const std::size_t base = t * d + h * hd + 2 * i;
                                               const T c = (*cs)[t * hd + 2 * i], s = (*cs)[t * hd + 2 * i + 1];
                                               const T g0 = self.grad[base], g1 = self.grad[base + 1];
                                               g[base] += g0 * c + g1 * s;
                                               g[base + 1] += -g0 * s + g1 * c;
                                           }
                               });
}

/// Multi-head causal self-attention over already-projected q, k, v [T x d].
/// Position t attends to positions <= t only.
template <class T>
TensorT<T> causal_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v, std::size_t n_heads) {
    ops_detail::require_same(q, k, "causal_attention");
    ops_detail::require_same(q, v, "causal_attention");
    ops_detail::require_rank2(q, "causal_attention");
    const std::size_t seq = q.dim(0), d = q.dim(1);
    if (n_heads == 0 || d % n_heads != 0) throw DimensionError("causal_attention: bad head count");
    const std::size_t hd = d / n_heads;
    const T inv_sqrt = T(1) / std::sqrt(T(hd));
    // probs[h][t][u], u <= t
    auto probs = std::make_shared<std::vector<T>>(n_heads * seq * seq, T(0));
    std::vector<T> out(seq * d, T(0));
    const auto Q = q.data(), K = k.data(), V = v.data();
    for (std::size_t h = 0; h < n_heads; ++h) {
        for (std::size_t t = 0; t < seq; ++t) {
            T* p = probs->data() + (h * seq + t) * seq;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t u = 0; u <= t; ++u) {
                T s = 0;
                for (std::size_t j = 0; j < hd; ++j) s += Q[t * d + h * hd + j] * K[u * d + h * hd + j];
                p[u] = s * inv_sqrt;
                mx = std::max(mx, p[u]);
            }
            T z = 0;
            for (std::size_t u = 0; u <= t; ++u) {
                p[u] = std::exp(p[u] - mx);
                z += p[u];
            }
            for (std::size_t u = 0; u <= t; ++u) {
                p[u] /= z;
                for (std::size_t j = 0; j < hd; ++j) out[t * d + h * hd + j] += p[u] * V[u * d + h * hd + j];
            }
        }
    }
    return TensorT<T>::from_op(
        q.shape(), std::move(out), {q.node(), k.node(), v.node()},
        [pq = q.node(), pk = k.node(), pv = v.node(), probs, seq, d, hd, n_heads, inv_sqrt](detail::Node<T>& self) {
            const auto& G = self.grad;
            std::vector<T>* gq = pq->requires_grad ? &pq->grad_buffer() : nullptr;
            std::vector<T>* gk = pk->requires_grad ? &pk->grad_buffer() : nullptr;
            std::vector<T>* gv = pv->requires_grad ? &pv->grad_buffer() : nullptr;
            std::vector<T> dp(seq);
            for (std::size_t h = 0; h < n_heads; ++h) {
                for (std::size_t t = 0; t < seq; ++t) {
                    const T* p = probs->data() + (h * seq + t) * seq;
                    T dot = 0;
                    for (std::size_t u = 0; u <= t; ++u) {
                        T acc = 0;
                        for (std::size_t j = 0; j < hd; ++j) {
                            acc += G[t * d + h * hd + j] * pv->data[u * d + h * hd + j];
                            if (gv) (*gv)[u * d + h * hd + j] += p[u] * G[t * d + h * hd + j];
                        }
                        dp[u] = acc;
                        dot += p[u] * acc;
                    }
                    for (std::size_t u = 0; u <= t; ++u) {
                        const T ds = p[u] * (dp[u] - dot) * inv_sqrt;
                        for (std::size_t j = 0; j < hd; ++j) {
                            if (gq) (*gq)[t * d + h * hd + j] += ds * pk->data[u * d + h * hd + j];
                            if (gk) (*gk)[u * d + h * hd + j] += ds * pq->data[t * d + h * hd + j];
                        }
                    }
                }
            }
        });
}

}  // namespace tinyadapt

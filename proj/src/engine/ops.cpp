#include "tte/engine/ops.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <utility>

#include <Eigen/Core>

namespace tte::engine {

namespace {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <class T>
MatMap<T> as_matrix(std::vector<T>& v, std::size_t rows, std::size_t cols) {
    return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
ConstMatMap<T> as_matrix(const std::vector<T>& v, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// The message is only built when the check fails.
#define TTE_REQUIRE(ok, message)          \
    do {                                  \
        if (!(ok)) {                      \
            throw ConfigError(message);   \
        }                                 \
    } while (0)

template <class T, class Fwd, class Deriv>
Tensor<T> elementwise(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
    auto y = make_result<T>(x.shape(), {x});
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ys[i] = fwd(xs[i]);
    }
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        y.node()->backward = [xn, deriv](Node<T>& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                xn->grad[i] += self.grad[i] * deriv(xn->value[i], self.value[i]);
            }
        };
    }
    return y;
}

}  // namespace

template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    TTE_REQUIRE(x.rank() >= 1 && w.rank() == 2, "affine: expected x [..., in] and W [in, out]");
    const std::size_t in = x.shape().back();
    TTE_REQUIRE(w.dim(0) == in, "affine: inner dimensions disagree, x " + shape_str(x.shape()) + " vs W " +
                                shape_str(w.shape()));
    const std::size_t out = w.dim(1);
    TTE_REQUIRE(!b || (b.rank() == 1 && b.dim(0) == out), "affine: bias must have shape [" + std::to_string(out) + "]");
    const std::size_t rows = x.size() / in;

    Shape shape = x.shape();
    shape.back() = out;
    auto y = make_result<T>(shape, {x, w, b});
    auto Y = as_matrix(y.node()->value, rows, out);
    Y.noalias() = as_matrix(x.node()->value, rows, in) * as_matrix(w.node()->value, in, out);
    if (b) {
        Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.data().data(),
                                                                             static_cast<Eigen::Index>(out));
    }

    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        Node<T>* wn = w.node();
        Node<T>* bn = b ? b.node() : nullptr;
        y.node()->backward = [xn, wn, bn, rows, in, out](Node<T>& self) {
            auto dY = as_matrix(std::as_const(self.grad), rows, out);
            if (xn->requires_grad) {
                as_matrix(xn->grad, rows, in).noalias() += dY * as_matrix(std::as_const(wn->value), in, out).transpose();
            }
            if (wn->requires_grad) {
                as_matrix(wn->grad, in, out).noalias() +=
                    as_matrix(std::as_const(xn->value), rows, in).transpose() * dY;
            }
            if (bn && bn->requires_grad) {
                // Row-ordered loop: Eigen's vectorised column sums peel by address.
                const T* g = self.grad.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < out; ++c) {
                        bn->grad[c] += g[r * out + c];
                    }
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    TTE_REQUIRE(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto y = make_result<T>(a.shape(), {a, b});
    for (std::size_t i = 0; i < y.size(); ++i) {
        y.data()[i] = a.data()[i] + b.data()[i];
    }
    if (y.requires_grad()) {
        Node<T>* an = a.node();
        Node<T>* bn = b.node();
        y.node()->backward = [an, bn](Node<T>& self) {
            for (Node<T>* n : {an, bn}) {
                if (n->requires_grad) {
                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                        n->grad[i] += self.grad[i];
                    }
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return elementwise<T>(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> selu(const Tensor<T>& x) {
    const T alpha = static_cast<T>(kSeluAlpha);
    const T scale = static_cast<T>(kSeluScale);
    return elementwise<T>(
        x, [=](T v) { return v > T(0) ? scale * v : scale * alpha * std::expm1(v); },
        [=](T v, T) { return v > T(0) ? scale : scale * alpha * std::exp(v); });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
    return elementwise<T>(
        x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [=](T v, T) {
            return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        });
}

// Statistics, normalized activations and the backward reductions are kept in
// double for every T; with small batches the centered terms cancel heavily.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                     Mode mode, double momentum, double eps) {
    TTE_REQUIRE(x.rank() == 2, "batch_norm: expected [B, F], got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0);
    const std::size_t F = x.dim(1);
    TTE_REQUIRE(gamma.size() == F && beta.size() == F && stats.running_mean.size() == F &&
                stats.running_var.size() == F,
            "batch_norm: parameter size does not match F = " + std::to_string(F));
    if (mode == Mode::train) {
        TTE_REQUIRE(B >= 2, "batch_norm: train mode needs a batch of at least 2 rows, got " + std::to_string(B));
    }

    auto y = make_result<T>(x.shape(), {x, gamma, beta});
    const auto& xv = x.node()->value;
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(F);
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t f = 0; f < F; ++f) {
        double mean = 0;
        double var = 0;
        if (mode == Mode::train) {
            for (std::size_t i = 0; i < B; ++i) {
                mean += static_cast<double>(xv[i * F + f]);
            }
            mean /= static_cast<double>(B);
            for (std::size_t i = 0; i < B; ++i) {
                double c = static_cast<double>(xv[i * F + f]) - mean;
                var += c * c;
            }
            var /= static_cast<double>(B);
            rm[f] = static_cast<T>((1.0 - momentum) * static_cast<double>(rm[f]) + momentum * mean);
            rv[f] = static_cast<T>((1.0 - momentum) * static_cast<double>(rv[f]) +
                                   momentum * var * static_cast<double>(B) / static_cast<double>(B - 1));
        } else {
            mean = static_cast<double>(rm[f]);
            var = static_cast<double>(rv[f]);
        }
        inv_std[f] = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < B; ++i) {
            xhat[i * F + f] = (static_cast<double>(xv[i * F + f]) - mean) * inv_std[f];
            y.data()[i * F + f] = static_cast<T>(static_cast<double>(gamma.data()[f]) * xhat[i * F + f] +
                                                 static_cast<double>(beta.data()[f]));
        }
    }

    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        Node<T>* gn = gamma.node();
        Node<T>* bn = beta.node();
        y.node()->backward = [xn, gn, bn, B, F, mode, xhat = std::move(xhat),
                              inv_std = std::move(inv_std)](Node<T>& self) {
            const auto& dy = self.grad;
            for (std::size_t f = 0; f < F; ++f) {
                double sum_dy = 0;
                double sum_dy_xhat = 0;
                for (std::size_t i = 0; i < B; ++i) {
                    sum_dy += static_cast<double>(dy[i * F + f]);
                    sum_dy_xhat += static_cast<double>(dy[i * F + f]) * xhat[i * F + f];
                }
                if (gn->requires_grad) {
                    gn->grad[f] += static_cast<T>(sum_dy_xhat);
                }
                if (bn->requires_grad) {
                    bn->grad[f] += static_cast<T>(sum_dy);
                }
                if (!xn->requires_grad) {
                    continue;
                }
                const double g = static_cast<double>(gn->value[f]);
                if (mode == Mode::eval) {
                    for (std::size_t i = 0; i < B; ++i) {
                        xn->grad[i * F + f] += static_cast<T>(static_cast<double>(dy[i * F + f]) * g * inv_std[f]);
                    }
                    continue;
                }
                const double mean_dy = sum_dy / static_cast<double>(B);
                const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(B);
                for (std::size_t i = 0; i < B; ++i) {
                    xn->grad[i * F + f] += static_cast<T>(
                        g * inv_std[f] *
                        (static_cast<double>(dy[i * F + f]) - mean_dy - xhat[i * F + f] * mean_dy_xhat));
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    const std::size_t D = x.shape().back();
    TTE_REQUIRE(gamma.size() == D && beta.size() == D, "layer_norm: parameter size does not match last axis");
    const std::size_t rows = x.size() / D;
    auto y = make_result<T>(x.shape(), {x, gamma, beta});
    const auto& xv = x.node()->value;
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * D;
        double mean = 0;
        for (std::size_t j = 0; j < D; ++j) {
            mean += static_cast<double>(row[j]);
        }
        mean /= static_cast<double>(D);
        double var = 0;
        for (std::size_t j = 0; j < D; ++j) {
            const double c = static_cast<double>(row[j]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(D);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < D; ++j) {
            xhat[r * D + j] = (static_cast<double>(row[j]) - mean) * inv_std[r];
            y.data()[r * D + j] = static_cast<T>(static_cast<double>(gamma.data()[j]) * xhat[r * D + j] +
                                                 static_cast<double>(beta.data()[j]));
        }
    }
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        Node<T>* gn = gamma.node();
        Node<T>* bn = beta.node();
        y.node()->backward = [xn, gn, bn, rows, D, xhat = std::move(xhat),
                              inv_std = std::move(inv_std)](Node<T>& self) {
            std::vector<double> dxhat(D);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* dy = self.grad.data() + r * D;
                const double* xh = xhat.data() + r * D;
                double mean_dxhat = 0;
                double mean_dxhat_xhat = 0;
                for (std::size_t j = 0; j < D; ++j) {
                    const double d = static_cast<double>(dy[j]);
                    if (gn->requires_grad) {
                        gn->grad[j] += static_cast<T>(d * xh[j]);
                    }
                    if (bn->requires_grad) {
                        bn->grad[j] += dy[j];
                    }
                    dxhat[j] = d * static_cast<double>(gn->value[j]);
                    mean_dxhat += dxhat[j];
                    mean_dxhat_xhat += dxhat[j] * xh[j];
                }
                if (!xn->requires_grad) {
                    continue;
                }
                mean_dxhat /= static_cast<double>(D);
                mean_dxhat_xhat /= static_cast<double>(D);
                for (std::size_t j = 0; j < D; ++j) {
                    xn->grad[r * D + j] +=
                        static_cast<T>(inv_std[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat));
                }
            }
        };
    }
    return y;
}

namespace {

struct AttentionDims {
    std::size_t batch, seq, width, heads, head_dim;
};

template <class T>
AttentionDims attention_dims(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads) {
    TTE_REQUIRE(q.rank() == 3, "attention: expected [B, T, d], got " + shape_str(q.shape()));
    TTE_REQUIRE(k.shape() == q.shape(), "attention: q/k/v shapes differ");
    const std::size_t d = q.dim(2);
    TTE_REQUIRE(heads > 0 && d % heads == 0,
            "attention: width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
    return {q.dim(0), q.dim(1), d, heads, d / heads};
}

// Probabilities for every (batch, head): [B, H, T, T].
template <class T>
std::vector<T> attention_probs(const std::vector<T>& q, const std::vector<T>& k, const AttentionDims& a) {
    const T scale = T(1) / std::sqrt(static_cast<T>(a.head_dim));
    std::vector<T> p(a.batch * a.heads * a.seq * a.seq);
    for (std::size_t b = 0; b < a.batch; ++b) {
        for (std::size_t h = 0; h < a.heads; ++h) {
            T* P = p.data() + (b * a.heads + h) * a.seq * a.seq;
            for (std::size_t i = 0; i < a.seq; ++i) {
                const T* qi = q.data() + (b * a.seq + i) * a.width + h * a.head_dim;
                T max = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < a.seq; ++j) {
                    const T* kj = k.data() + (b * a.seq + j) * a.width + h * a.head_dim;
                    T s = 0;
                    for (std::size_t c = 0; c < a.head_dim; ++c) {
                        s += qi[c] * kj[c];
                    }
                    P[i * a.seq + j] = s * scale;
                    max = std::max(max, P[i * a.seq + j]);
                }
                T z = 0;
                for (std::size_t j = 0; j < a.seq; ++j) {
                    P[i * a.seq + j] = std::exp(P[i * a.seq + j] - max);
                    z += P[i * a.seq + j];
                }
                for (std::size_t j = 0; j < a.seq; ++j) {
                    P[i * a.seq + j] /= z;
                }
            }
        }
    }
    return p;
}

}  // namespace

template <class T>
std::vector<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads) {
    return attention_probs(q.node()->value, k.node()->value, attention_dims(q, k, heads));
}

template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads) {
    const auto a = attention_dims(q, k, heads);
    TTE_REQUIRE(v.shape() == q.shape(), "attention: q/k/v shapes differ");
    auto probs = attention_probs(q.node()->value, k.node()->value, a);
    auto y = make_result<T>(q.shape(), {q, k, v});
    const auto& vv = v.node()->value;
    for (std::size_t b = 0; b < a.batch; ++b) {
        for (std::size_t h = 0; h < a.heads; ++h) {
            const T* P = probs.data() + (b * a.heads + h) * a.seq * a.seq;
            for (std::size_t i = 0; i < a.seq; ++i) {
                T* out = y.data().data() + (b * a.seq + i) * a.width + h * a.head_dim;
                for (std::size_t j = 0; j < a.seq; ++j) {
                    const T pij = P[i * a.seq + j];
                    const T* vj = vv.data() + (b * a.seq + j) * a.width + h * a.head_dim;
                    for (std::size_t c = 0; c < a.head_dim; ++c) {
                        out[c] += pij * vj[c];
                    }
                }
            }
        }
    }

    if (y.requires_grad()) {
        Node<T>* qn = q.node();
        Node<T>* kn = k.node();
        Node<T>* vn = v.node();
        // Per (batch, head) gradients are accumulated in double and added to
        // the T buffers once; the softmax Jacobian rows sum to zero only up to
        // rounding otherwise.
        y.node()->backward = [qn, kn, vn, a, probs = std::move(probs)](Node<T>& self) {
            const double scale = 1.0 / std::sqrt(static_cast<double>(a.head_dim));
            const std::size_t n = a.seq * a.head_dim;
            std::vector<double> dP(a.seq * a.seq);
            std::vector<double> dq(n);
            std::vector<double> dk(n);
            std::vector<double> dv(n);
            for (std::size_t b = 0; b < a.batch; ++b) {
                for (std::size_t h = 0; h < a.heads; ++h) {
                    const T* P = probs.data() + (b * a.heads + h) * a.seq * a.seq;
                    auto at = [&](const std::vector<T>& buf, std::size_t t) {
                        return buf.data() + (b * a.seq + t) * a.width + h * a.head_dim;
                    };
                    std::fill(dq.begin(), dq.end(), 0.0);
                    std::fill(dk.begin(), dk.end(), 0.0);
                    std::fill(dv.begin(), dv.end(), 0.0);
                    // dP = dO V^T ; dV = P^T dO
                    for (std::size_t i = 0; i < a.seq; ++i) {
                        const T* dO = at(self.grad, i);
                        for (std::size_t j = 0; j < a.seq; ++j) {
                            const T* vj = at(vn->value, j);
                            const double pij = static_cast<double>(P[i * a.seq + j]);
                            double s = 0;
                            for (std::size_t c = 0; c < a.head_dim; ++c) {
                                s += static_cast<double>(dO[c]) * static_cast<double>(vj[c]);
                                dv[j * a.head_dim + c] += pij * static_cast<double>(dO[c]);
                            }
                            dP[i * a.seq + j] = s;
                        }
                    }
                    // dS = P o (dP - rowsum(dP o P)), scaled
                    for (std::size_t i = 0; i < a.seq; ++i) {
                        double dot = 0;
                        for (std::size_t j = 0; j < a.seq; ++j) {
                            dot += dP[i * a.seq + j] * static_cast<double>(P[i * a.seq + j]);
                        }
                        const T* qi = at(qn->value, i);
                        for (std::size_t j = 0; j < a.seq; ++j) {
                            const double ds = static_cast<double>(P[i * a.seq + j]) * (dP[i * a.seq + j] - dot) * scale;
                            const T* kj = at(kn->value, j);
                            for (std::size_t c = 0; c < a.head_dim; ++c) {
                                dq[i * a.head_dim + c] += ds * static_cast<double>(kj[c]);
                                dk[j * a.head_dim + c] += ds * static_cast<double>(qi[c]);
                            }
                        }
                    }
                    auto flush = [&](Node<T>* node, const std::vector<double>& g) {
                        if (!node->requires_grad) {
                            return;
                        }
                        for (std::size_t t = 0; t < a.seq; ++t) {
                            T* dst = node->grad.data() + (b * a.seq + t) * a.width + h * a.head_dim;
                            for (std::size_t c = 0; c < a.head_dim; ++c) {
                                dst[c] += static_cast<T>(g[t * a.head_dim + c]);
                            }
                        }
                    };
                    flush(qn, dq);
                    flush(kn, dk);
                    flush(vn, dv);
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionWeights<T>& p, std::size_t heads) {
    TTE_REQUIRE(x.rank() == 3, "multi_head_attention: expected [B, T, d], got " + shape_str(x.shape()));
    auto q = affine(x, p.wq, p.bq);
    auto k = affine(x, p.wk, p.bk);
    auto v = affine(x, p.wv, p.bv);
    return affine(scaled_dot_attention(q, k, v, heads), p.wo, p.bo);
}

template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    TTE_REQUIRE(logits.rank() == 2, "softmax_cross_entropy: expected [B, C]");
    const std::size_t B = logits.dim(0);
    const std::size_t C = logits.dim(1);
    TTE_REQUIRE(labels.size() == B, "softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                    std::to_string(B));
    auto probs = softmax_rows(logits);
    auto y = make_result<T>({1}, {logits});
    T loss = 0;
    const auto& z = logits.node()->value;
    for (std::size_t i = 0; i < B; ++i) {
        TTE_REQUIRE(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < C, "softmax_cross_entropy: label out of range");
        const T* row = z.data() + i * C;
        T max = *std::max_element(row, row + C);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            sum += std::exp(row[c] - max);
        }
        loss += max + std::log(sum) - row[labels[i]];
    }
    y.data()[0] = loss / static_cast<T>(B);
    if (y.requires_grad()) {
        Node<T>* ln = logits.node();
        std::vector<int> lab(labels.begin(), labels.end());
        y.node()->backward = [ln, B, C, probs = std::move(probs), lab = std::move(lab)](Node<T>& self) {
            const T g = self.grad[0] / static_cast<T>(B);
            for (std::size_t i = 0; i < B; ++i) {
                for (std::size_t c = 0; c < C; ++c) {
                    T onehot = static_cast<std::size_t>(lab[i]) == c ? T(1) : T(0);
                    ln->grad[i * C + c] += g * (probs[i * C + c] - onehot);
                }
            }
        };
    }
    return y;
}

template <class T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
    const std::size_t C = logits.shape().back();
    const std::size_t B = logits.size() / C;
    std::vector<T> p(logits.size());
    const auto& z = logits.node()->value;
    for (std::size_t i = 0; i < B; ++i) {
        const T* row = z.data() + i * C;
        T max = *std::max_element(row, row + C);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            p[i * C + c] = std::exp(row[c] - max);
            sum += p[i * C + c];
        }
        for (std::size_t c = 0; c < C; ++c) {
            p[i * C + c] /= sum;
        }
    }
    return p;
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
    TTE_REQUIRE(table.rank() == 2, "gather_rows: table must be [K, D]");
    const std::size_t K = table.dim(0);
    const std::size_t D = table.dim(1);
    auto y = make_result<T>({ids.size(), D}, {table});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        TTE_REQUIRE(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < K, "gather_rows: id out of range");
        std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * D), D,
                    y.data().begin() + static_cast<std::ptrdiff_t>(i * D));
    }
    if (y.requires_grad()) {
        Node<T>* tn = table.node();
        std::vector<int> rows(ids.begin(), ids.end());
        y.node()->backward = [tn, D, rows = std::move(rows)](Node<T>& self) {
            for (std::size_t i = 0; i < rows.size(); ++i) {
                T* dst = tn->grad.data() + static_cast<std::size_t>(rows[i]) * D;
                const T* src = self.grad.data() + i * D;
                for (std::size_t j = 0; j < D; ++j) {
                    dst[j] += src[j];
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> scale_shift(std::span<const T> z, const Tensor<T>& w, const Tensor<T>& b) {
    TTE_REQUIRE(w.rank() == 1 && b.shape() == w.shape(), "scale_shift: w and b must both be [D]");
    const std::size_t D = w.size();
    auto y = make_result<T>({z.size(), D}, {w, b});
    for (std::size_t i = 0; i < z.size(); ++i) {
        for (std::size_t j = 0; j < D; ++j) {
            y.data()[i * D + j] = z[i] * w.data()[j] + b.data()[j];
        }
    }
    if (y.requires_grad()) {
        Node<T>* wn = w.node();
        Node<T>* bn = b.node();
        std::vector<T> zs(z.begin(), z.end());
        y.node()->backward = [wn, bn, D, zs = std::move(zs)](Node<T>& self) {
            for (std::size_t i = 0; i < zs.size(); ++i) {
                for (std::size_t j = 0; j < D; ++j) {
                    const T g = self.grad[i * D + j];
                    if (wn->requires_grad) {
                        wn->grad[j] += g * zs[i];
                    }
                    if (bn->requires_grad) {
                        bn->grad[j] += g;
                    }
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> stack_tokens(const std::vector<Tensor<T>>& tokens) {
    TTE_REQUIRE(!tokens.empty(), "stack_tokens: no tokens");
    const Shape& first = tokens.front().shape();
    TTE_REQUIRE(first.size() == 2, "stack_tokens: tokens must be [B, D]");
    for (const auto& t : tokens) {
        TTE_REQUIRE(t.shape() == first, "stack_tokens: token shapes differ");
    }
    const std::size_t B = first[0];
    const std::size_t D = first[1];
    const std::size_t M = tokens.size();
    auto y = make_result<T>({B, M, D}, std::span<const Tensor<T>>(tokens));
    for (std::size_t m = 0; m < M; ++m) {
        const auto src = tokens[m].data();
        for (std::size_t i = 0; i < B; ++i) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * D), D,
                        y.data().begin() + static_cast<std::ptrdiff_t>((i * M + m) * D));
        }
    }
    if (y.requires_grad()) {
        std::vector<Node<T>*> nodes;
        for (const auto& t : tokens) {
            nodes.push_back(t.node());
        }
        y.node()->backward = [nodes = std::move(nodes), B, M, D](Node<T>& self) {
            for (std::size_t m = 0; m < M; ++m) {
                if (!nodes[m]->requires_grad) {
                    continue;
                }
                for (std::size_t i = 0; i < B; ++i) {
                    for (std::size_t j = 0; j < D; ++j) {
                        nodes[m]->grad[i * D + j] += self.grad[(i * M + m) * D + j];
                    }
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> prepend_token(const Tensor<T>& x, const Tensor<T>& token) {
    TTE_REQUIRE(x.rank() == 3, "prepend_token: expected [B, T, D]");
    const std::size_t B = x.dim(0);
    const std::size_t S = x.dim(1);
    const std::size_t D = x.dim(2);
    TTE_REQUIRE(token.size() == D, "prepend_token: token width does not match D");
    auto y = make_result<T>({B, S + 1, D}, {x, token});
    for (std::size_t b = 0; b < B; ++b) {
        auto dst = y.data().begin() + static_cast<std::ptrdiff_t>(b * (S + 1) * D);
        std::copy_n(token.data().begin(), D, dst);
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(b * S * D), S * D,
                    dst + static_cast<std::ptrdiff_t>(D));
    }
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        Node<T>* tn = token.node();
        y.node()->backward = [xn, tn, B, S, D](Node<T>& self) {
            for (std::size_t b = 0; b < B; ++b) {
                const T* src = self.grad.data() + b * (S + 1) * D;
                if (tn->requires_grad) {
                    for (std::size_t j = 0; j < D; ++j) {
                        tn->grad[j] += src[j];
                    }
                }
                if (xn->requires_grad) {
                    for (std::size_t j = 0; j < S * D; ++j) {
                        xn->grad[b * S * D + j] += src[D + j];
                    }
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> take_token(const Tensor<T>& x, std::size_t position) {
    TTE_REQUIRE(x.rank() == 3 && position < x.dim(1), "take_token: position out of range");
    const std::size_t B = x.dim(0);
    const std::size_t S = x.dim(1);
    const std::size_t D = x.dim(2);
    auto y = make_result<T>({B, D}, {x});
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((b * S + position) * D), D,
                    y.data().begin() + static_cast<std::ptrdiff_t>(b * D));
    }
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        y.node()->backward = [xn, B, S, D, position](Node<T>& self) {
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t j = 0; j < D; ++j) {
                    xn->grad[(b * S + position) * D + j] += self.grad[b * D + j];
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> mean_tokens(const Tensor<T>& x) {
    TTE_REQUIRE(x.rank() == 3, "mean_tokens: expected [B, T, D]");
    const std::size_t B = x.dim(0);
    const std::size_t S = x.dim(1);
    const std::size_t D = x.dim(2);
    auto y = make_result<T>({B, D}, {x});
    const T inv = T(1) / static_cast<T>(S);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t s = 0; s < S; ++s) {
            for (std::size_t j = 0; j < D; ++j) {
                y.data()[b * D + j] += x.data()[(b * S + s) * D + j] * inv;
            }
        }
    }
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        y.node()->backward = [xn, B, S, D, inv](Node<T>& self) {
            for (std::size_t b = 0; b < B; ++b) {
                for (std::size_t s = 0; s < S; ++s) {
                    for (std::size_t j = 0; j < D; ++j) {
                        xn->grad[(b * S + s) * D + j] += self.grad[b * D + j] * inv;
                    }
                }
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    TTE_REQUIRE(numel(shape) == x.size(), "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto y = make_result<T>(std::move(shape), {x});
    std::copy(x.data().begin(), x.data().end(), y.data().begin());
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        y.node()->backward = [xn](Node<T>& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                xn->grad[i] += self.grad[i];
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng, Mode mode) {
    TTE_REQUIRE(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0, 1)");
    if (mode == Mode::eval || rate == 0.0) {
        return x;
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(x.size());
    for (auto& m : mask) {
        m = keep(rng) ? scale : T(0);
    }
    auto y = make_result<T>(x.shape(), {x});
    for (std::size_t i = 0; i < mask.size(); ++i) {
        y.data()[i] = x.data()[i] * mask[i];
    }
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        y.node()->backward = [xn, mask = std::move(mask)](Node<T>& self) {
            for (std::size_t i = 0; i < mask.size(); ++i) {
                xn->grad[i] += self.grad[i] * mask[i];
            }
        };
    }
    return y;
}

template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights) {
    TTE_REQUIRE(weights.size() == x.size(), "weighted_sum: weight count does not match tensor size");
    auto y = make_result<T>({1}, {x});
    T s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        s += x.data()[i] * weights[i];
    }
    y.data()[0] = s;
    if (y.requires_grad()) {
        Node<T>* xn = x.node();
        std::vector<T> w(weights.begin(), weights.end());
        y.node()->backward = [xn, w = std::move(w)](Node<T>& self) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                xn->grad[i] += self.grad[0] * w[i];
            }
        };
    }
    return y;
}

#define TTE_INSTANTIATE_OPS(T)                                                                                \
    template Tensor<T> affine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> relu(const Tensor<T>&);                                                               \
    template Tensor<T> selu(const Tensor<T>&);                                                               \
    template Tensor<T> gelu(const Tensor<T>&);                                                               \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormStats<T>&,   \
                                  Mode, double, double);                                                      \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);             \
    template Tensor<T> scaled_dot_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t); \
    template std::vector<T> attention_weights(const Tensor<T>&, const Tensor<T>&, std::size_t);              \
    template Tensor<T> multi_head_attention(const Tensor<T>&, const AttentionWeights<T>&, std::size_t);      \
    template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);                        \
    template std::vector<T> softmax_rows(const Tensor<T>&);                                                  \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const int>);                                  \
    template Tensor<T> scale_shift(std::span<const T>, const Tensor<T>&, const Tensor<T>&);                  \
    template Tensor<T> stack_tokens(const std::vector<Tensor<T>>&);                                          \
    template Tensor<T> prepend_token(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> take_token(const Tensor<T>&, std::size_t);                                            \
    template Tensor<T> mean_tokens(const Tensor<T>&);                                                        \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
    template Tensor<T> dropout(const Tensor<T>&, double, std::mt19937_64&, Mode);                            \
    template Tensor<T> weighted_sum(const Tensor<T>&, std::span<const T>);

TTE_INSTANTIATE_OPS(float)
TTE_INSTANTIATE_OPS(double)

#undef TTE_INSTANTIATE_OPS

}  // namespace tte::engine

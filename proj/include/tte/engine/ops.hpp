#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tte/engine/tensor.hpp"

// Differentiable operations. Every function builds one graph node whose
// backward pass produces exact analytic gradients. Explicitly instantiated for
// float and double.
namespace tte::engine {

inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

// y = x W + b over the last axis of x; leading axes are treated as rows.
// `b` may be empty.
template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> relu(const Tensor<T>& x);

template <class T>
Tensor<T> selu(const Tensor<T>& x);

// Exact (erf) form.
template <class T>
Tensor<T> gelu(const Tensor<T>& x);

template <class T>
struct BatchNormStats {
    Tensor<T> running_mean;
    Tensor<T> running_var;
};

enum class Mode { train, eval };

// x: [B, F]. Train mode normalizes with the biased batch variance and moves
// the running estimates (unbiased variance) by `momentum`; eval mode uses the
// running estimates.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, double momentum = 0.1, double eps = 1e-5);

// Normalizes over the last axis.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

// q, k, v: [B, T, d]. Per head h: softmax(Q_h K_h^T / sqrt(d / heads)) V_h,
// heads concatenated along the last axis. No masking.
template <class T>
Tensor<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads);

// Attention probabilities [B, heads, T, T] for inspection; not differentiable.
template <class T>
std::vector<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t heads);

template <class T>
struct AttentionWeights {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

// x: [B, T, d] -> [B, T, d]
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionWeights<T>& p, std::size_t heads);

// Mean over the batch of -log softmax(logits)[label]. logits: [B, C].
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Row-wise softmax of a [B, C] tensor's values.
template <class T>
std::vector<T> softmax_rows(const Tensor<T>& logits);

// table: [K, D], ids in [0, K) -> [B, D]
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids);

// z: per-row scalars (constant) -> [B, D] with row i = z_i * w + b.
template <class T>
Tensor<T> scale_shift(std::span<const T> z, const Tensor<T>& w, const Tensor<T>& b);

// M tensors of shape [B, D] -> [B, M, D]
template <class T>
Tensor<T> stack_tokens(const std::vector<Tensor<T>>& tokens);

// [B, T, D] with a learned [D] row inserted at position 0 -> [B, T + 1, D]
template <class T>
Tensor<T> prepend_token(const Tensor<T>& x, const Tensor<T>& token);

// [B, T, D] -> [B, D] at sequence position `position`.
template <class T>
Tensor<T> take_token(const Tensor<T>& x, std::size_t position);

// [B, T, D] -> [B, D]
template <class T>
Tensor<T> mean_tokens(const Tensor<T>& x);

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Inverted dropout; identity when rate == 0 or mode == eval.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::mt19937_64& rng, Mode mode);

// sum_i x_i * w_i -> scalar. Reduces any tensor to a loss for gradient checks.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::span<const T> weights);

}  // namespace tte::engine

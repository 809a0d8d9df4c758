#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tte/engine/grad_check.hpp"
#include "tte/engine/ops.hpp"

// Gradient checks for every differentiable op at 64-bit precision. Shared by
// the unit tests and the acceptance binary.
namespace tte::testing {

using engine::Tensor;
using D = double;

struct OpCheck {
    std::string op;
    engine::GradCheckReport report;
};

inline Tensor<D> random_tensor(engine::Shape shape, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<D> v(engine::numel(shape));
    for (auto& x : v) {
        x = normal(gen);
    }
    return Tensor<D>::from(std::move(shape), std::move(v), true);
}

// Values bounded away from 0 so central differences never straddle a kink.
inline Tensor<D> away_from_zero(engine::Shape shape, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> mag(0.05, 2.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<D> v(engine::numel(shape));
    for (auto& x : v) {
        x = sign(gen) ? mag(gen) : -mag(gen);
    }
    return Tensor<D>::from(std::move(shape), std::move(v), true);
}

inline std::vector<D> random_weights(std::size_t n, std::mt19937_64& gen) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<D> w(n);
    for (auto& x : w) {
        x = normal(gen);
    }
    return w;
}

inline std::vector<OpCheck> op_grad_checks(std::uint64_t seed) {
    using namespace engine;
    std::mt19937_64 gen(seed);
    std::vector<OpCheck> out;
    auto reduce = [&](std::function<Tensor<D>()> f, std::vector<Tensor<D>> inputs, const std::string& name) {
        auto probe = f();
        auto w = random_weights(probe.size(), gen);
        auto loss = [f, w]() { return weighted_sum(f(), std::span<const D>(w)); };
        out.push_back({name, grad_check(loss, std::move(inputs))});
    };

    {
        auto x = random_tensor({3, 2, 4}, gen);
        auto w = random_tensor({4, 5}, gen);
        auto b = random_tensor({5}, gen);
        reduce([=] { return affine(x, w, b); }, {x, w, b}, "affine");
        reduce([=] { return affine(x, w, Tensor<D>()); }, {x, w}, "affine (no bias)");
    }
    {
        auto a = random_tensor({3, 4}, gen);
        auto b = random_tensor({3, 4}, gen);
        reduce([=] { return add(a, b); }, {a, b}, "add");
    }
    {
        auto x = away_from_zero({4, 5}, gen);
        reduce([=] { return relu(x); }, {x}, "relu");
        auto y = away_from_zero({4, 5}, gen);
        reduce([=] { return selu(y); }, {y}, "selu");
    }
    {
        auto x = random_tensor({4, 5}, gen, 2.0);
        reduce([=] { return gelu(x); }, {x}, "gelu");
    }
    {
        auto x = random_tensor({6, 3}, gen);
        auto g = random_tensor({3}, gen);
        auto b = random_tensor({3}, gen);
        reduce(
            [=] {
                BatchNormStats<D> stats{Tensor<D>::zeros({3}), Tensor<D>::from({3}, {1, 1, 1})};
                return batch_norm(x, g, b, stats, Mode::train);
            },
            {x, g, b}, "batch_norm (train)");
        BatchNormStats<D> fixed{random_tensor({3}, gen), Tensor<D>::from({3}, {0.5, 1.5, 2.0})};
        reduce(
            [=]() mutable { return batch_norm(x, g, b, fixed, Mode::eval); }, {x, g, b}, "batch_norm (eval)");
    }
    {
        auto x = random_tensor({2, 3, 6}, gen);
        auto g = random_tensor({6}, gen);
        auto b = random_tensor({6}, gen);
        reduce([=] { return layer_norm(x, g, b); }, {x, g, b}, "layer_norm");
    }
    {
        auto q = random_tensor({2, 4, 8}, gen);
        auto k = random_tensor({2, 4, 8}, gen);
        auto v = random_tensor({2, 4, 8}, gen);
        reduce([=] { return scaled_dot_attention(q, k, v, 2); }, {q, k, v}, "scaled_dot_attention");
    }
    {
        const std::size_t d = 8;
        auto x = random_tensor({2, 3, d}, gen);
        AttentionWeights<D> p{random_tensor({d, d}, gen, 0.4), random_tensor({d}, gen), random_tensor({d, d}, gen, 0.4),
                              random_tensor({d}, gen),         random_tensor({d, d}, gen, 0.4), random_tensor({d}, gen),
                              random_tensor({d, d}, gen, 0.4), random_tensor({d}, gen)};
        reduce([=] { return multi_head_attention(x, p, 2); },
               {x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo}, "multi_head_attention");
    }
    {
        auto logits = random_tensor({5, 3}, gen, 2.0);
        std::vector<int> labels{0, 2, 1, 1, 0};
        auto loss = [=] { return softmax_cross_entropy(logits, std::span<const int>(labels)); };
        out.push_back({"softmax_cross_entropy", grad_check(loss, {logits})});
    }
    {
        auto table = random_tensor({4, 3}, gen);
        std::vector<int> ids{3, 0, 3, 1};
        reduce([=] { return gather_rows(table, std::span<const int>(ids)); }, {table}, "gather_rows");
    }
    {
        auto z = random_weights(4, gen);
        auto w = random_tensor({3}, gen);
        auto b = random_tensor({3}, gen);
        reduce([=] { return scale_shift(std::span<const D>(z), w, b); }, {w, b}, "scale_shift");
    }
    {
        auto a = random_tensor({2, 3}, gen);
        auto b = random_tensor({2, 3}, gen);
        auto c = random_tensor({2, 3}, gen);
        reduce([=] { return stack_tokens<D>({a, b, c}); }, {a, b, c}, "stack_tokens");
    }
    {
        auto x = random_tensor({2, 3, 4}, gen);
        auto t = random_tensor({4}, gen);
        reduce([=] { return prepend_token(x, t); }, {x, t}, "prepend_token");
        reduce([=] { return take_token(x, 1); }, {x}, "take_token");
        reduce([=] { return mean_tokens(x); }, {x}, "mean_tokens");
        reduce([=] { return reshape(x, {2, 12}); }, {x}, "reshape");
    }
    {
        auto x = random_tensor({4, 6}, gen);
        const std::uint64_t mask_seed = gen();
        reduce(
            [=] {
                std::mt19937_64 rng(mask_seed);  // same mask on every evaluation
                return dropout(x, 0.3, rng, Mode::train);
            },
            {x}, "dropout");
    }
    return out;
}

}  // namespace tte::testing

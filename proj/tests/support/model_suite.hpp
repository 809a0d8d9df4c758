#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tte/engine/grad_check.hpp"
#include "tte/models.hpp"
#include "tte/trainer.hpp"

// Whole-model checks shared by the unit tests and the acceptance binary.
namespace tte::testing {

// Small mixed-type table plus both encoder inputs for it.
struct ToyProblem {
    DatasetTable table;
    BaseEncoding encoding;
    EncodedInputs base;
    EmbeddedTensor llm;
    std::vector<int> labels;
};

inline ToyProblem make_toy(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t classes = 3) {
    std::mt19937_64 gen(seed);
    ToyProblem p;
    auto& t = p.table;
    t.name = "toy";
    t.schema = {{"colour", FeatureKind::categorical, 0},
                {"weight", FeatureKind::numeric, 1},
                {"shape", FeatureKind::categorical, 2}};
    const char* colours[] = {"red", "green", "blue", "teal"};
    const char* shapes[] = {"round", "square"};
    std::normal_distribution<double> normal(10.0, 4.0);
    for (std::size_t i = 0; i < n; ++i) {
        double w = normal(gen);
        t.cells.push_back({colours[gen() % 4], std::nullopt});
        t.cells.push_back({std::to_string(w), w});
        t.cells.push_back({shapes[gen() % 2], std::nullopt});
        t.labels.push_back(static_cast<int>(gen() % classes));
    }
    for (std::size_t c = 0; c < classes; ++c) {
        t.class_names.push_back(std::to_string(c));
    }
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    p.encoding = BaseEncoding::fit(t, all);
    p.base = encode_inputs(p.encoding, t);
    p.labels = t.labels;

    p.llm.n = n;
    p.llm.m = 3;
    p.llm.d = d;
    p.llm.data.resize(n * 3 * d);
    std::normal_distribution<float> e(0.0f, 0.5f);
    for (auto& x : p.llm.data) {
        x = e(gen);
    }
    return p;
}

// Downscaled configuration: token_dim 16, 3 hidden layers, 4 transformer
// layers with 8 heads.
inline ModelConfig small_config(Architecture arch, EncoderMode mode) {
    ModelConfig c;
    c.architecture = arch;
    c.encoder_mode = mode;
    c.token_dim = 16;
    c.hidden = {12, 8, 4};
    c.heads = 8;
    c.layers = 4;
    return c;
}

inline EncoderSpec encoder_for(const ToyProblem& p, const ModelConfig& c) {
    return c.encoder_mode == EncoderMode::base ? EncoderSpec::base(p.encoding, c.token_dim)
                                               : EncoderSpec::with_llm(p.llm.m, p.llm.d, c.token_dim);
}

// Every coordinate of small tensors, a seeded sample of the larger ones.
inline std::vector<std::size_t> probe_indices(std::size_t size, std::size_t cap, std::mt19937_64& gen) {
    std::vector<std::size_t> all(size);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (size <= cap) {
        return all;
    }
    std::shuffle(all.begin(), all.end(), gen);
    all.resize(cap);
    std::sort(all.begin(), all.end());
    return all;
}

inline constexpr std::size_t kProbesPerTensor = 96;

// Float analytic gradients of the training loss against 64-bit central
// differences taken on a double copy of the same model. The step is small
// enough that differences rarely straddle a ReLU kink.
inline engine::GradCheckReport model_grad_check(Architecture arch, EncoderMode mode, std::uint64_t seed) {
    auto problem = make_toy(seed, 5, 8);
    auto config = small_config(arch, mode);
    auto encoder = encoder_for(problem, config);
    Model<float> model(config, encoder, 3, seed);
    Model<double> twin(config, encoder, 3, seed);
    twin.params().copy_values_from(model.params());

    const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
    std::vector<int> y;
    for (auto r : rows) {
        y.push_back(problem.labels[r]);
    }
    ModelInputs inputs{&problem.base, &problem.llm};

    auto loss = engine::softmax_cross_entropy(model.forward(inputs, rows, engine::Mode::train), std::span<const int>(y));
    loss.backward();

    std::vector<std::vector<double>> analytic;
    std::vector<std::vector<double>> numeric;
    auto loss_fn = [&] {
        return engine::softmax_cross_entropy(twin.forward(inputs, rows, engine::Mode::train), std::span<const int>(y));
    };
    std::mt19937_64 pick(seed);
    const auto& entries = model.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (!entries[i].trainable) {
            continue;
        }
        auto g = entries[i].tensor.grad();
        auto idx = probe_indices(g.size(), kProbesPerTensor, pick);
        std::vector<double> a;
        for (auto j : idx) {
            a.push_back(static_cast<double>(g[j]));
        }
        analytic.push_back(std::move(a));
        numeric.push_back(engine::numeric_gradient_at(loss_fn, twin.params().entries()[i].tensor, idx, 1e-6));
    }
    return engine::compare_gradients(analytic, numeric);
}

inline constexpr std::size_t kPermutationFeatures = 5;

// Default (full-width) FT-Transformer for the permutation checks.
inline Model<float> permutation_model(std::uint64_t seed) {
    ModelConfig config;
    config.architecture = Architecture::ft_transformer;
    config.encoder_mode = EncoderMode::with_llm;
    return Model<float>(config, EncoderSpec::with_llm(kPermutationFeatures, 8, config.token_dim), 2, seed);
}

// Largest logit change, in eval mode, when random feature tokens are permuted.
inline double permutation_gap(Model<float>& model, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    const std::size_t M = kPermutationFeatures;
    const std::size_t B = 3;
    const std::size_t D = model.config().token_dim;
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> tokens(B * M * D);
    for (auto& x : tokens) {
        x = normal(gen);
    }
    std::vector<std::size_t> perm(M);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do {
        std::shuffle(perm.begin(), perm.end(), gen);
    } while (std::is_sorted(perm.begin(), perm.end()));
    std::vector<float> permuted(tokens.size());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t m = 0; m < M; ++m) {
            std::copy_n(tokens.begin() + static_cast<std::ptrdiff_t>((b * M + perm[m]) * D), D,
                        permuted.begin() + static_cast<std::ptrdiff_t>((b * M + m) * D));
        }
    }
    auto a = model.classify(engine::Tensor<float>::from({B, M, D}, tokens), engine::Mode::eval);
    auto c = model.classify(engine::Tensor<float>::from({B, M, D}, permuted), engine::Mode::eval);
    double gap = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        gap = std::max(gap, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(c.data()[i])));
    }
    return gap;
}

}  // namespace tte::testing

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tte/dataset.hpp"
#include "tte/embed.hpp"
#include "tte/engine/ops.hpp"
#include "tte/engine/param_store.hpp"

namespace tte {

enum class Architecture { mlp, resnet, ft_transformer };
enum class EncoderMode { base, with_llm };
enum class AdapterActivation { relu, linear };
enum class Pooling { flatten, mean };

std::string_view to_string(Architecture a);
std::string_view to_string(EncoderMode m);
Architecture parse_architecture(std::string_view text);
// Accepts "base", "with-llm" and "llm".
EncoderMode parse_encoder_mode(std::string_view text);

// JSON: {architecture, encoder_mode, token_dim, heads, layers, hidden, dropout,
// adapter_activation, pooling, ff_dim}
struct ModelConfig {
    Architecture architecture = Architecture::mlp;
    EncoderMode encoder_mode = EncoderMode::base;
    std::size_t token_dim = 1024;
    std::size_t heads = 8;
    std::size_t layers = 4;
    std::vector<std::size_t> hidden{256, 128, 32};
    double dropout = 0.0;
    AdapterActivation adapter_activation = AdapterActivation::relu;
    Pooling pooling = Pooling::flatten;
    std::size_t ff_dim = 0;  // 0 means 2 * token_dim

    std::size_t feed_forward_dim() const { return ff_dim ? ff_dim : 2 * token_dim; }
    void validate() const;

    static ModelConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

// Categorical vocabularies and numeric standardization fitted on training rows.
// Unseen categories map to the UNK id, which equals the vocabulary size.
struct BaseEncoding {
    std::vector<FeatureKind> kinds;
    std::vector<std::vector<std::string>> vocab;  // per column; empty for numeric
    std::vector<double> mean;
    std::vector<double> std;

    static BaseEncoding fit(const DatasetTable& table, std::span<const std::size_t> rows);

    std::size_t unk_id(std::size_t col) const { return vocab[col].size(); }

    nlohmann::json to_json() const;
    static BaseEncoding from_json(const nlohmann::json& doc);
};

// Per-cell encoder inputs for a whole table: category ids (-1 on numeric
// columns) and z-scores (0 on categorical columns and missing numerics).
struct EncodedInputs {
    std::size_t n = 0;
    std::size_t m = 0;
    std::vector<int> ids;
    std::vector<double> z;
};

EncodedInputs encode_inputs(const BaseEncoding& encoding, const DatasetTable& table);

struct EncoderSpec {
    EncoderMode mode = EncoderMode::base;
    std::size_t token_dim = 1024;
    std::size_t source_dim = 0;  // with-llm only
    std::vector<FeatureKind> kinds;
    std::vector<std::size_t> vocab_sizes;  // K per categorical column (UNK excluded)

    std::size_t features() const { return kinds.size(); }

    static EncoderSpec base(const BaseEncoding& encoding, std::size_t token_dim);
    static EncoderSpec with_llm(std::size_t features, std::size_t source_dim, std::size_t token_dim);

    nlohmann::json to_json() const;
    static EncoderSpec from_json(const nlohmann::json& doc);
};

// Whichever source the encoder mode reads from.
struct ModelInputs {
    const EncodedInputs* base = nullptr;
    const EmbeddedTensor* llm = nullptr;
};

template <class T>
class Model {
public:
    Model(ModelConfig config, EncoderSpec encoder, std::size_t classes, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    const EncoderSpec& encoder() const { return encoder_; }
    std::size_t classes() const { return classes_; }

    engine::ParamStore<T>& params() { return params_; }
    const engine::ParamStore<T>& params() const { return params_; }

    // Feature tokens [B, M, token_dim] for the given table rows.
    engine::Tensor<T> encode(const ModelInputs& inputs, std::span<const std::size_t> rows) const;

    // Logits [B, C]. Train mode updates batch-norm running statistics; `rng`
    // is only used when dropout is active.
    engine::Tensor<T> classify(const engine::Tensor<T>& tokens, engine::Mode mode, std::mt19937_64* rng = nullptr);

    engine::Tensor<T> forward(const ModelInputs& inputs, std::span<const std::size_t> rows, engine::Mode mode,
                              std::mt19937_64* rng = nullptr) {
        return classify(encode(inputs, rows), mode, rng);
    }

    bool has_batch_norm() const { return config_.architecture == Architecture::resnet; }

private:
    engine::Tensor<T> encode_base(const EncodedInputs& in, std::span<const std::size_t> rows) const;
    engine::Tensor<T> encode_llm(const EmbeddedTensor& e, std::span<const std::size_t> rows) const;
    engine::Tensor<T> mlp(const engine::Tensor<T>& tokens, engine::Mode mode, std::mt19937_64* rng);
    engine::Tensor<T> resnet(const engine::Tensor<T>& tokens, engine::Mode mode, std::mt19937_64* rng);
    engine::Tensor<T> ft(const engine::Tensor<T>& tokens, engine::Mode mode, std::mt19937_64* rng);
    engine::Tensor<T> pool(const engine::Tensor<T>& tokens) const;
    engine::Tensor<T> drop(const engine::Tensor<T>& x, engine::Mode mode, std::mt19937_64* rng) const;
    engine::Tensor<T> p(const std::string& name) const { return params_.get(name); }

    ModelConfig config_;
    EncoderSpec encoder_;
    std::size_t classes_;
    engine::ParamStore<T> params_;
};

}  // namespace tte

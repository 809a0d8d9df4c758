#include "tte/models.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tte/error.hpp"
#include "tte/seed.hpp"

namespace tte {

using engine::Mode;
using engine::Tensor;

std::string_view to_string(Architecture a) {
    switch (a) {
        case Architecture::mlp:
            return "mlp";
        case Architecture::resnet:
            return "resnet";
        case Architecture::ft_transformer:
            return "ft-transformer";
    }
    return "?";
}

std::string_view to_string(EncoderMode m) { return m == EncoderMode::base ? "base" : "with-llm"; }

Architecture parse_architecture(std::string_view text) {
    if (text == "mlp") {
        return Architecture::mlp;
    }
    if (text == "resnet") {
        return Architecture::resnet;
    }
    if (text == "ft-transformer" || text == "ft" || text == "ft_transformer") {
        return Architecture::ft_transformer;
    }
    throw ConfigError("unknown architecture '" + std::string(text) + "' (expected mlp, resnet or ft-transformer)");
}

EncoderMode parse_encoder_mode(std::string_view text) {
    if (text == "base") {
        return EncoderMode::base;
    }
    if (text == "with-llm" || text == "llm" || text == "with_llm") {
        return EncoderMode::with_llm;
    }
    throw ConfigError("unknown encoder mode '" + std::string(text) + "' (expected base or with-llm)");
}

void ModelConfig::validate() const {
    if (token_dim == 0) {
        throw ConfigError("token_dim must be positive");
    }
    if (architecture == Architecture::ft_transformer) {
        if (heads == 0 || token_dim % heads != 0) {
            throw ConfigError("token_dim " + std::to_string(token_dim) + " is not divisible by heads " +
                              std::to_string(heads));
        }
        if (layers == 0) {
            throw ConfigError("ft-transformer needs at least one layer");
        }
    } else if (hidden.empty() || std::count(hidden.begin(), hidden.end(), 0u)) {
        throw ConfigError("hidden sizes must be a non-empty list of positive widths");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("dropout must lie in [0, 1)");
    }
}

ModelConfig ModelConfig::from_json(const nlohmann::json& doc) {
    ModelConfig c;
    if (doc.contains("architecture")) {
        c.architecture = parse_architecture(doc["architecture"].get<std::string>());
    }
    if (doc.contains("encoder_mode")) {
        c.encoder_mode = parse_encoder_mode(doc["encoder_mode"].get<std::string>());
    }
    c.token_dim = doc.value("token_dim", c.token_dim);
    c.heads = doc.value("heads", c.heads);
    c.layers = doc.value("layers", c.layers);
    c.hidden = doc.value("hidden", c.hidden);
    c.dropout = doc.value("dropout", c.dropout);
    c.ff_dim = doc.value("ff_dim", c.ff_dim);
    auto act = doc.value("adapter_activation", std::string("relu"));
    if (act != "relu" && act != "linear") {
        throw ConfigError("adapter_activation must be relu or linear");
    }
    c.adapter_activation = act == "relu" ? AdapterActivation::relu : AdapterActivation::linear;
    auto pooling = doc.value("pooling", std::string("flatten"));
    if (pooling != "flatten" && pooling != "mean") {
        throw ConfigError("pooling must be flatten or mean");
    }
    c.pooling = pooling == "flatten" ? Pooling::flatten : Pooling::mean;
    c.validate();
    return c;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"architecture", to_string(architecture)},
            {"encoder_mode", to_string(encoder_mode)},
            {"token_dim", token_dim},
            {"heads", heads},
            {"layers", layers},
            {"hidden", hidden},
            {"dropout", dropout},
            {"adapter_activation", adapter_activation == AdapterActivation::relu ? "relu" : "linear"},
            {"pooling", pooling == Pooling::flatten ? "flatten" : "mean"},
            {"ff_dim", feed_forward_dim()}};
}

BaseEncoding BaseEncoding::fit(const DatasetTable& table, std::span<const std::size_t> rows) {
    if (rows.empty()) {
        throw ConfigError("base encoding needs at least one training row");
    }
    BaseEncoding e;
    const std::size_t m = table.cols();
    e.kinds.resize(m);
    e.vocab.resize(m);
    e.mean.assign(m, 0.0);
    e.std.assign(m, 1.0);
    auto standardizer = Standardizer::fit(table, rows);
    for (std::size_t c = 0; c < m; ++c) {
        e.kinds[c] = table.schema[c].kind;
        if (e.kinds[c] == FeatureKind::numeric) {
            e.mean[c] = standardizer.mean(c);
            e.std[c] = standardizer.stddev(c);
            continue;
        }
        // Sorted so the id assignment does not depend on row order.
        std::vector<std::string> values;
        for (auto r : rows) {
            values.push_back(table.cell(r, c).raw);
        }
        std::sort(values.begin(), values.end());
        values.erase(std::unique(values.begin(), values.end()), values.end());
        e.vocab[c] = std::move(values);
    }
    return e;
}

nlohmann::json BaseEncoding::to_json() const {
    nlohmann::json cols = nlohmann::json::array();
    for (std::size_t c = 0; c < kinds.size(); ++c) {
        nlohmann::json col{{"kind", to_string(kinds[c])}};
        if (kinds[c] == FeatureKind::numeric) {
            col["mean"] = mean[c];
            col["std"] = std[c];
        } else {
            col["vocab"] = vocab[c];
        }
        cols.push_back(std::move(col));
    }
    return {{"columns", cols}};
}

BaseEncoding BaseEncoding::from_json(const nlohmann::json& doc) {
    BaseEncoding e;
    for (const auto& col : doc.at("columns")) {
        auto kind = parse_feature_kind(col.at("kind").get<std::string>());
        e.kinds.push_back(kind);
        e.vocab.push_back(kind == FeatureKind::categorical ? col.at("vocab").get<std::vector<std::string>>()
                                                           : std::vector<std::string>{});
        e.mean.push_back(kind == FeatureKind::numeric ? col.at("mean").get<double>() : 0.0);
        e.std.push_back(kind == FeatureKind::numeric ? col.at("std").get<double>() : 1.0);
    }
    return e;
}

EncodedInputs encode_inputs(const BaseEncoding& encoding, const DatasetTable& table) {
    if (table.cols() != encoding.kinds.size()) {
        throw ConfigError("table has " + std::to_string(table.cols()) + " features, encoding expects " +
                          std::to_string(encoding.kinds.size()));
    }
    EncodedInputs out;
    out.n = table.rows();
    out.m = table.cols();
    out.ids.assign(out.n * out.m, -1);
    out.z.assign(out.n * out.m, 0.0);
    for (std::size_t c = 0; c < out.m; ++c) {
        if (table.schema[c].kind != encoding.kinds[c]) {
            throw ConfigError("feature '" + table.schema[c].name + "' kind differs from the fitted encoding");
        }
        std::map<std::string_view, int> lookup;
        for (std::size_t k = 0; k < encoding.vocab[c].size(); ++k) {
            lookup.emplace(encoding.vocab[c][k], static_cast<int>(k));
        }
        for (std::size_t r = 0; r < out.n; ++r) {
            const auto& cell = table.cell(r, c);
            if (encoding.kinds[c] == FeatureKind::categorical) {
                auto it = lookup.find(cell.raw);
                out.ids[r * out.m + c] = it == lookup.end() ? static_cast<int>(encoding.unk_id(c)) : it->second;
            } else if (cell.number) {
                out.z[r * out.m + c] = (*cell.number - encoding.mean[c]) / encoding.std[c];
            }
        }
    }
    return out;
}

EncoderSpec EncoderSpec::base(const BaseEncoding& encoding, std::size_t token_dim) {
    EncoderSpec s;
    s.mode = EncoderMode::base;
    s.token_dim = token_dim;
    s.kinds = encoding.kinds;
    for (const auto& v : encoding.vocab) {
        s.vocab_sizes.push_back(v.size());
    }
    return s;
}

EncoderSpec EncoderSpec::with_llm(std::size_t features, std::size_t source_dim, std::size_t token_dim) {
    if (source_dim == 0) {
        throw ConfigError("with-llm encoder needs a positive embedding dimension");
    }
    EncoderSpec s;
    s.mode = EncoderMode::with_llm;
    s.token_dim = token_dim;
    s.source_dim = source_dim;
    s.kinds.assign(features, FeatureKind::categorical);
    s.vocab_sizes.assign(features, 0);
    return s;
}

nlohmann::json EncoderSpec::to_json() const {
    std::vector<std::string> k;
    for (auto kind : kinds) {
        k.emplace_back(to_string(kind));
    }
    return {{"mode", to_string(mode)},
            {"token_dim", token_dim},
            {"source_dim", source_dim},
            {"kinds", k},
            {"vocab_sizes", vocab_sizes}};
}

EncoderSpec EncoderSpec::from_json(const nlohmann::json& doc) {
    EncoderSpec s;
    s.mode = parse_encoder_mode(doc.at("mode").get<std::string>());
    s.token_dim = doc.at("token_dim").get<std::size_t>();
    s.source_dim = doc.value("source_dim", std::size_t{0});
    for (const auto& k : doc.at("kinds")) {
        s.kinds.push_back(parse_feature_kind(k.get<std::string>()));
    }
    s.vocab_sizes = doc.at("vocab_sizes").get<std::vector<std::size_t>>();
    return s;
}

namespace {

// Portable draws so initialization does not depend on the standard library's
// distribution implementations.
class Init {
public:
    explicit Init(std::uint64_t seed) : gen_(seed) {}

    double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
    double uniform(double bound) { return (2.0 * unit() - 1.0) * bound; }
    double normal(double sd) {
        double u1 = unit();
        while (u1 <= 0.0) {
            u1 = unit();
        }
        double u2 = unit();
        return sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <class T>
    void fill_uniform(Tensor<T> t, double bound) {
        for (auto& x : t.data()) {
            x = static_cast<T>(uniform(bound));
        }
    }
    template <class T>
    void fill_normal(Tensor<T> t, double sd) {
        for (auto& x : t.data()) {
            x = static_cast<T>(normal(sd));
        }
    }
    template <class T>
    void fill(Tensor<T> t, double value) {
        std::fill(t.data().begin(), t.data().end(), static_cast<T>(value));
    }

private:
    std::mt19937_64 gen_;
};

template <class T>
void add_affine(engine::ParamStore<T>& store, Init& init, const std::string& name, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    init.fill_uniform(store.add(name + ".w", {in, out}), bound);
    init.fill_uniform(store.add(name + ".b", {out}), bound);
}

template <class T>
void add_norm(engine::ParamStore<T>& store, Init& init, const std::string& name, std::size_t width) {
    init.fill(store.add(name + ".gamma", {width}), 1.0);
    store.add(name + ".beta", {width});
}

}  // namespace

template <class T>
Model<T>::Model(ModelConfig config, EncoderSpec encoder, std::size_t classes, std::uint64_t seed)
    : config_(std::move(config)), encoder_(std::move(encoder)), classes_(classes) {
    config_.validate();
    if (classes_ < 2) {
        throw ConfigError("a classifier needs at least 2 classes");
    }
    if (encoder_.features() == 0) {
        throw ConfigError("a model needs at least one feature");
    }
    if (encoder_.token_dim != config_.token_dim) {
        throw ConfigError("encoder token_dim " + std::to_string(encoder_.token_dim) + " differs from model token_dim " +
                          std::to_string(config_.token_dim));
    }
    if (encoder_.mode != config_.encoder_mode) {
        throw ConfigError("encoder mode differs from the model config");
    }
    Init init(seed);
    const std::size_t D = config_.token_dim;
    const std::size_t M = encoder_.features();

    if (encoder_.mode == EncoderMode::base) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(D));
        for (std::size_t m = 0; m < M; ++m) {
            const std::string name = "enc." + std::to_string(m);
            if (encoder_.kinds[m] == FeatureKind::numeric) {
                init.fill_uniform(params_.add(name + ".w", {D}), bound);
                init.fill_uniform(params_.add(name + ".b", {D}), bound);
            } else {
                init.fill_uniform(params_.add(name + ".table", {encoder_.vocab_sizes[m] + 1, D}), bound);
            }
        }
    } else {
        add_affine(params_, init, "adapter", encoder_.source_dim, D);
    }

    const std::size_t pooled = config_.pooling == Pooling::flatten ? M * D : D;
    switch (config_.architecture) {
        case Architecture::mlp: {
            std::size_t in = pooled;
            for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
                add_affine(params_, init, "mlp." + std::to_string(i), in, config_.hidden[i]);
                in = config_.hidden[i];
            }
            add_affine(params_, init, "head", in, classes_);
            break;
        }
        case Architecture::resnet: {
            std::size_t in = config_.hidden.front();
            add_affine(params_, init, "stem", pooled, in);
            for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
                const std::string name = "block." + std::to_string(i);
                const std::size_t out = config_.hidden[i];
                add_norm(params_, init, name + ".bn", in);
                init.fill(params_.add(name + ".bn.running_mean", {in}, false), 0.0);
                init.fill(params_.add(name + ".bn.running_var", {in}, false), 1.0);
                add_affine(params_, init, name + ".fc", in, out);
                if (in != out) {
                    add_affine(params_, init, name + ".skip", in, out);
                }
                in = out;
            }
            add_affine(params_, init, "head", in, classes_);
            break;
        }
        case Architecture::ft_transformer: {
            init.fill_uniform(params_.add("cls", {D}), 1.0 / std::sqrt(static_cast<double>(D)));
            const std::size_t F = config_.feed_forward_dim();
            for (std::size_t l = 0; l < config_.layers; ++l) {
                const std::string name = "layer." + std::to_string(l);
                add_norm(params_, init, name + ".ln1", D);
                for (const char* proj : {".q", ".k", ".v", ".o"}) {
                    add_affine(params_, init, name + proj, D, D);
                }
                add_norm(params_, init, name + ".ln2", D);
                add_affine(params_, init, name + ".ff1", D, F);
                add_affine(params_, init, name + ".ff2", F, D);
            }
            add_norm(params_, init, "final_ln", D);
            add_affine(params_, init, "head", D, classes_);
            break;
        }
    }
}

template <class T>
Tensor<T> Model<T>::encode(const ModelInputs& inputs, std::span<const std::size_t> rows) const {
    if (rows.empty()) {
        throw ConfigError("encode: empty batch");
    }
    if (encoder_.mode == EncoderMode::base) {
        if (!inputs.base) {
            throw ConfigError("base encoder needs encoded table inputs");
        }
        return encode_base(*inputs.base, rows);
    }
    if (!inputs.llm) {
        throw ConfigError("with-llm encoder needs an embedded tensor");
    }
    return encode_llm(*inputs.llm, rows);
}

template <class T>
Tensor<T> Model<T>::encode_base(const EncodedInputs& in, std::span<const std::size_t> rows) const {
    const std::size_t M = encoder_.features();
    if (in.m != M) {
        throw ConfigError("encoded inputs have " + std::to_string(in.m) + " features, model expects " +
                          std::to_string(M));
    }
    std::vector<Tensor<T>> tokens;
    tokens.reserve(M);
    std::vector<int> ids(rows.size());
    std::vector<T> z(rows.size());
    for (std::size_t m = 0; m < M; ++m) {
        const std::string name = "enc." + std::to_string(m);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= in.n) {
                throw ConfigError("row " + std::to_string(rows[i]) + " out of range");
            }
            ids[i] = in.ids[rows[i] * M + m];
            z[i] = static_cast<T>(in.z[rows[i] * M + m]);
        }
        if (encoder_.kinds[m] == FeatureKind::numeric) {
            tokens.push_back(engine::scale_shift<T>(z, p(name + ".w"), p(name + ".b")));
        } else {
            const int unk = static_cast<int>(encoder_.vocab_sizes[m]);
            for (auto& id : ids) {
                id = (id < 0 || id > unk) ? unk : id;
            }
            tokens.push_back(engine::gather_rows(p(name + ".table"), std::span<const int>(ids)));
        }
    }
    return engine::stack_tokens(tokens);
}

template <class T>
Tensor<T> Model<T>::encode_llm(const EmbeddedTensor& e, std::span<const std::size_t> rows) const {
    if (e.d != encoder_.source_dim) {
        throw ConfigError("embedding dimension " + std::to_string(e.d) + " does not match adapter input " +
                          std::to_string(encoder_.source_dim));
    }
    if (e.m != encoder_.features()) {
        throw ConfigError("embedded tensor has " + std::to_string(e.m) + " features, model expects " +
                          std::to_string(encoder_.features()));
    }
    const std::size_t B = rows.size();
    const std::size_t row_len = e.m * e.d;
    std::vector<T> x(B * row_len);
    for (std::size_t i = 0; i < B; ++i) {
        if (rows[i] >= e.n) {
            throw ConfigError("row " + std::to_string(rows[i]) + " out of range");
        }
        const float* src = e.data.data() + rows[i] * row_len;
        std::copy(src, src + row_len, x.begin() + static_cast<std::ptrdiff_t>(i * row_len));
    }
    // A constant copy: the frozen vectors never receive gradients.
    auto input = Tensor<T>::from({B, e.m, e.d}, std::move(x));
    auto tokens = engine::affine(input, p("adapter.w"), p("adapter.b"));
    return config_.adapter_activation == AdapterActivation::relu ? engine::relu(tokens) : tokens;
}

template <class T>
Tensor<T> Model<T>::classify(const Tensor<T>& tokens, Mode mode, std::mt19937_64* rng) {
    if (tokens.rank() != 3 || tokens.dim(1) != encoder_.features() || tokens.dim(2) != config_.token_dim) {
        throw ConfigError("classify: expected tokens [B, " + std::to_string(encoder_.features()) + ", " +
                          std::to_string(config_.token_dim) + "], got " + engine::shape_str(tokens.shape()));
    }
    switch (config_.architecture) {
        case Architecture::mlp:
            return mlp(tokens, mode, rng);
        case Architecture::resnet:
            return resnet(tokens, mode, rng);
        case Architecture::ft_transformer:
            return ft(tokens, mode, rng);
    }
    throw ConfigError("unknown architecture");
}

template <class T>
Tensor<T> Model<T>::pool(const Tensor<T>& tokens) const {
    if (config_.pooling == Pooling::mean) {
        return engine::mean_tokens(tokens);
    }
    return engine::reshape(tokens, {tokens.dim(0), tokens.dim(1) * tokens.dim(2)});
}

template <class T>
Tensor<T> Model<T>::drop(const Tensor<T>& x, Mode mode, std::mt19937_64* rng) const {
    if (config_.dropout == 0.0 || mode == Mode::eval) {
        return x;
    }
    if (!rng) {
        throw ConfigError("dropout in train mode needs a random generator");
    }
    return engine::dropout(x, config_.dropout, *rng, mode);
}

template <class T>
Tensor<T> Model<T>::mlp(const Tensor<T>& tokens, Mode mode, std::mt19937_64* rng) {
    auto h = pool(tokens);
    for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
        const std::string name = "mlp." + std::to_string(i);
        h = drop(engine::relu(engine::affine(h, p(name + ".w"), p(name + ".b"))), mode, rng);
    }
    return engine::affine(h, p("head.w"), p("head.b"));
}

template <class T>
Tensor<T> Model<T>::resnet(const Tensor<T>& tokens, Mode mode, std::mt19937_64* rng) {
    auto h = engine::affine(pool(tokens), p("stem.w"), p("stem.b"));
    for (std::size_t i = 0; i < config_.hidden.size(); ++i) {
        const std::string name = "block." + std::to_string(i);
        engine::BatchNormStats<T> stats{p(name + ".bn.running_mean"), p(name + ".bn.running_var")};
        auto branch = engine::batch_norm(h, p(name + ".bn.gamma"), p(name + ".bn.beta"), stats, mode);
        branch = engine::selu(engine::affine(branch, p(name + ".fc.w"), p(name + ".fc.b")));
        branch = drop(branch, mode, rng);
        auto skip = params_.contains(name + ".skip.w") ? engine::affine(h, p(name + ".skip.w"), p(name + ".skip.b")) : h;
        h = engine::add(branch, skip);
    }
    return engine::affine(h, p("head.w"), p("head.b"));
}

template <class T>
Tensor<T> Model<T>::ft(const Tensor<T>& tokens, Mode mode, std::mt19937_64* rng) {
    auto h = engine::prepend_token(tokens, p("cls"));
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string name = "layer." + std::to_string(l);
        engine::AttentionWeights<T> w{p(name + ".q.w"), p(name + ".q.b"), p(name + ".k.w"), p(name + ".k.b"),
                                      p(name + ".v.w"), p(name + ".v.b"), p(name + ".o.w"), p(name + ".o.b")};
        auto a = engine::layer_norm(h, p(name + ".ln1.gamma"), p(name + ".ln1.beta"));
        h = engine::add(h, drop(engine::multi_head_attention(a, w, config_.heads), mode, rng));
        auto f = engine::layer_norm(h, p(name + ".ln2.gamma"), p(name + ".ln2.beta"));
        f = engine::gelu(engine::affine(f, p(name + ".ff1.w"), p(name + ".ff1.b")));
        f = engine::affine(drop(f, mode, rng), p(name + ".ff2.w"), p(name + ".ff2.b"));
        h = engine::add(h, drop(f, mode, rng));
    }
    auto cls = engine::layer_norm(engine::take_token(h, 0), p("final_ln.gamma"), p("final_ln.beta"));
    return engine::affine(cls, p("head.w"), p("head.b"));
}

template class Model<float>;
template class Model<double>;

}  // namespace tte

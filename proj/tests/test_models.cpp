#include <doctest.h>

#include <cmath>

#include "support/model_suite.hpp"
#include "tte/error.hpp"

using namespace tte;
using engine::Mode;
using engine::Tensor;
using testing::make_toy;
using testing::small_config;

namespace {

const Architecture kArchs[] = {Architecture::mlp, Architecture::resnet, Architecture::ft_transformer};
const EncoderMode kModes[] = {EncoderMode::base, EncoderMode::with_llm};

}  // namespace

TEST_CASE("full models pass 32-bit gradient checks") {
    for (auto arch : kArchs) {
        for (auto mode : kModes) {
            for (std::uint64_t seed = 1; seed <= 10; ++seed) {
                auto report = testing::model_grad_check(arch, mode, seed);
                INFO(to_string(arch) << " " << to_string(mode) << " seed " << seed << ": " << report.describe());
                CHECK(report.max_normwise_error < 1e-4);
            }
        }
    }
}

TEST_CASE("ft-transformer logits ignore feature order") {
    auto model = testing::permutation_model(1);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CHECK(testing::permutation_gap(model, seed) < 1e-5);
    }
}

TEST_CASE("output shape is [B, C] for every architecture and encoder") {
    auto p = make_toy(3, 7, 8);
    ModelInputs inputs{&p.base, &p.llm};
    for (auto arch : kArchs) {
        for (auto mode : kModes) {
            auto config = small_config(arch, mode);
            Model<float> model(config, testing::encoder_for(p, config), 4, 9);
            for (std::vector<std::size_t> rows : {std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{2, 3, 4, 5, 6}}) {
                auto tokens = model.encode(inputs, rows);
                CHECK(tokens.shape() == engine::Shape{rows.size(), 3, 16});
                auto logits = model.classify(tokens, Mode::eval);
                CHECK(logits.shape() == engine::Shape{rows.size(), 4});
            }
        }
    }
}

TEST_CASE("zero input with a zero head gives uniform softmax") {
    for (auto arch : kArchs) {
        auto config = small_config(arch, EncoderMode::with_llm);
        Model<double> model(config, EncoderSpec::with_llm(3, 8, 16), 5, 1);
        for (auto name : {"head.w", "head.b"}) {
            auto t = model.params().get(name);
            std::fill(t.data().begin(), t.data().end(), 0.0);
        }
        auto logits = model.classify(Tensor<double>::zeros({2, 3, 16}), Mode::eval);
        std::vector<int> y{0, 3};
        auto loss = engine::softmax_cross_entropy(logits, std::span<const int>(y));
        CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    }
}

TEST_CASE("base encoder token laws") {
    auto p = make_toy(5, 12, 8);
    auto config = small_config(Architecture::mlp, EncoderMode::base);
    Model<double> model(config, EncoderSpec::base(p.encoding, 16), 3, 2);
    ModelInputs inputs{&p.base, nullptr};

    // A numeric z of exactly 0 yields the bias vector.
    auto zero = p.base;
    zero.z[0 * 3 + 1] = 0.0;
    auto tokens = model.encode({&zero, nullptr}, std::vector<std::size_t>{0});
    auto b = model.params().get("enc.1.b");
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(tokens.data()[16 + k] == b.data()[k]);
    }

    // Equal categories give equal tokens.
    std::size_t r1 = 0;
    std::size_t r2 = 1;
    while (p.table.cell(r2, 0).raw != p.table.cell(r1, 0).raw) {
        ++r2;
    }
    auto t = model.encode(inputs, std::vector<std::size_t>{r1, r2});
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(t.data()[k] == t.data()[3 * 16 + k]);
    }
}

TEST_CASE("a category seen only at test time routes to UNK") {
    auto p = make_toy(6, 20, 8);
    p.table.cells[19 * 3 + 0].raw = "violet";  // appears only in row 19
    std::vector<std::size_t> train(19);
    std::iota(train.begin(), train.end(), std::size_t{0});
    auto encoding = BaseEncoding::fit(p.table, train);
    auto encoded = encode_inputs(encoding, p.table);
    CHECK(encoded.ids[19 * 3] == static_cast<int>(encoding.unk_id(0)));

    auto config = small_config(Architecture::mlp, EncoderMode::base);
    Model<double> model(config, EncoderSpec::base(encoding, 16), 3, 2);
    auto tokens = model.encode({&encoded, nullptr}, std::vector<std::size_t>{19});
    auto table = model.params().get("enc.0.table");
    const std::size_t unk = encoding.unk_id(0);
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(tokens.data()[k] == table.data()[unk * 16 + k]);
    }
    CHECK(table.dim(0) == encoding.vocab[0].size() + 1);
}

TEST_CASE("parameter counts") {
    auto p = make_toy(7, 30, 8);
    const std::size_t D = 16;
    auto config = small_config(Architecture::mlp, EncoderMode::base);
    Model<float> base(config, EncoderSpec::base(p.encoding, D), 3, 1);
    const std::size_t K0 = p.encoding.vocab[0].size();
    const std::size_t K2 = p.encoding.vocab[2].size();
    CHECK(base.params().get("enc.0.table").size() == (K0 + 1) * D);
    const std::size_t encoder_params = (K0 + 1) * D + 2 * D + (K2 + 1) * D;
    const std::size_t classifier = (3 * D) * 12 + 12 + 12 * 8 + 8 + 8 * 4 + 4 + 4 * 3 + 3;
    CHECK(base.params().parameter_count() == encoder_params + classifier);

    config.encoder_mode = EncoderMode::with_llm;
    Model<float> llm(config, EncoderSpec::with_llm(3, 8, D), 3, 1);
    CHECK(llm.params().parameter_count() == classifier + 8 * D + D);
}

TEST_CASE("same seed gives bitwise-equal stores") {
    auto p = make_toy(8, 10, 8);
    for (auto arch : kArchs) {
        auto config = small_config(arch, EncoderMode::base);
        Model<float> a(config, testing::encoder_for(p, config), 3, 77);
        Model<float> b(config, testing::encoder_for(p, config), 3, 77);
        Model<float> c(config, testing::encoder_for(p, config), 3, 78);
        CHECK(a.params().checksum() == b.params().checksum());
        CHECK(a.params().checksum() != c.params().checksum());
    }
}

TEST_CASE("default layer specification") {
    ModelConfig config;
    CHECK(config.token_dim == 1024);
    CHECK(config.hidden == std::vector<std::size_t>{256, 128, 32});
    CHECK(config.heads == 8);
    CHECK(config.layers == 4);
    CHECK(config.feed_forward_dim() == 2048);

    config.architecture = Architecture::resnet;
    config.encoder_mode = EncoderMode::with_llm;
    Model<float> resnet(config, EncoderSpec::with_llm(2, 4, 1024), 2, 1);
    CHECK(resnet.params().get("stem.w").shape() == engine::Shape{2048, 256});
    CHECK_FALSE(resnet.params().contains("block.0.skip.w"));
    CHECK(resnet.params().get("block.1.skip.w").shape() == engine::Shape{256, 128});
    CHECK(resnet.params().get("block.2.fc.w").shape() == engine::Shape{128, 32});
    CHECK(resnet.params().get("head.w").shape() == engine::Shape{32, 2});
}

TEST_CASE("model config JSON round trip and validation") {
    auto doc = nlohmann::json::parse(R"({"architecture": "ft-transformer", "encoder_mode": "with-llm",
        "token_dim": 64, "heads": 4, "layers": 2, "dropout": 0.1, "adapter_activation": "linear"})");
    auto c = ModelConfig::from_json(doc);
    CHECK(c.architecture == Architecture::ft_transformer);
    CHECK(c.adapter_activation == AdapterActivation::linear);
    CHECK(ModelConfig::from_json(c.to_json()).to_json() == c.to_json());
    doc["heads"] = 5;
    CHECK_THROWS_AS(ModelConfig::from_json(doc), ConfigError);
    CHECK_THROWS_AS(parse_architecture("svm"), ConfigError);
}

TEST_CASE("adapter rejects a mismatched embedding dimension") {
    auto p = make_toy(9, 4, 8);
    auto config = small_config(Architecture::mlp, EncoderMode::with_llm);
    Model<float> model(config, EncoderSpec::with_llm(3, 6, 16), 3, 1);
    CHECK_THROWS_AS(model.encode({nullptr, &p.llm}, std::vector<std::size_t>{0}), ConfigError);
}

TEST_CASE("adapter laws") {
    auto p = make_toy(10, 6, 8);
    auto config = small_config(Architecture::ft_transformer, EncoderMode::with_llm);
    Model<double> model(config, EncoderSpec::with_llm(3, 8, 16), 3, 1);
    // Identical sentence vectors give identical tokens.
    std::copy_n(p.llm.data.begin(), 8, p.llm.data.begin() + 8);
    auto t = model.encode({nullptr, &p.llm}, std::vector<std::size_t>{0});
    for (std::size_t k = 0; k < 16; ++k) {
        CHECK(t.data()[k] == t.data()[16 + k]);
    }
    for (auto name : {"adapter.w", "adapter.b"}) {
        auto w = model.params().get(name);
        std::fill(w.data().begin(), w.data().end(), 0.0);
    }
    auto z = model.encode({nullptr, &p.llm}, std::vector<std::size_t>{1, 2});
    CHECK(std::all_of(z.data().begin(), z.data().end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("base and with-llm present identical token shapes") {
    auto p = make_toy(11, 6, 8);
    ModelInputs inputs{&p.base, &p.llm};
    auto base_cfg = small_config(Architecture::resnet, EncoderMode::base);
    auto llm_cfg = small_config(Architecture::resnet, EncoderMode::with_llm);
    Model<float> base(base_cfg, testing::encoder_for(p, base_cfg), 3, 1);
    Model<float> llm(llm_cfg, testing::encoder_for(p, llm_cfg), 3, 1);
    std::vector<std::size_t> rows{0, 1, 2};
    CHECK(base.encode(inputs, rows).shape() == llm.encode(inputs, rows).shape());
}

TEST_CASE("eval-mode forward is pure") {
    auto p = make_toy(12, 6, 8);
    ModelInputs inputs{&p.base, &p.llm};
    for (auto arch : kArchs) {
        auto config = small_config(arch, EncoderMode::base);
        Model<float> model(config, testing::encoder_for(p, config), 3, 4);
        std::vector<std::size_t> rows{0, 0, 1};
        auto a = model.forward(inputs, rows, Mode::eval);
        auto b = model.forward(inputs, rows, Mode::eval);
        CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
        for (std::size_t c = 0; c < 3; ++c) {
            CHECK(a.data()[c] == a.data()[3 + c]);
        }
    }
}

TEST_CASE("base encoding JSON round trip") {
    auto p = make_toy(13, 10, 8);
    auto back = BaseEncoding::from_json(p.encoding.to_json());
    CHECK(back.vocab == p.encoding.vocab);
    CHECK(back.mean == p.encoding.mean);
    auto spec = EncoderSpec::base(p.encoding, 16);
    CHECK(EncoderSpec::from_json(spec.to_json()).to_json() == spec.to_json());
}

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "support/trainer_suite.hpp"
#include "tte/error.hpp"

using namespace tte;
using testing::make_toy;
using testing::small_config;

namespace {

std::vector<std::size_t> iota_rows(std::size_t n, std::size_t from = 0) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), from);
    return r;
}

}  // namespace

TEST_CASE("early stopping uses a strict min_delta margin") {
    TrainConfig cfg;
    EarlyStopState s;
    CHECK(early_stop_update(s, 1.00, 1, cfg).improved);
    CHECK_FALSE(early_stop_update(s, 0.995, 2, cfg).improved);
    CHECK(s.stale == 1);
    CHECK(s.best == 1.00);
    CHECK(early_stop_update(s, 0.98, 3, cfg).improved);
    CHECK(s.best_epoch == 3);
    CHECK(s.stale == 0);
    // exactly min_delta below is not an improvement
    CHECK_FALSE(early_stop_update(s, 0.97, 4, cfg).improved);
}

TEST_CASE("constant validation loss stops at epoch patience + 1") {
    TrainConfig cfg;
    auto r = testing::scripted_run(cfg, [](std::size_t) { return 0.7; });
    CHECK(r.stopped_epoch == 11);
    CHECK(r.best_epoch == 1);
    CHECK(r.history.size() == 11);

    cfg.patience = 3;
    CHECK(testing::scripted_run(cfg, [](std::size_t) { return 0.7; }).stopped_epoch == 4);
}

TEST_CASE("strictly improving loss runs every epoch") {
    TrainConfig cfg;
    auto r = testing::scripted_run(cfg, [](std::size_t e) { return 5.0 - 0.02 * static_cast<double>(e); });
    CHECK(r.stopped_epoch == 100);
    CHECK(r.best_epoch == 100);
}

TEST_CASE("stopped epoch never trails the best by more than patience") {
    std::mt19937_64 gen(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        TrainConfig cfg;
        cfg.max_epochs = 1 + gen() % 60;
        cfg.patience = 1 + gen() % 12;
        std::vector<double> losses(cfg.max_epochs);
        for (auto& l : losses) {
            l = u(gen);
        }
        auto r = testing::scripted_run(cfg, [&](std::size_t e) { return losses[e - 1]; });
        CHECK(r.best_epoch >= 1);
        CHECK(r.best_epoch <= r.stopped_epoch);
        CHECK(r.stopped_epoch - r.best_epoch <= cfg.patience);
        CHECK((r.stopped_epoch == cfg.max_epochs || r.stopped_epoch - r.best_epoch == cfg.patience));
    }
}

TEST_CASE("make_batches folds a trailing singleton") {
    auto rows = iota_rows(9);
    auto plain = make_batches(rows, 4, false);
    REQUIRE(plain.size() == 3);
    CHECK(plain.back().size() == 1);
    auto merged = make_batches(rows, 4, true);
    REQUIRE(merged.size() == 2);
    CHECK(merged[1].size() == 5);
    CHECK(merged[1].back() == 8);
    CHECK(make_batches(iota_rows(1), 4, true).size() == 1);
}

TEST_CASE("train restores the best parameters and is deterministic") {
    auto p = make_toy(21, 60, 8);
    auto split = validation_split(iota_rows(60), p.labels, 0.25, 5);
    ModelInputs inputs{&p.base, &p.llm};
    TrainConfig cfg;
    cfg.max_epochs = 15;
    cfg.patience = 4;
    cfg.batch_size = 16;
    cfg.lr = 5e-3;
    cfg.seed = 9;
    for (auto arch : {Architecture::mlp, Architecture::resnet, Architecture::ft_transformer}) {
        auto config = small_config(arch, EncoderMode::base);
        config.dropout = 0.1;
        Model<float> a(config, testing::encoder_for(p, config), 3, 1);
        Model<float> b(config, testing::encoder_for(p, config), 3, 1);
        auto ra = train(a, inputs, p.labels, split, cfg);
        auto rb = train(b, inputs, p.labels, split, cfg);
        CHECK(ra.deterministic_json() == rb.deterministic_json());
        CHECK(ra.params_checksum == a.params().checksum());
        CHECK(mean_loss(a, inputs, p.labels, split.val) == doctest::Approx(ra.best_val_loss).epsilon(1e-9));
        CHECK(ra.best_val_loss == ra.history.at(ra.best_epoch - 1).val_loss);
    }
}

TEST_CASE("zero head predicts class 0 and evaluation is idempotent") {
    auto p = make_toy(22, 40, 8);
    auto config = small_config(Architecture::mlp, EncoderMode::with_llm);
    Model<float> model(config, testing::encoder_for(p, config), 3, 1);
    for (auto name : {"head.w", "head.b"}) {
        auto t = model.params().get(name);
        std::fill(t.data().begin(), t.data().end(), 0.0f);
    }
    ModelInputs inputs{nullptr, &p.llm};
    auto rows = iota_rows(40);
    auto preds = predict(model, inputs, rows);
    CHECK(std::all_of(preds.begin(), preds.end(), [](int c) { return c == 0; }));
    const double zeros = static_cast<double>(std::count(p.labels.begin(), p.labels.end(), 0));
    const double acc = evaluate(model, inputs, p.labels, rows);
    CHECK(acc == doctest::Approx(100.0 * zeros / 40.0));
    const auto sum = model.params().checksum();
    CHECK(evaluate(model, inputs, p.labels, rows) == acc);
    CHECK(model.params().checksum() == sum);
}

TEST_CASE("non-finite loss names the epoch and batch") {
    auto p = make_toy(23, 30, 8);
    auto config = small_config(Architecture::mlp, EncoderMode::with_llm);
    Model<float> model(config, testing::encoder_for(p, config), 3, 1);
    model.params().get("head.b").data()[1] = std::numeric_limits<float>::quiet_NaN();
    ModelInputs inputs{nullptr, &p.llm};
    FitValSplit split{iota_rows(20), iota_rows(10, 20)};
    TrainConfig cfg;
    cfg.batch_size = 64;
    CHECK_THROWS_WITH_AS(train(model, inputs, p.labels, split, cfg), "non-finite training loss at epoch 1, batch 1",
                         Error);
}

TEST_CASE("training never touches the frozen embeddings") {
    auto r = testing::frozen_embedding_run(50);
    CHECK(r.embeddings_before == r.embeddings_after);
    CHECK(r.params_before != r.params_after);
}

TEST_CASE("train config JSON and validation") {
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.seed = 42;
    CHECK(TrainConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
    CHECK_THROWS_AS(TrainConfig::from_json({{"patience", 0}}), ConfigError);
    CHECK_THROWS_AS(TrainConfig::from_json({{"lr", -1.0}}), ConfigError);
    FitValSplit empty;
    auto p = make_toy(24, 4, 8);
    auto config = small_config(Architecture::mlp, EncoderMode::with_llm);
    Model<float> model(config, testing::encoder_for(p, config), 3, 1);
    CHECK_THROWS_AS(train(model, {nullptr, &p.llm}, p.labels, empty, cfg), ConfigError);
}

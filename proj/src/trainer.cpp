#include "tte/trainer.hpp"

#include <chrono>
#include <cmath>

#include "tte/error.hpp"
#include "tte/log.hpp"
#include "tte/seed.hpp"

namespace tte {

using engine::Mode;

void TrainConfig::validate() const {
    if (max_epochs == 0) {
        throw ConfigError("max_epochs must be at least 1");
    }
    if (patience == 0) {
        throw ConfigError("patience must be at least 1");
    }
    if (!(min_delta >= 0.0)) {
        throw ConfigError("min_delta must be non-negative");
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size must be at least 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError("lr must be positive");
    }
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
    TrainConfig c;
    c.max_epochs = doc.value("max_epochs", c.max_epochs);
    c.patience = doc.value("patience", c.patience);
    c.min_delta = doc.value("min_delta", c.min_delta);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.lr = doc.value("lr", c.lr);
    c.seed = doc.value("seed", c.seed);
    c.validate();
    return c;
}

nlohmann::json TrainConfig::to_json() const {
    return {{"max_epochs", max_epochs}, {"patience", patience}, {"min_delta", min_delta},
            {"batch_size", batch_size}, {"lr", lr},             {"seed", seed}};
}

EarlyStopStep early_stop_update(EarlyStopState& state, double val_loss, std::size_t epoch, const TrainConfig& config) {
    EarlyStopStep step;
    if (!state.has_best || val_loss < state.best - config.min_delta) {
        state.has_best = true;
        state.best = val_loss;
        state.best_epoch = epoch;
        state.stale = 0;
        step.improved = true;
    } else {
        ++state.stale;
    }
    step.stop = state.stale >= config.patience;
    return step;
}

LoopResult run_early_stopping(const TrainConfig& config, const std::function<EpochLoss(std::size_t)>& run_epoch,
                              const std::function<void(std::size_t)>& on_improve) {
    config.validate();
    LoopResult result;
    EarlyStopState state;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        auto losses = run_epoch(epoch);
        losses.epoch = epoch;
        result.history.push_back(losses);
        result.stopped_epoch = epoch;
        auto step = early_stop_update(state, losses.val_loss, epoch, config);
        if (step.improved && on_improve) {
            on_improve(epoch);
        }
        if (step.stop) {
            break;
        }
    }
    result.best_epoch = state.best_epoch;
    return result;
}

nlohmann::json TrainReport::deterministic_json() const {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : history) {
        h.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    }
    return {{"history", h},
            {"stopped_epoch", stopped_epoch},
            {"best_epoch", best_epoch},
            {"best_val_loss", best_val_loss},
            {"test_accuracy", test_accuracy},
            {"parameter_count", parameter_count},
            {"params_checksum", params_checksum}};
}

nlohmann::json TrainReport::to_json() const {
    auto j = deterministic_json();
    j["wall_time"] = wall_time;
    return j;
}

TrainReport TrainReport::from_json(const nlohmann::json& doc) {
    TrainReport r;
    for (const auto& e : doc.at("history")) {
        r.history.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                             e.at("val_loss").get<double>()});
    }
    r.stopped_epoch = doc.at("stopped_epoch").get<std::size_t>();
    r.best_epoch = doc.at("best_epoch").get<std::size_t>();
    r.best_val_loss = doc.at("best_val_loss").get<double>();
    r.test_accuracy = doc.at("test_accuracy").get<double>();
    r.parameter_count = doc.at("parameter_count").get<std::size_t>();
    r.params_checksum = doc.at("params_checksum").get<std::uint64_t>();
    r.wall_time = doc.value("wall_time", 0.0);
    return r;
}

std::vector<std::span<const std::size_t>> make_batches(std::span<const std::size_t> rows, std::size_t batch_size,
                                                       bool avoid_singleton) {
    std::vector<std::span<const std::size_t>> out;
    for (std::size_t start = 0; start < rows.size(); start += batch_size) {
        out.push_back(rows.subspan(start, std::min(batch_size, rows.size() - start)));
    }
    if (avoid_singleton && out.size() >= 2 && out.back().size() == 1) {
        out.pop_back();
        auto& prev = out.back();
        prev = rows.subspan(static_cast<std::size_t>(prev.data() - rows.data()), prev.size() + 1);
    }
    return out;
}

template <class T>
double mean_loss(Model<T>& model, const ModelInputs& inputs, std::span<const int> labels,
                 std::span<const std::size_t> rows, std::size_t batch_size) {
    if (rows.empty()) {
        throw ConfigError("mean_loss: no rows");
    }
    engine::NoGradGuard no_grad;
    double total = 0.0;
    std::vector<int> y;
    for (auto batch : make_batches(rows, batch_size, false)) {
        y.clear();
        for (auto r : batch) {
            y.push_back(labels[r]);
        }
        auto logits = model.forward(inputs, batch, Mode::eval);
        total += static_cast<double>(engine::softmax_cross_entropy(logits, std::span<const int>(y)).item()) *
                 static_cast<double>(batch.size());
    }
    return total / static_cast<double>(rows.size());
}

template <class T>
std::vector<int> predict(Model<T>& model, const ModelInputs& inputs, std::span<const std::size_t> rows,
                         std::size_t batch_size) {
    engine::NoGradGuard no_grad;
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto batch : make_batches(rows, batch_size, false)) {
        auto logits = model.forward(inputs, batch, Mode::eval);
        const std::size_t C = logits.dim(1);
        auto v = logits.data();
        for (std::size_t i = 0; i < batch.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < C; ++c) {
                if (v[i * C + c] > v[i * C + best]) {
                    best = c;
                }
            }
            out.push_back(static_cast<int>(best));
        }
    }
    return out;
}

template <class T>
double evaluate(Model<T>& model, const ModelInputs& inputs, std::span<const int> labels,
                std::span<const std::size_t> rows, std::size_t batch_size) {
    auto predictions = predict(model, inputs, rows, batch_size);
    std::vector<int> truth;
    truth.reserve(rows.size());
    for (auto r : rows) {
        truth.push_back(labels[r]);
    }
    return accuracy(predictions, truth);
}

template <class T>
TrainReport train(Model<T>& model, const ModelInputs& inputs, std::span<const int> labels, const FitValSplit& split,
                  const TrainConfig& config) {
    config.validate();
    if (split.fit.empty() || split.val.empty()) {
        throw ConfigError("training needs non-empty fit and validation sets");
    }
    const bool batch_norm = model.has_batch_norm();
    if (batch_norm && split.fit.size() < 2) {
        throw ConfigError("batch norm needs at least 2 training rows");
    }
    const auto start = std::chrono::steady_clock::now();
    auto& params = model.params();
    engine::AdamConfig adam{config.lr};
    std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout"));
    std::vector<std::size_t> order(split.fit.begin(), split.fit.end());
    std::vector<std::vector<T>> best_snapshot = params.snapshot();
    std::uint64_t best_checksum = params.checksum();
    std::vector<int> y;

    auto run_epoch = [&](std::size_t epoch) {
        std::mt19937_64 shuffle_rng(derive_seed(config.seed, "epoch-" + std::to_string(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double total = 0.0;
        std::size_t b = 0;
        for (auto batch : make_batches(order, config.batch_size, batch_norm)) {
            ++b;
            y.clear();
            for (auto r : batch) {
                y.push_back(labels[r]);
            }
            auto logits = model.forward(inputs, batch, Mode::train, &dropout_rng);
            auto loss = engine::softmax_cross_entropy(logits, std::span<const int>(y));
            const double value = static_cast<double>(loss.item());
            if (!std::isfinite(value)) {
                throw Error("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b));
            }
            loss.backward();
            engine::adam_step(params, adam);
            total += value * static_cast<double>(batch.size());
        }
        EpochLoss e;
        e.train_loss = total / static_cast<double>(order.size());
        e.val_loss = mean_loss(model, inputs, labels, split.val);
        if (!std::isfinite(e.val_loss)) {
            throw Error("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        logger()->debug("epoch {} train {:.5f} val {:.5f}", epoch, e.train_loss, e.val_loss);
        return e;
    };
    auto on_improve = [&](std::size_t) {
        best_snapshot = params.snapshot();
        best_checksum = params.checksum();
    };

    auto loop = run_early_stopping(config, run_epoch, on_improve);
    params.restore(best_snapshot);

    TrainReport report;
    report.history = std::move(loop.history);
    report.stopped_epoch = loop.stopped_epoch;
    report.best_epoch = loop.best_epoch;
    report.best_val_loss = report.history.at(report.best_epoch - 1).val_loss;
    report.parameter_count = params.parameter_count();
    report.params_checksum = params.checksum();
    if (report.params_checksum != best_checksum) {
        throw Error("restored parameters do not match the best snapshot");
    }
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

#define TTE_INSTANTIATE_TRAINER(T)                                                                                   \
    template TrainReport train(Model<T>&, const ModelInputs&, std::span<const int>, const FitValSplit&,            \
                               const TrainConfig&);                                                                 \
    template double mean_loss(Model<T>&, const ModelInputs&, std::span<const int>, std::span<const std::size_t>,   \
                              std::size_t);                                                                         \
    template std::vector<int> predict(Model<T>&, const ModelInputs&, std::span<const std::size_t>, std::size_t);   \
    template double evaluate(Model<T>&, const ModelInputs&, std::span<const int>, std::span<const std::size_t>,     \
                             std::size_t);

TTE_INSTANTIATE_TRAINER(float)
TTE_INSTANTIATE_TRAINER(double)

}  // namespace tte

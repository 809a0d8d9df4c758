#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tte/models.hpp"

namespace tte {

struct TrainConfig {
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    double min_delta = 0.01;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
    static TrainConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
};

struct EarlyStopState {
    bool has_best = false;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::size_t stale = 0;
};

struct EarlyStopStep {
    bool improved = false;
    bool stop = false;
};

// Improvement means val_loss < best - min_delta (the first value always
// counts). `stale` epochs reaching `patience` stops training.
EarlyStopStep early_stop_update(EarlyStopState& state, double val_loss, std::size_t epoch, const TrainConfig& config);

struct EpochLoss {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct LoopResult {
    std::vector<EpochLoss> history;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;
};

// Epochs are numbered from 1. `run_epoch` trains one epoch and returns its
// losses; `on_improve` runs right after an epoch that sets a new best.
LoopResult run_early_stopping(const TrainConfig& config, const std::function<EpochLoss(std::size_t)>& run_epoch,
                              const std::function<void(std::size_t)>& on_improve = {});

struct TrainReport {
    std::vector<EpochLoss> history;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    double test_accuracy = 0.0;
    double wall_time = 0.0;  // seconds
    std::size_t parameter_count = 0;
    std::uint64_t params_checksum = 0;

    // Everything but wall_time, for reproducibility comparisons.
    nlohmann::json deterministic_json() const;
    nlohmann::json to_json() const;
    static TrainReport from_json(const nlohmann::json& doc);
};

// Batches of `rows` in order; when `avoid_singleton` is set a trailing batch
// of one row is folded into the previous batch.
std::vector<std::span<const std::size_t>> make_batches(std::span<const std::size_t> rows, std::size_t batch_size,
                                                       bool avoid_singleton);

// Trains on `split.fit`, early-stops on `split.val` and leaves the best
// parameters in the model. test_accuracy is left at 0; see evaluate().
template <class T>
TrainReport train(Model<T>& model, const ModelInputs& inputs, std::span<const int> labels, const FitValSplit& split,
                  const TrainConfig& config);

// Sample-averaged cross-entropy in eval mode.
template <class T>
double mean_loss(Model<T>& model, const ModelInputs& inputs, std::span<const int> labels,
                 std::span<const std::size_t> rows, std::size_t batch_size = 256);

// Argmax class per row in eval mode; ties go to the lowest class id.
template <class T>
std::vector<int> predict(Model<T>& model, const ModelInputs& inputs, std::span<const std::size_t> rows,
                         std::size_t batch_size = 256);

// Percentage accuracy over `rows`.
template <class T>
double evaluate(Model<T>& model, const ModelInputs& inputs, std::span<const int> labels,
                std::span<const std::size_t> rows, std::size_t batch_size = 256);

}  // namespace tte

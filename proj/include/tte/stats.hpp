#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tte/experiment.hpp"

namespace tte {

// Per-seed accuracy differences (with-llm minus base), percentage points.
struct DiffSample {
    std::string dataset;
    std::vector<double> diffs;
    double rho = 0.3;  // n_test / (n_test + n_train) of the underlying splits
};

struct RegionProbabilities {
    double p_left = 0.0;
    double p_rope = 0.0;
    double p_right = 0.0;
};

// Student-t posterior of the mean difference. `degenerate` marks a zero
// sample variance: the posterior is a point mass at `location`.
struct PosteriorSummary {
    double location = 0.0;
    double scale = 0.0;
    double dof = 0.0;
    bool degenerate = false;
    RegionProbabilities regions;
};

// dof = n - 1, location = mean, scale = sqrt((1/n + rho/(1-rho)) s^2).
// Region probabilities are left at zero; see rope_probabilities().
PosteriorSummary correlated_t_posterior(std::span<const double> diffs, double rho = 0.3);

// P(delta < -rope), P(-rope <= delta <= rope), P(delta > rope).
RegionProbabilities rope_probabilities(const PosteriorSummary& posterior, double rope);

struct ComparisonResult {
    std::vector<std::string> datasets;
    std::vector<PosteriorSummary> per_dataset;  // regions filled in
    RegionProbabilities aggregate;
    double rope = 0.1;
    std::size_t mc_samples = 0;
    std::uint64_t seed = 0;

    std::string verdict() const;
    nlohmann::json to_json() const;
};

// Each draw samples one delta per dataset from its posterior, resamples the
// datasets with replacement and classifies the mean. Draws are split into a
// fixed number of shards with derived seeds, so the result does not depend
// on `workers`.
ComparisonResult hierarchical_compare(std::span<const DiffSample> samples, double rope = 0.1,
                                      std::size_t mc_samples = 100000, std::uint64_t seed = 0,
                                      std::size_t workers = 1);

// Paired differences per dataset for one architecture, from experiment
// records. Seeds missing either mode are dropped.
std::vector<DiffSample> diff_samples(const std::vector<CellRecord>& records, Architecture arch, double rho = 0.3);

}  // namespace tte

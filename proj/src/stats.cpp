#include "tte/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <thread>

#include <boost/math/distributions/students_t.hpp>

#include "tte/error.hpp"
#include "tte/seed.hpp"

namespace tte {

namespace {

constexpr std::size_t kShards = 16;

RegionProbabilities point_mass(double x, double rope) {
    RegionProbabilities r;
    if (x < -rope) {
        r.p_left = 1.0;
    } else if (x > rope) {
        r.p_right = 1.0;
    } else {
        r.p_rope = 1.0;
    }
    return r;
}

nlohmann::json regions_json(const RegionProbabilities& r) {
    return {{"p_left", r.p_left}, {"p_rope", r.p_rope}, {"p_right", r.p_right}};
}

}  // namespace

PosteriorSummary correlated_t_posterior(std::span<const double> diffs, double rho) {
    const std::size_t n = diffs.size();
    if (n < 2) {
        throw ConfigError("correlated t-test needs at least 2 differences, got " + std::to_string(n));
    }
    if (!(rho >= 0.0 && rho < 1.0)) {
        throw ConfigError("rho must lie in [0, 1)");
    }
    double mean = 0.0;
    for (double d : diffs) {
        if (!std::isfinite(d)) {
            throw ConfigError("non-finite accuracy difference");
        }
        mean += d;
    }
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double d : diffs) {
        ss += (d - mean) * (d - mean);
    }
    const double var = ss / static_cast<double>(n - 1);

    PosteriorSummary p;
    p.location = mean;
    p.dof = static_cast<double>(n - 1);
    p.scale = std::sqrt((1.0 / static_cast<double>(n) + rho / (1.0 - rho)) * var);
    p.degenerate = !(p.scale > 0.0);
    if (p.degenerate) {
        p.scale = 0.0;
    }
    return p;
}

RegionProbabilities rope_probabilities(const PosteriorSummary& posterior, double rope) {
    if (!(rope >= 0.0)) {
        throw ConfigError("rope must be non-negative");
    }
    if (posterior.degenerate) {
        return point_mass(posterior.location, rope);
    }
    boost::math::students_t_distribution<double> t(posterior.dof);
    RegionProbabilities r;
    r.p_left = boost::math::cdf(t, (-rope - posterior.location) / posterior.scale);
    r.p_right = boost::math::cdf(boost::math::complement(t, (rope - posterior.location) / posterior.scale));
    r.p_rope = std::max(0.0, 1.0 - r.p_left - r.p_right);
    return r;
}

std::string ComparisonResult::verdict() const {
    const double best = std::max({aggregate.p_left, aggregate.p_rope, aggregate.p_right});
    std::string which = best == aggregate.p_right ? "with-llm better"
                        : best == aggregate.p_left ? "base better"
                                                   : "practically equivalent";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s (p_left=%.4f p_rope=%.4f p_right=%.4f, rope=%g, %zu datasets)",
                  which.c_str(), aggregate.p_left, aggregate.p_rope, aggregate.p_right, rope, datasets.size());
    return buf;
}

nlohmann::json ComparisonResult::to_json() const {
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        const auto& p = per_dataset[i];
        auto j = regions_json(p.regions);
        j["dataset"] = datasets[i];
        j["location"] = p.location;
        j["scale"] = p.scale;
        j["dof"] = p.dof;
        j["degenerate"] = p.degenerate;
        per.push_back(j);
    }
    return {{"per_dataset", per},
            {"aggregate", regions_json(aggregate)},
            {"rope", rope},
            {"mc_samples", mc_samples},
            {"seed", seed},
            {"method",
             "per-dataset correlated Bayesian t-test posteriors combined by Monte Carlo bootstrap over datasets "
             "(a simplification of the full hierarchical model)"},
            {"verdict", verdict()}};
}

ComparisonResult hierarchical_compare(std::span<const DiffSample> samples, double rope, std::size_t mc_samples,
                                      std::uint64_t seed, std::size_t workers) {
    if (samples.size() < 2) {
        throw ConfigError("hierarchical comparison needs at least 2 datasets");
    }
    if (mc_samples < 10000) {
        throw ConfigError("mc_samples must be at least 10000");
    }
    ComparisonResult result;
    result.rope = rope;
    result.mc_samples = mc_samples;
    result.seed = seed;
    for (const auto& s : samples) {
        auto p = correlated_t_posterior(s.diffs, s.rho);
        p.regions = rope_probabilities(p, rope);
        result.datasets.push_back(s.dataset);
        result.per_dataset.push_back(p);
    }

    const std::size_t k = samples.size();
    std::array<std::array<std::size_t, 3>, kShards> counts{};
    auto run_shard = [&](std::size_t shard) {
        const std::size_t begin = mc_samples * shard / kShards;
        const std::size_t end = mc_samples * (shard + 1) / kShards;
        std::mt19937_64 gen(derive_seed(seed, "mc-shard-" + std::to_string(shard)));
        std::vector<std::student_t_distribution<double>> t;
        for (const auto& p : result.per_dataset) {
            t.emplace_back(p.degenerate ? 1.0 : p.dof);
        }
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        std::vector<double> delta(k);
        auto& c = counts[shard];
        for (std::size_t draw = begin; draw < end; ++draw) {
            for (std::size_t i = 0; i < k; ++i) {
                const auto& p = result.per_dataset[i];
                delta[i] = p.degenerate ? p.location : p.location + p.scale * t[i](gen);
            }
            double mean = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                mean += delta[pick(gen)];
            }
            mean /= static_cast<double>(k);
            ++c[mean < -rope ? 0 : (mean > rope ? 2 : 1)];
        }
    };
    workers = std::clamp<std::size_t>(workers, 1, kShards);
    if (workers == 1) {
        for (std::size_t s = 0; s < kShards; ++s) {
            run_shard(s);
        }
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t s = w; s < kShards; s += workers) {
                    run_shard(s);
                }
            });
        }
    }
    std::array<std::size_t, 3> total{};
    for (const auto& c : counts) {
        for (int r = 0; r < 3; ++r) {
            total[r] += c[r];
        }
    }
    const double n = static_cast<double>(mc_samples);
    result.aggregate.p_left = static_cast<double>(total[0]) / n;
    result.aggregate.p_right = static_cast<double>(total[2]) / n;
    result.aggregate.p_rope = static_cast<double>(total[1]) / n;
    return result;
}

std::vector<DiffSample> diff_samples(const std::vector<CellRecord>& records, Architecture arch, double rho) {
    // dataset -> seed -> (base, with-llm); later records override earlier ones
    std::map<std::string, std::map<std::uint64_t, std::pair<std::optional<double>, std::optional<double>>>> cells;
    std::vector<std::string> order;
    for (const auto& r : records) {
        if (!r.ok || r.key.arch != arch) {
            continue;
        }
        if (!cells.count(r.key.dataset)) {
            order.push_back(r.key.dataset);
        }
        auto& slot = cells[r.key.dataset][r.key.seed];
        (r.key.mode == EncoderMode::base ? slot.first : slot.second) = r.report.test_accuracy;
    }
    std::vector<DiffSample> out;
    for (const auto& name : order) {
        DiffSample s;
        s.dataset = name;
        s.rho = rho;
        for (const auto& [seed, pair] : cells.at(name)) {
            if (pair.first && pair.second) {
                s.diffs.push_back(*pair.second - *pair.first);
            }
        }
        if (!s.diffs.empty()) {
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace tte

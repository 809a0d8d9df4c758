#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tte/engine/tensor.hpp"

namespace tte::engine {

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is ~0 from dominating through roundoff alone.
double relative_error(double analytic, double numeric, double floor = 1e-4);

// Central differences of a scalar-valued closure with respect to every
// coordinate of `input`, evaluated at 64-bit precision.
std::vector<double> numeric_gradient(const std::function<Tensor<double>()>& loss_fn, Tensor<double> input,
                                     double step = 1e-5);

// Central differences for the listed coordinates only.
std::vector<double> numeric_gradient_at(const std::function<Tensor<double>()>& loss_fn, Tensor<double> input,
                                        std::span<const std::size_t> indices, double step = 1e-5);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    // ||a - n|| / max(||a||, ||n||, floor) per input tensor, worst over inputs.
    double max_normwise_error = 0.0;
    std::size_t worst_normwise_input = 0;

    std::string describe() const;
};

// Compares one backward pass of `loss_fn` against central differences for
// every coordinate of every tensor in `inputs`. The closure must rebuild its
// graph on each call.
GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> inputs,
                           double step = 1e-5, double floor = 1e-4);

// Worst element-wise and per-tensor relative errors between two gradient sets.
GradCheckReport compare_gradients(const std::vector<std::vector<double>>& analytic,
                                  const std::vector<std::vector<double>>& numeric, double floor = 1e-4);

}  // namespace tte::engine

#include "tte/engine/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tte::engine {

double relative_error(double analytic, double numeric, double floor) {
    double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

std::vector<double> numeric_gradient(const std::function<Tensor<double>()>& loss_fn, Tensor<double> input,
                                     double step) {
    std::vector<double> out(input.size());
    auto values = input.data();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + step;
        const double up = loss_fn().item();
        values[i] = saved - step;
        const double down = loss_fn().item();
        values[i] = saved;
        out[i] = (up - down) / (2.0 * step);
    }
    return out;
}

std::vector<double> numeric_gradient_at(const std::function<Tensor<double>()>& loss_fn, Tensor<double> input,
                                        std::span<const std::size_t> indices, double step) {
    std::vector<double> out;
    out.reserve(indices.size());
    auto values = input.data();
    NoGradGuard no_grad;
    for (auto i : indices) {
        if (i >= values.size()) {
            throw ConfigError("numeric_gradient_at: index out of range");
        }
        const double saved = values[i];
        values[i] = saved + step;
        const double up = loss_fn().item();
        values[i] = saved - step;
        const double down = loss_fn().item();
        values[i] = saved;
        out.push_back((up - down) / (2.0 * step));
    }
    return out;
}

std::string GradCheckReport::describe() const {
    std::ostringstream os;
    os << "max rel err " << max_rel_error << " at input " << worst_input << "[" << worst_index
       << "] (analytic " << worst_analytic << ", numeric " << worst_numeric << "); max norm-wise rel err "
       << max_normwise_error << " at input " << worst_normwise_input;
    return os.str();
}

GradCheckReport compare_gradients(const std::vector<std::vector<double>>& analytic,
                                  const std::vector<std::vector<double>>& numeric, double floor) {
    if (analytic.size() != numeric.size()) {
        throw ConfigError("compare_gradients: input count mismatch");
    }
    GradCheckReport report;
    for (std::size_t t = 0; t < analytic.size(); ++t) {
        if (analytic[t].size() != numeric[t].size()) {
            throw ConfigError("compare_gradients: size mismatch");
        }
        double diff2 = 0.0;
        double a2 = 0.0;
        double n2 = 0.0;
        for (std::size_t i = 0; i < analytic[t].size(); ++i) {
            const double a = analytic[t][i];
            const double n = numeric[t][i];
            diff2 += (a - n) * (a - n);
            a2 += a * a;
            n2 += n * n;
            double err = relative_error(a, n, floor);
            if (err > report.max_rel_error || (t == 0 && i == 0)) {
                report.max_rel_error = err;
                report.worst_input = t;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = n;
            }
        }
        const double normwise = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
        if (normwise > report.max_normwise_error) {
            report.max_normwise_error = normwise;
            report.worst_normwise_input = t;
        }
    }
    return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> inputs,
                           double step, double floor) {
    for (auto& in : inputs) {
        if (!in.requires_grad()) {
            throw ConfigError("grad_check: every input must track gradients");
        }
        in.zero_grad();
    }
    loss_fn().backward();
    std::vector<std::vector<double>> analytic;
    std::vector<std::vector<double>> numeric;
    for (auto& in : inputs) {
        analytic.emplace_back(in.grad().begin(), in.grad().end());
    }
    for (auto& in : inputs) {
        numeric.push_back(numeric_gradient(loss_fn, in, step));
    }
    return compare_gradients(analytic, numeric, floor);
}

}  // namespace tte::engine

#include "tte/projection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "tte/csv.hpp"
#include "tte/error.hpp"
#include "tte/serializer.hpp"

namespace tte {

namespace {

void sign_fix(Eigen::Ref<Eigen::VectorXd> v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (std::abs(v[i]) > std::abs(v[best])) {
            best = i;
        }
    }
    if (v.size() > 0 && v[best] < 0.0) {
        v = -v;
    }
}

std::string g9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

SymmetricEigen jacobi_eigen(Eigen::MatrixXd a, double tolerance, int max_sweeps) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n) {
        throw ConfigError("jacobi_eigen: matrix is not square");
    }
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
    const double scale = std::max(a.norm(), std::numeric_limits<double>::min());
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                off += a(p, q) * a(p, q);
            }
        }
        if (std::sqrt(off) <= tolerance * scale) {
            break;
        }
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= std::numeric_limits<double>::min()) {
                    continue;
                }
                // Rotation that zeroes a(p, q).
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) > a(j, j); });
    SymmetricEigen out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values[i] = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
        out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
    }
    return out;
}

Projection2D pca2(const Eigen::MatrixXd& vectors) {
    const Eigen::Index k = vectors.rows();
    const Eigen::Index d = vectors.cols();
    if (k < 3) {
        throw ConfigError("PCA needs at least 3 points, got " + std::to_string(k));
    }
    if (d < 2) {
        throw ConfigError("PCA needs at least 2 dimensions, got " + std::to_string(d));
    }
    const Eigen::MatrixXd x = vectors.rowwise() - vectors.colwise().mean();
    Projection2D out;
    out.coords = Eigen::MatrixX2d::Zero(k, 2);
    out.directions = Eigen::MatrixX2d::Zero(d, 2);
    const double total = x.squaredNorm();
    if (!(total > 0.0)) {
        return out;
    }

    Eigen::MatrixX2d dirs(d, 2);
    std::array<double, 2> lambda{};
    if (k >= d) {
        auto eig = jacobi_eigen(x.transpose() * x);
        for (int i = 0; i < 2; ++i) {
            dirs.col(i) = eig.vectors.col(i);
            lambda[static_cast<std::size_t>(i)] = std::max(0.0, eig.values[i]);
        }
    } else {
        // X^T u / sqrt(lambda) maps Gram eigenvectors to covariance eigenvectors.
        auto eig = jacobi_eigen(x * x.transpose());
        for (int i = 0; i < 2; ++i) {
            const double l = std::max(0.0, eig.values[i]);
            lambda[static_cast<std::size_t>(i)] = l;
            if (l > total * 1e-15) {
                Eigen::VectorXd v = x.transpose() * eig.vectors.col(i);
                dirs.col(i) = v / v.norm();
            } else {
                dirs.col(i).setZero();
            }
        }
    }
    for (int i = 0; i < 2; ++i) {
        if (lambda[static_cast<std::size_t>(i)] <= total * 1e-15) {
            dirs.col(i).setZero();
            lambda[static_cast<std::size_t>(i)] = 0.0;
            continue;
        }
        sign_fix(dirs.col(i));
    }
    out.directions = dirs;
    out.coords = x * dirs;
    out.explained = {lambda[0] / total, lambda[1] / total};
    return out;
}

std::vector<std::string> sample_values(const DatasetTable& table, std::size_t column, std::size_t max_unique,
                                       std::uint64_t seed) {
    if (column >= table.cols()) {
        throw ConfigError("column index " + std::to_string(column) + " out of range");
    }
    std::vector<std::string> distinct;
    std::set<std::string> seen;
    for (std::size_t r = 0; r < table.rows(); ++r) {
        auto v = display_value(table, r, column);
        if (seen.insert(v).second) {
            distinct.push_back(std::move(v));
        }
    }
    if (distinct.size() <= max_unique) {
        return distinct;
    }
    std::vector<std::size_t> idx(distinct.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 gen(seed);
    for (std::size_t i = 0; i < max_unique; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(gen)]);
    }
    idx.resize(max_unique);
    std::sort(idx.begin(), idx.end());
    std::vector<std::string> out;
    for (auto i : idx) {
        out.push_back(distinct[i]);
    }
    return out;
}

ValueVectors collect_value_vectors(const DatasetTable& table, const EmbeddedTensor& embeddings,
                                   const std::vector<std::size_t>& columns, std::size_t max_unique,
                                   std::uint64_t seed) {
    if (embeddings.n != table.rows() || embeddings.m != table.cols()) {
        throw ConfigError("embeddings do not match the dataset shape");
    }
    ValueVectors out;
    std::vector<std::vector<float>> rows;
    for (auto c : columns) {
        auto values = sample_values(table, c, max_unique, seed);
        std::map<std::string, std::size_t> first;
        for (std::size_t r = 0; r < table.rows(); ++r) {
            first.emplace(display_value(table, r, c), r);
        }
        for (const auto& v : values) {
            auto e = embeddings.at(first.at(v), c);
            rows.emplace_back(e.begin(), e.end());
            out.labels.push_back(v);
            out.groups.push_back(table.schema[c].name);
        }
    }
    out.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(embeddings.d));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < embeddings.d; ++j) {
            out.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return out;
}

PlotFormat parse_plot_format(std::string_view text) {
    if (text == "csv") {
        return PlotFormat::csv;
    }
    if (text == "svg") {
        return PlotFormat::svg;
    }
    throw ConfigError("unknown plot format '" + std::string(text) + "' (expected csv or svg)");
}

std::string projection_csv(const Projection2D& p) {
    std::ostringstream out;
    out << "label,x,y\n";
    for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
        const std::string label = static_cast<std::size_t>(i) < p.labels.size() ? p.labels[static_cast<std::size_t>(i)] : "";
        out << csv::escape(label, ',') << ',' << g9(p.coords(i, 0)) << ',' << g9(p.coords(i, 1)) << '\n';
    }
    return out.str();
}

std::string projection_svg(const Projection2D& p) {
    constexpr double W = 1000.0;
    constexpr double H = 700.0;
    constexpr double margin = 60.0;
    std::map<std::string, std::size_t> group_ids;
    for (const auto& g : p.groups) {
        group_ids.emplace(g, group_ids.size());
    }
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    if (p.coords.rows() > 0) {
        xmin = p.coords.col(0).minCoeff();
        xmax = p.coords.col(0).maxCoeff();
        ymin = p.coords.col(1).minCoeff();
        ymax = p.coords.col(1).maxCoeff();
    }
    const double xs = xmax > xmin ? (W - 2 * margin) / (xmax - xmin) : 0.0;
    const double ys = ymax > ymin ? (H - 2 * margin) / (ymax - ymin) : 0.0;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1000\" height=\"700\" viewBox=\"0 0 1000 700\">\n";
    out << "<style>\ntext { font: 11px sans-serif; }\n";
    for (const auto& [name, id] : group_ids) {
        out << ".g" << id << " { fill: " << kPalette[id % std::size(kPalette)] << "; }\n";
    }
    out << "</style>\n<rect width=\"1000\" height=\"700\" fill=\"white\"/>\n";
    char axis[160];
    std::snprintf(axis, sizeof axis, "PC1 (%.1f%%)", 100.0 * p.explained[0]);
    out << "<text x=\"500\" y=\"690\" text-anchor=\"middle\">" << axis << "</text>\n";
    std::snprintf(axis, sizeof axis, "PC2 (%.1f%%)", 100.0 * p.explained[1]);
    out << "<text x=\"15\" y=\"350\" transform=\"rotate(-90 15 350)\" text-anchor=\"middle\">" << axis << "</text>\n";
    for (Eigen::Index i = 0; i < p.coords.rows(); ++i) {
        const auto si = static_cast<std::size_t>(i);
        const double cx = xs > 0 ? margin + (p.coords(i, 0) - xmin) * xs : W / 2;
        const double cy = ys > 0 ? H - margin - (p.coords(i, 1) - ymin) * ys : H / 2;
        const std::size_t g = si < p.groups.size() ? group_ids.at(p.groups[si]) : 0;
        out << "<circle class=\"g" << g << "\" cx=\"" << g9(cx) << "\" cy=\"" << g9(cy) << "\" r=\"4\"/>\n";
        if (si < p.labels.size() && !p.labels[si].empty()) {
            out << "<text class=\"g" << g << "\" x=\"" << g9(cx + 6) << "\" y=\"" << g9(cy - 6) << "\">"
                << xml_escape(p.labels[si]) << "</text>\n";
        }
    }
    std::size_t row = 0;
    for (const auto& [name, id] : group_ids) {
        const double y = 20.0 + 16.0 * static_cast<double>(row++);
        out << "<circle class=\"g" << id << "\" cx=\"880\" cy=\"" << g9(y - 4) << "\" r=\"4\"/>"
            << "<text x=\"890\" y=\"" << g9(y) << "\">" << xml_escape(name) << "</text>\n";
    }
    out << "</svg>\n";
    return out.str();
}

void emit_projection(const Projection2D& projection, const std::filesystem::path& path, PlotFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << (format == PlotFormat::csv ? projection_csv(projection) : projection_svg(projection));
    if (!out) {
        throw Error("write failed for " + path.string());
    }
}

}  // namespace tte

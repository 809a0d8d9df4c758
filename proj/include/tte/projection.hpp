#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tte/dataset.hpp"
#include "tte/embed.hpp"

namespace tte {

struct Projection2D {
    Eigen::MatrixX2d coords;           // K x 2
    Eigen::MatrixX2d directions;       // d x 2, orthonormal (zero when variance is 0)
    std::array<double, 2> explained{};  // variance ratios, descending
    std::vector<std::string> labels;   // K texts, may be empty
    std::vector<std::string> groups;   // K feature names, drive the SVG colour classes
};

// Symmetric eigen-decomposition by cyclic Jacobi rotations. Eigenvalues come
// back in descending order with matching eigenvector columns.
struct SymmetricEigen {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
};
SymmetricEigen jacobi_eigen(Eigen::MatrixXd a, double tolerance = 1e-14, int max_sweeps = 100);

// Top-2 principal components of the rows of `vectors` (K x d). Uses the d x d
// covariance when K >= d and the K x K Gram matrix otherwise. Each direction
// is signed so that its largest-magnitude coordinate is positive.
Projection2D pca2(const Eigen::MatrixXd& vectors);

// Up to `max_unique` distinct display values of a column, in order of first
// appearance; a seeded sample when there are more.
std::vector<std::string> sample_values(const DatasetTable& table, std::size_t column, std::size_t max_unique = 20,
                                       std::uint64_t seed = 0);

struct ValueVectors {
    Eigen::MatrixXd vectors;  // one row per (column, value)
    std::vector<std::string> labels;
    std::vector<std::string> groups;
};

// E(X) rows for sampled values of each column, taken from the first row
// holding that value.
ValueVectors collect_value_vectors(const DatasetTable& table, const EmbeddedTensor& embeddings,
                                   const std::vector<std::size_t>& columns, std::size_t max_unique = 20,
                                   std::uint64_t seed = 0);

enum class PlotFormat { csv, svg };
PlotFormat parse_plot_format(std::string_view text);

// CSV columns label,x,y (9 significant digits); SVG is a 1000x700 scatter with
// one colour class per group.
void emit_projection(const Projection2D& projection, const std::filesystem::path& path, PlotFormat format);
std::string projection_csv(const Projection2D& projection);
std::string projection_svg(const Projection2D& projection);

}  // namespace tte

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace tte {

enum class FeatureKind { categorical, numeric };

std::string_view to_string(FeatureKind kind);
FeatureKind parse_feature_kind(std::string_view text);

struct FeatureSchema {
    std::string name;
    FeatureKind kind = FeatureKind::categorical;
    std::size_t index = 0;
};

// One table cell. `raw` is the verbatim CSV field (after unquoting); `number`
// is set only for numeric columns whose text parses to a finite value.
struct Cell {
    std::string raw;
    std::optional<double> number;
};

struct DatasetTable {
    std::string name;
    std::string label_column;
    std::vector<FeatureSchema> schema;
    std::vector<Cell> cells;  // row-major, rows() x cols()
    std::vector<int> labels;
    std::vector<std::string> class_names;
    std::vector<std::string> label_raw;  // verbatim label field per row
    std::size_t label_position = 0;      // label column slot among the kept source columns

    std::size_t rows() const { return labels.size(); }
    std::size_t cols() const { return schema.size(); }
    std::size_t num_classes() const { return class_names.size(); }

    const Cell& cell(std::size_t row, std::size_t col) const { return cells[row * cols() + col]; }
    bool is_missing(std::size_t row, std::size_t col) const;

    std::size_t count(FeatureKind kind) const;
    std::vector<std::size_t> class_counts() const;

    // Throws StructuralError when an invariant does not hold.
    void validate() const;
};

struct ExpectedCounts {
    std::optional<std::size_t> n;
    std::optional<std::size_t> m;
    std::optional<std::size_t> n_categorical;
    std::optional<std::size_t> n_numeric;
    std::optional<std::size_t> classes;
};

struct ColumnSpec {
    std::string name;
    FeatureKind kind = FeatureKind::categorical;
};

// JSON document describing how to read one CSV file:
//   {name, label_column, columns:[{name, kind}], expected:{n, m, n_categorical,
//    n_numeric, classes}, delimiter?, class_names?, drop_columns?}
struct DatasetManifest {
    std::string name;
    std::string label_column;
    std::vector<ColumnSpec> columns;
    ExpectedCounts expected;
    char delimiter = ',';
    std::vector<std::string> class_names;  // optional fixed class order
    std::vector<std::string> drop_columns;

    static DatasetManifest from_json(const nlohmann::json& doc);
    static DatasetManifest load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

DatasetTable load_csv(const std::filesystem::path& path, const DatasetManifest& manifest);

// Writes the table back as CSV in source column order. Unquoted fields
// reproduce the source bytes exactly.
void write_csv(const DatasetTable& table, const std::filesystem::path& path, char delimiter = ',');

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    std::uint64_t seed = 0;
    double fraction = 0.0;
};

// Per-class held-out counts: floor(n_c * fraction), then the remaining
// round(n * fraction) - sum(floor) slots go to the classes with the largest
// fractional parts (ties to the lower class id).
std::vector<std::size_t> stratified_allocation(std::span<const std::size_t> class_sizes,
                                               double fraction);

SplitIndices stratified_split(const DatasetTable& table, double test_fraction, std::uint64_t seed);

struct FitValSplit {
    std::vector<std::size_t> fit;
    std::vector<std::size_t> val;
};

FitValSplit validation_split(std::span<const std::size_t> train, std::span<const int> labels,
                             double fraction, std::uint64_t seed);

class Standardizer {
public:
    static Standardizer fit(const DatasetTable& table, std::span<const std::size_t> rows);

    // z-score of a cell; missing numeric cells map to 0 (the fitted mean).
    double transform(const DatasetTable& table, std::size_t row, std::size_t col) const;

    double mean(std::size_t col) const { return mean_[col]; }
    double stddev(std::size_t col) const { return std_[col]; }

private:
    std::vector<double> mean_;
    std::vector<double> std_;
};

double accuracy(std::span<const int> predictions, std::span<const int> labels);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

// Arithmetic mean and sample (n-1) standard deviation; a single value has std 0.
MeanStd aggregate_runs(std::span<const double> values);

}  // namespace tte

#include "tte/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "tte/csv.hpp"
#include "tte/error.hpp"
#include "tte/log.hpp"

namespace tte {

namespace {

std::string_view trim(std::string_view s) {
    auto first = s.find_first_not_of(" \t");
    if (first == std::string_view::npos) {
        return {};
    }
    auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

std::optional<double> parse_number(std::string_view text) {
    text = trim(text);
    if (text.empty()) {
        return std::nullopt;
    }
    if (text.front() == '+') {
        text.remove_prefix(1);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return value;
}

std::vector<std::string> order_classes(const std::vector<std::string>& raw_labels) {
    std::set<std::string> distinct(raw_labels.begin(), raw_labels.end());
    std::vector<std::string> names(distinct.begin(), distinct.end());
    bool all_numeric = std::all_of(names.begin(), names.end(),
                                   [](const std::string& s) { return parse_number(s).has_value(); });
    if (all_numeric) {
        std::stable_sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
            return *parse_number(a) < *parse_number(b);
        });
    }
    return names;
}

void check_expected(const DatasetTable& table, const ExpectedCounts& expected) {
    auto check = [&](const std::optional<std::size_t>& want, std::size_t got, const char* what) {
        if (want && *want != got) {
            throw StructuralError(table.name + ": manifest expects " + what + " = " +
                                  std::to_string(*want) + " but the file has " + std::to_string(got));
        }
    };
    check(expected.n, table.rows(), "n");
    check(expected.m, table.cols(), "m");
    check(expected.n_categorical, table.count(FeatureKind::categorical), "n_categorical");
    check(expected.n_numeric, table.count(FeatureKind::numeric), "n_numeric");
    check(expected.classes, table.num_classes(), "classes");
}

// Core of both split operations: partitions `indices` so that each class
// contributes its stratified_allocation share to the held-out side.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_partition(
    std::span<const std::size_t> indices, std::span<const int> labels, std::size_t num_classes,
    bool require_all_classes, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ConfigError("split fraction must lie in (0, 1), got " + std::to_string(fraction));
    }
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t idx : indices) {
        int label = labels[idx];
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
            throw StructuralError("label " + std::to_string(label) + " out of range");
        }
        members[static_cast<std::size_t>(label)].push_back(idx);
    }
    std::vector<std::size_t> sizes(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        sizes[c] = members[c].size();
        if (sizes[c] == 0 && require_all_classes) {
            throw StructuralError("class " + std::to_string(c) + " has no samples");
        }
    }
    auto held = stratified_allocation(sizes, fraction);

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> keep;
    std::vector<std::size_t> hold;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& group = members[c];
        std::sort(group.begin(), group.end());
        std::shuffle(group.begin(), group.end(), rng);
        hold.insert(hold.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(held[c]));
        keep.insert(keep.end(), group.begin() + static_cast<std::ptrdiff_t>(held[c]), group.end());
    }
    std::sort(keep.begin(), keep.end());
    std::sort(hold.begin(), hold.end());
    return {std::move(keep), std::move(hold)};
}

}  // namespace

std::string_view to_string(FeatureKind kind) {
    return kind == FeatureKind::numeric ? "numeric" : "categorical";
}

FeatureKind parse_feature_kind(std::string_view text) {
    if (text == "numeric" || text == "numerical") {
        return FeatureKind::numeric;
    }
    if (text == "categorical") {
        return FeatureKind::categorical;
    }
    throw ConfigError("unknown feature kind '" + std::string(text) + "'");
}

bool DatasetTable::is_missing(std::size_t row, std::size_t col) const {
    const Cell& c = cell(row, col);
    if (schema[col].kind == FeatureKind::numeric) {
        return !c.number.has_value();
    }
    return trim(c.raw).empty();
}

std::size_t DatasetTable::count(FeatureKind kind) const {
    return static_cast<std::size_t>(std::count_if(
        schema.begin(), schema.end(), [kind](const FeatureSchema& f) { return f.kind == kind; }));
}

std::vector<std::size_t> DatasetTable::class_counts() const {
    std::vector<std::size_t> counts(num_classes(), 0);
    for (int label : labels) {
        ++counts[static_cast<std::size_t>(label)];
    }
    return counts;
}

void DatasetTable::validate() const {
    std::set<std::string> names;
    for (std::size_t m = 0; m < schema.size(); ++m) {
        if (schema[m].index != m) {
            throw StructuralError(name + ": schema index of '" + schema[m].name + "' is not contiguous");
        }
        if (!names.insert(schema[m].name).second) {
            throw StructuralError(name + ": duplicate feature name '" + schema[m].name + "'");
        }
    }
    if (rows() == 0) {
        throw StructuralError(name + ": table has no rows");
    }
    if (num_classes() < 2) {
        throw StructuralError(name + ": at least two classes are required");
    }
    if (cells.size() != rows() * cols()) {
        throw StructuralError(name + ": cell grid does not match N x M");
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes()) {
            throw StructuralError(name + ": label id out of range");
        }
    }
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& doc) {
    DatasetManifest m;
    m.name = doc.at("name").get<std::string>();
    m.label_column = doc.at("label_column").get<std::string>();
    for (const auto& col : doc.at("columns")) {
        m.columns.push_back({col.at("name").get<std::string>(),
                             parse_feature_kind(col.at("kind").get<std::string>())});
    }
    if (doc.contains("expected")) {
        const auto& e = doc["expected"];
        auto opt = [&](const char* key) -> std::optional<std::size_t> {
            if (e.contains(key) && !e[key].is_null()) {
                return e[key].get<std::size_t>();
            }
            return std::nullopt;
        };
        m.expected = {opt("n"), opt("m"), opt("n_categorical"), opt("n_numeric"), opt("classes")};
    }
    if (doc.contains("delimiter")) {
        auto d = doc["delimiter"].get<std::string>();
        if (d.size() != 1) {
            throw ConfigError("manifest delimiter must be a single character");
        }
        m.delimiter = d[0];
    }
    if (doc.contains("class_names")) {
        m.class_names = doc["class_names"].get<std::vector<std::string>>();
    }
    if (doc.contains("drop_columns")) {
        m.drop_columns = doc["drop_columns"].get<std::vector<std::string>>();
    }
    if (m.columns.empty()) {
        throw ConfigError("manifest '" + m.name + "' declares no feature columns");
    }
    return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open manifest " + path.string());
    }
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid manifest " + path.string() + ": " + e.what());
    }
}

nlohmann::json DatasetManifest::to_json() const {
    nlohmann::json doc;
    doc["name"] = name;
    doc["label_column"] = label_column;
    doc["columns"] = nlohmann::json::array();
    for (const auto& c : columns) {
        doc["columns"].push_back({{"name", c.name}, {"kind", std::string(to_string(c.kind))}});
    }
    nlohmann::json e = nlohmann::json::object();
    if (expected.n) e["n"] = *expected.n;
    if (expected.m) e["m"] = *expected.m;
    if (expected.n_categorical) e["n_categorical"] = *expected.n_categorical;
    if (expected.n_numeric) e["n_numeric"] = *expected.n_numeric;
    if (expected.classes) e["classes"] = *expected.classes;
    doc["expected"] = e;
    if (delimiter != ',') {
        doc["delimiter"] = std::string(1, delimiter);
    }
    if (!class_names.empty()) {
        doc["class_names"] = class_names;
    }
    if (!drop_columns.empty()) {
        doc["drop_columns"] = drop_columns;
    }
    return doc;
}

DatasetTable load_csv(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StructuralError("cannot open " + path.string());
    }
    csv::Reader reader(in, manifest.delimiter);
    csv::Record header;
    if (!reader.next(header)) {
        throw StructuralError(path.string() + ": missing header row");
    }

    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < header.fields.size(); ++i) {
        if (!position.emplace(header.fields[i], i).second) {
            throw StructuralError(path.string() + ": duplicate header '" + header.fields[i] + "'");
        }
    }
    auto locate = [&](const std::string& name) {
        auto it = position.find(name);
        if (it == position.end()) {
            throw StructuralError(path.string() + ": column '" + name + "' not found in header");
        }
        return it->second;
    };

    DatasetTable table;
    table.name = manifest.name;
    table.label_column = manifest.label_column;
    std::vector<std::size_t> source(manifest.columns.size());
    for (std::size_t m = 0; m < manifest.columns.size(); ++m) {
        table.schema.push_back({manifest.columns[m].name, manifest.columns[m].kind, m});
        source[m] = locate(manifest.columns[m].name);
    }
    const std::size_t label_src = locate(manifest.label_column);

    std::set<std::size_t> accounted(source.begin(), source.end());
    accounted.insert(label_src);
    for (const auto& name : manifest.drop_columns) {
        accounted.insert(locate(name));
    }
    if (accounted.size() != header.fields.size()) {
        for (std::size_t i = 0; i < header.fields.size(); ++i) {
            if (!accounted.count(i)) {
                throw StructuralError(path.string() + ": column '" + header.fields[i] +
                                      "' is neither declared nor dropped in the manifest");
            }
        }
    }
    table.label_position = static_cast<std::size_t>(
        std::count_if(source.begin(), source.end(), [&](std::size_t s) { return s < label_src; }));
    if (!std::is_sorted(source.begin(), source.end())) {
        logger()->debug("{}: manifest column order differs from the file", manifest.name);
    }

    std::size_t missing = 0;
    csv::Record record;
    std::size_t row = 0;
    while (reader.next(record)) {
        ++row;
        if (record.fields.size() != header.fields.size()) {
            throw StructuralError(path.string() + ": row " + std::to_string(row) + " (line " +
                                  std::to_string(record.line) + ") has " +
                                  std::to_string(record.fields.size()) + " fields, expected " +
                                  std::to_string(header.fields.size()));
        }
        for (std::size_t m = 0; m < source.size(); ++m) {
            Cell cell{record.fields[source[m]], std::nullopt};
            if (table.schema[m].kind == FeatureKind::numeric) {
                cell.number = parse_number(cell.raw);
                missing += cell.number ? 0 : 1;
            }
            table.cells.push_back(std::move(cell));
        }
        table.label_raw.push_back(record.fields[label_src]);
    }
    if (missing > 0) {
        logger()->info("{}: {} numeric cells unparseable, treated as missing", manifest.name, missing);
    }

    table.class_names =
        manifest.class_names.empty() ? order_classes(table.label_raw) : manifest.class_names;
    std::unordered_map<std::string, int> class_id;
    for (std::size_t c = 0; c < table.class_names.size(); ++c) {
        class_id.emplace(table.class_names[c], static_cast<int>(c));
    }
    for (std::size_t i = 0; i < table.label_raw.size(); ++i) {
        auto it = class_id.find(table.label_raw[i]);
        if (it == class_id.end()) {
            throw StructuralError(path.string() + ": row " + std::to_string(i + 1) + " has label '" +
                                  table.label_raw[i] + "' not listed in class_names");
        }
        table.labels.push_back(it->second);
    }

    table.validate();
    check_expected(table, manifest.expected);
    return table;
}

void write_csv(const DatasetTable& table, const std::filesystem::path& path, char delimiter) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    auto emit = [&](auto&& field_at) {
        std::vector<std::string> fields;
        for (std::size_t slot = 0; slot <= table.cols(); ++slot) {
            fields.push_back(field_at(slot));
        }
        out << csv::join(fields, delimiter) << '\n';
    };
    auto feature_of = [&](std::size_t slot) {
        return slot < table.label_position ? slot : slot - 1;
    };
    emit([&](std::size_t slot) {
        return slot == table.label_position ? table.label_column : table.schema[feature_of(slot)].name;
    });
    for (std::size_t i = 0; i < table.rows(); ++i) {
        emit([&](std::size_t slot) {
            return slot == table.label_position ? table.label_raw[i] : table.cell(i, feature_of(slot)).raw;
        });
    }
}

std::vector<std::size_t> stratified_allocation(std::span<const std::size_t> class_sizes,
                                               double fraction) {
    std::size_t total = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
    std::vector<std::size_t> held(class_sizes.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < class_sizes.size(); ++c) {
        double exact = static_cast<double>(class_sizes[c]) * fraction;
        held[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += held[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    auto target = static_cast<std::size_t>(std::floor(static_cast<double>(total) * fraction + 0.5));
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < target && k < remainders.size(); ++k) {
        std::size_t c = remainders[k].second;
        if (held[c] < class_sizes[c]) {
            ++held[c];
            ++assigned;
        }
    }
    return held;
}

SplitIndices stratified_split(const DatasetTable& table, double test_fraction, std::uint64_t seed) {
    std::vector<std::size_t> all(table.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    auto [train, test] =
        stratified_partition(all, table.labels, table.num_classes(), true, test_fraction, seed);
    return {std::move(train), std::move(test), seed, test_fraction};
}

FitValSplit validation_split(std::span<const std::size_t> train, std::span<const int> labels,
                             double fraction, std::uint64_t seed) {
    int max_label = -1;
    for (std::size_t idx : train) {
        max_label = std::max(max_label, labels[idx]);
    }
    if (train.empty()) {
        throw StructuralError("validation split of an empty training set");
    }
    auto [fit, val] = stratified_partition(train, labels, static_cast<std::size_t>(max_label + 1),
                                           false, fraction, seed);
    return {std::move(fit), std::move(val)};
}

Standardizer Standardizer::fit(const DatasetTable& table, std::span<const std::size_t> rows) {
    Standardizer s;
    s.mean_.assign(table.cols(), 0.0);
    s.std_.assign(table.cols(), 1.0);
    for (std::size_t m = 0; m < table.cols(); ++m) {
        if (table.schema[m].kind != FeatureKind::numeric) {
            continue;
        }
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t r : rows) {
            if (const auto& v = table.cell(r, m).number) {
                sum += *v;
                ++n;
            }
        }
        if (n == 0) {
            continue;
        }
        double mean = sum / static_cast<double>(n);
        double sq = 0.0;
        for (std::size_t r : rows) {
            if (const auto& v = table.cell(r, m).number) {
                sq += (*v - mean) * (*v - mean);
            }
        }
        double sd = std::sqrt(sq / static_cast<double>(n));
        s.mean_[m] = mean;
        s.std_[m] = sd < 1e-12 ? 1.0 : sd;
    }
    return s;
}

double Standardizer::transform(const DatasetTable& table, std::size_t row, std::size_t col) const {
    const auto& v = table.cell(row, col).number;
    if (!v) {
        return 0.0;
    }
    return (*v - mean_[col]) / std_[col];
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) {
        throw ConfigError("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
    }
    if (labels.empty()) {
        throw ConfigError("accuracy of an empty set");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += predictions[i] == labels[i] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

MeanStd aggregate_runs(std::span<const double> values) {
    if (values.empty()) {
        throw ConfigError("aggregate_runs of an empty list");
    }
    double n = static_cast<double>(values.size());
    double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() == 1) {
        return {mean, 0.0};
    }
    double sq = 0.0;
    for (double v : values) {
        sq += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(sq / (n - 1.0))};
}

}  // namespace tte

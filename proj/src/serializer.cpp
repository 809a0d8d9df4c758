#include "tte/serializer.hpp"

#include <unordered_map>

#include "tte/error.hpp"

namespace tte {

namespace {
constexpr std::string_view kCol = "{col}";
constexpr std::string_view kValue = "{value}";
}  // namespace

Serializer::Serializer(std::string sentence_template) : template_(std::move(sentence_template)) {
    auto c = template_.find(kCol);
    auto v = template_.find(kValue);
    if (c == std::string::npos || v == std::string::npos) {
        throw ConfigError("sentence template must contain {col} and {value}: '" + template_ + "'");
    }
    value_first_ = v < c;
    auto first = std::min(c, v);
    auto second = std::max(c, v);
    auto first_len = value_first_ ? kValue.size() : kCol.size();
    auto second_len = value_first_ ? kCol.size() : kValue.size();
    prefix_ = template_.substr(0, first);
    middle_ = template_.substr(first + first_len, second - first - first_len);
    suffix_ = template_.substr(second + second_len);
}

std::string Serializer::cell(std::string_view column_name, std::string_view value_text) const {
    if (column_name.empty()) {
        throw ConfigError("serialize_cell: empty column name");
    }
    std::string_view value = value_text.empty() ? kUnknownToken : value_text;
    std::string_view a = value_first_ ? value : column_name;
    std::string_view b = value_first_ ? column_name : value;
    std::string out;
    out.reserve(prefix_.size() + a.size() + middle_.size() + b.size() + suffix_.size());
    out.append(prefix_).append(a).append(middle_).append(b).append(suffix_);
    return out;
}

std::vector<std::string> Serializer::row(const DatasetTable& table, std::size_t row) const {
    if (row >= table.rows()) {
        throw ConfigError("serialize_row: row " + std::to_string(row) + " out of range (N = " +
                          std::to_string(table.rows()) + ")");
    }
    std::vector<std::string> out;
    out.reserve(table.cols());
    for (std::size_t m = 0; m < table.cols(); ++m) {
        out.push_back(cell(table.schema[m].name, display_value(table, row, m)));
    }
    return out;
}

std::string serialize_cell(std::string_view column_name, std::string_view value_text) {
    static const Serializer serializer;
    return serializer.cell(column_name, value_text);
}

std::vector<std::string> serialize_row(const DatasetTable& table, std::size_t row) {
    static const Serializer serializer;
    return serializer.row(table, row);
}

std::string display_value(const DatasetTable& table, std::size_t row, std::size_t col) {
    if (table.is_missing(row, col)) {
        return std::string(kUnknownToken);
    }
    return table.cell(row, col).raw;
}

SerializedDataset serialize_dataset(const DatasetTable& table, const Serializer& serializer) {
    SerializedDataset out;
    out.rows = table.rows();
    out.cols = table.cols();
    out.grid.reserve(out.rows * out.cols);
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < out.rows; ++i) {
        for (std::size_t m = 0; m < out.cols; ++m) {
            auto sentence = serializer.cell(table.schema[m].name, display_value(table, i, m));
            auto [it, inserted] = seen.emplace(sentence, out.unique.size());
            if (inserted) {
                out.unique.push_back(std::move(sentence));
            }
            out.grid.push_back(it->second);
        }
    }
    return out;
}

}  // namespace tte

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "tte/dataset.hpp"

namespace tte {

// Sentence template with {col} and {value} placeholders.
inline constexpr std::string_view kDefaultTemplate = "The {col} is {value}.";
inline constexpr std::string_view kAlternateTemplate = "This {col} is {value}.";
inline constexpr std::string_view kUnknownToken = "unknown";

class Serializer {
public:
    explicit Serializer(std::string sentence_template = std::string(kDefaultTemplate));

    const std::string& sentence_template() const { return template_; }

    // Empty values render as kUnknownToken; anything else is inserted verbatim.
    std::string cell(std::string_view column_name, std::string_view value_text) const;

    std::vector<std::string> row(const DatasetTable& table, std::size_t row) const;

private:
    std::string template_;
    std::string prefix_;
    std::string middle_;
    std::string suffix_;
    bool value_first_ = false;
};

std::string serialize_cell(std::string_view column_name, std::string_view value_text);

std::vector<std::string> serialize_row(const DatasetTable& table, std::size_t row);

// Text the serializer shows for a cell: raw CSV token, or kUnknownToken for
// missing values.
std::string display_value(const DatasetTable& table, std::size_t row, std::size_t col);

struct SerializedDataset {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::string> unique;  // first-appearance order
    std::vector<std::size_t> grid;    // rows x cols, indices into `unique`

    const std::string& sentence(std::size_t row, std::size_t col) const {
        return unique[grid[row * cols + col]];
    }
};

SerializedDataset serialize_dataset(const DatasetTable& table, const Serializer& serializer = Serializer());

}  // namespace tte

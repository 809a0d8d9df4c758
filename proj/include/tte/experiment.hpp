#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tte/dataset.hpp"
#include "tte/embed.hpp"
#include "tte/models.hpp"
#include "tte/trainer.hpp"

namespace tte {

struct DatasetRef {
    std::string name;
    std::filesystem::path manifest;
    std::filesystem::path csv;
    std::filesystem::path embeddings;  // E(X) file; required for with-llm cells
};

// Plan JSON:
//   {datasets:[{name?, manifest, csv, embeddings?}], architectures:[...],
//    encoder_modes:[...], seeds:[...], model:{...}, train:{...},
//    test_fraction, val_fraction, workers, embeddings_dir, provider:{...}}
// Relative paths resolve against `base_dir`.
struct ExperimentPlan {
    std::vector<DatasetRef> datasets;
    std::vector<Architecture> architectures{Architecture::mlp, Architecture::resnet, Architecture::ft_transformer};
    std::vector<EncoderMode> modes{EncoderMode::base, EncoderMode::with_llm};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    ModelConfig model;  // architecture and encoder_mode are overridden per cell
    TrainConfig train;  // seed is overridden per cell
    double test_fraction = 0.3;
    double val_fraction = 0.2;
    std::size_t workers = 0;  // 0: one per hardware thread
    nlohmann::json provider = nlohmann::json::object();

    void validate() const;
    static ExperimentPlan from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
    static ExperimentPlan load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

// Default E(X) location for a dataset.
std::filesystem::path embeddings_path(const std::filesystem::path& dir, std::string_view dataset);

struct CellKey {
    std::string dataset;
    Architecture arch = Architecture::mlp;
    EncoderMode mode = EncoderMode::base;
    std::uint64_t seed = 0;

    std::string id() const;
    auto tie() const { return std::tie(dataset, arch, mode, seed); }
    bool operator<(const CellKey& o) const { return tie() < o.tie(); }
    bool operator==(const CellKey& o) const { return tie() == o.tie(); }
};

// Independent streams derived from one experiment seed with derive_seed().
// Split and validation seeds depend only on the experiment seed, so every
// architecture and encoder mode sees the same rows.
struct CellSeeds {
    std::uint64_t split;
    std::uint64_t val;
    std::uint64_t init;
    std::uint64_t shuffle;
};
CellSeeds cell_seeds(std::uint64_t seed);

// Table, split-independent encoder inputs and (lazily) E(X) for one dataset.
class PreparedDataset {
public:
    explicit PreparedDataset(DatasetRef ref);

    const DatasetRef& ref() const { return ref_; }
    const DatasetTable& table() const { return table_; }
    // Throws ConfigError naming the `embed` command when the file is missing.
    const EmbeddedTensor& embeddings() const;

private:
    DatasetRef ref_;
    DatasetTable table_;
    mutable std::once_flag embeddings_once_;
    mutable std::unique_ptr<EmbeddedTensor> embeddings_;
};

// Split, fit the base encoding on the training rows, train, and score the
// test rows. report.test_accuracy is in percent.
TrainReport run_cell(const PreparedDataset& data, Architecture arch, EncoderMode mode, std::uint64_t seed,
                     const ExperimentPlan& plan);

struct CellRecord {
    CellKey key;
    bool ok = false;
    std::string error;
    TrainReport report;

    nlohmann::json to_json() const;
    static CellRecord from_json(const nlohmann::json& doc);
};

// Append-only JSON-lines file, one record per cell. A truncated final line
// (interrupted write) is ignored on load.
class ResultsStore {
public:
    explicit ResultsStore(std::filesystem::path file);

    const std::filesystem::path& path() const { return file_; }
    std::vector<CellRecord> load() const;
    void append(const CellRecord& record);

private:
    std::filesystem::path file_;
    std::mutex mutex_;
};

struct TableCell {
    std::size_t runs = 0;
    std::size_t missing = 0;
    MeanStd accuracy;
};

struct DiffRow {
    std::string dataset;
    Architecture arch = Architecture::mlp;
    std::vector<std::uint64_t> seeds;
    std::vector<double> base;
    std::vector<double> with_llm;
    std::vector<double> diff;  // with_llm - base, percentage points
};

struct ResultsTable {
    std::vector<std::string> datasets;
    std::vector<Architecture> architectures;
    std::vector<EncoderMode> modes;
    std::map<std::tuple<std::string, Architecture, EncoderMode>, TableCell> cells;
    // Mean of the per-dataset means, over datasets with at least one run.
    std::map<std::pair<Architecture, EncoderMode>, double> averages;
    std::vector<DiffRow> differences;

    const TableCell& at(const std::string& dataset, Architecture arch, EncoderMode mode) const;

    std::string to_csv() const;
    std::string to_markdown() const;
    std::string differences_csv() const;
};

// Aggregates the successful records that belong to the plan.
ResultsTable build_table(const ExperimentPlan& plan, const std::vector<CellRecord>& records);

struct RunSummary {
    std::size_t executed = 0;
    std::size_t skipped = 0;
    std::size_t failed = 0;
    ResultsTable table;
};

struct RunOptions {
    std::filesystem::path out_dir;  // results.jsonl, table.csv, table.md, differences.csv
    bool force = false;             // ignore existing results
    std::function<void(const CellRecord&)> on_cell;
};

// Runs every (dataset, arch, mode, seed) cell not already present in
// out_dir/results.jsonl and writes the tables. Cell failures are recorded,
// not thrown.
RunSummary run_plan(const ExperimentPlan& plan, const RunOptions& options);

}  // namespace tte

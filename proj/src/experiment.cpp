#include "tte/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "tte/csv.hpp"
#include "tte/error.hpp"
#include "tte/log.hpp"
#include "tte/seed.hpp"

namespace tte {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw Error("write failed for " + path.string());
    }
}

std::string arch_label(Architecture a) {
    switch (a) {
        case Architecture::mlp: return "MLP";
        case Architecture::resnet: return "ResNet";
        case Architecture::ft_transformer: return "FT-Transformer";
    }
    return "?";
}

}  // namespace

void ExperimentPlan::validate() const {
    if (datasets.empty()) {
        throw ConfigError("plan has no datasets");
    }
    if (architectures.empty() || modes.empty() || seeds.empty()) {
        throw ConfigError("plan needs at least one architecture, encoder mode and seed");
    }
    std::set<std::uint64_t> distinct(seeds.begin(), seeds.end());
    if (distinct.size() != seeds.size()) {
        throw ConfigError("plan seeds must be distinct");
    }
    std::set<std::string> names;
    for (const auto& d : datasets) {
        if (!names.insert(d.name).second) {
            throw ConfigError("dataset '" + d.name + "' listed twice");
        }
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0) || !(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("test_fraction and val_fraction must lie in (0, 1)");
    }
    model.validate();
    train.validate();
}

fs::path embeddings_path(const fs::path& dir, std::string_view dataset) {
    return dir / (std::string(dataset) + ".tte");
}

ExperimentPlan ExperimentPlan::from_json(const nlohmann::json& doc, const fs::path& base_dir) {
    ExperimentPlan plan;
    const fs::path emb_dir = resolve(base_dir, doc.value("embeddings_dir", std::string("embeddings")));
    for (const auto& d : doc.at("datasets")) {
        DatasetRef ref;
        ref.manifest = resolve(base_dir, d.at("manifest").get<std::string>());
        ref.csv = resolve(base_dir, d.at("csv").get<std::string>());
        ref.name = d.contains("name") ? d.at("name").get<std::string>() : DatasetManifest::load(ref.manifest).name;
        ref.embeddings = d.contains("embeddings") ? resolve(base_dir, d.at("embeddings").get<std::string>())
                                                  : embeddings_path(emb_dir, ref.name);
        plan.datasets.push_back(std::move(ref));
    }
    if (doc.contains("architectures")) {
        plan.architectures.clear();
        for (const auto& a : doc.at("architectures")) {
            plan.architectures.push_back(parse_architecture(a.get<std::string>()));
        }
    }
    if (doc.contains("encoder_modes")) {
        plan.modes.clear();
        for (const auto& m : doc.at("encoder_modes")) {
            plan.modes.push_back(parse_encoder_mode(m.get<std::string>()));
        }
    }
    if (doc.contains("seeds")) {
        plan.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    }
    if (doc.contains("model")) {
        plan.model = ModelConfig::from_json(doc.at("model"));
    }
    if (doc.contains("train")) {
        plan.train = TrainConfig::from_json(doc.at("train"));
    }
    plan.test_fraction = doc.value("test_fraction", plan.test_fraction);
    plan.val_fraction = doc.value("val_fraction", plan.val_fraction);
    plan.workers = doc.value("workers", plan.workers);
    plan.provider = doc.value("provider", nlohmann::json::object());
    plan.validate();
    return plan;
}

ExperimentPlan ExperimentPlan::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open plan " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("plan " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(doc, path.parent_path());
}

nlohmann::json ExperimentPlan::to_json() const {
    nlohmann::json ds = nlohmann::json::array();
    for (const auto& d : datasets) {
        ds.push_back({{"name", d.name},
                      {"manifest", d.manifest.string()},
                      {"csv", d.csv.string()},
                      {"embeddings", d.embeddings.string()}});
    }
    nlohmann::json archs = nlohmann::json::array();
    for (auto a : architectures) {
        archs.push_back(to_string(a));
    }
    nlohmann::json ms = nlohmann::json::array();
    for (auto m : modes) {
        ms.push_back(to_string(m));
    }
    return {{"datasets", ds},
            {"architectures", archs},
            {"encoder_modes", ms},
            {"seeds", seeds},
            {"model", model.to_json()},
            {"train", train.to_json()},
            {"test_fraction", test_fraction},
            {"val_fraction", val_fraction},
            {"workers", workers},
            {"provider", provider}};
}

std::string CellKey::id() const {
    return dataset + "/" + std::string(to_string(arch)) + "/" + std::string(to_string(mode)) + "/" +
           std::to_string(seed);
}

CellSeeds cell_seeds(std::uint64_t seed) {
    return {derive_seed(seed, "split"), derive_seed(seed, "val"), derive_seed(seed, "init"),
            derive_seed(seed, "shuffle")};
}

PreparedDataset::PreparedDataset(DatasetRef ref) : ref_(std::move(ref)) {
    table_ = load_csv(ref_.csv, DatasetManifest::load(ref_.manifest));
}

const EmbeddedTensor& PreparedDataset::embeddings() const {
    std::call_once(embeddings_once_, [this] {
        if (!fs::exists(ref_.embeddings)) {
            throw ConfigError("no embeddings for dataset '" + ref_.name + "' at " + ref_.embeddings.string() +
                              "; run `tte embed --dataset " + ref_.manifest.string() + " --csv " + ref_.csv.string() +
                              " --out " + ref_.embeddings.parent_path().string() + "` first");
        }
        auto e = std::make_unique<EmbeddedTensor>(EmbeddedTensor::load(ref_.embeddings));
        if (e->n != table_.rows() || e->m != table_.cols()) {
            throw ConfigError("embeddings " + ref_.embeddings.string() + " are " + std::to_string(e->n) + "x" +
                              std::to_string(e->m) + " but dataset '" + ref_.name + "' is " +
                              std::to_string(table_.rows()) + "x" + std::to_string(table_.cols()) +
                              "; re-run `tte embed --force`");
        }
        embeddings_ = std::move(e);
    });
    return *embeddings_;
}

TrainReport run_cell(const PreparedDataset& data, Architecture arch, EncoderMode mode, std::uint64_t seed,
                     const ExperimentPlan& plan) {
    const auto& table = data.table();
    const auto seeds = cell_seeds(seed);
    const auto split = stratified_split(table, plan.test_fraction, seeds.split);
    const auto fit_val = validation_split(split.train, table.labels, plan.val_fraction, seeds.val);

    ModelConfig config = plan.model;
    config.architecture = arch;
    config.encoder_mode = mode;

    EncodedInputs encoded;
    ModelInputs inputs;
    std::optional<EncoderSpec> spec;
    if (mode == EncoderMode::base) {
        auto encoding = BaseEncoding::fit(table, split.train);
        encoded = encode_inputs(encoding, table);
        inputs.base = &encoded;
        spec = EncoderSpec::base(encoding, config.token_dim);
    } else {
        const auto& e = data.embeddings();
        inputs.llm = &e;
        spec = EncoderSpec::with_llm(e.m, e.d, config.token_dim);
    }

    Model<float> model(config, *spec, table.num_classes(), seeds.init);
    TrainConfig tc = plan.train;
    tc.seed = seeds.shuffle;
    auto report = train(model, inputs, table.labels, fit_val, tc);
    report.test_accuracy = evaluate(model, inputs, table.labels, split.test);
    return report;
}

nlohmann::json CellRecord::to_json() const {
    nlohmann::json j = {{"dataset", key.dataset},
                        {"architecture", to_string(key.arch)},
                        {"encoder_mode", to_string(key.mode)},
                        {"seed", key.seed},
                        {"ok", ok}};
    if (ok) {
        j["test_accuracy"] = report.test_accuracy;
        j["report"] = report.to_json();
    } else {
        j["error"] = error;
    }
    return j;
}

CellRecord CellRecord::from_json(const nlohmann::json& doc) {
    CellRecord r;
    r.key.dataset = doc.at("dataset").get<std::string>();
    r.key.arch = parse_architecture(doc.at("architecture").get<std::string>());
    r.key.mode = parse_encoder_mode(doc.at("encoder_mode").get<std::string>());
    r.key.seed = doc.at("seed").get<std::uint64_t>();
    r.ok = doc.at("ok").get<bool>();
    if (r.ok) {
        r.report = TrainReport::from_json(doc.at("report"));
    } else {
        r.error = doc.value("error", std::string());
    }
    return r;
}

ResultsStore::ResultsStore(fs::path file) : file_(std::move(file)) {}

std::vector<CellRecord> ResultsStore::load() const {
    std::vector<CellRecord> out;
    std::ifstream in(file_, std::ios::binary);
    if (!in) {
        return out;
    }
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(CellRecord::from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            logger()->warn("{}:{}: skipping unreadable record ({})", file_.string(), number, e.what());
        }
    }
    return out;
}

void ResultsStore::append(const CellRecord& record) {
    std::lock_guard lock(mutex_);
    bool needs_newline = false;
    if (fs::exists(file_) && fs::file_size(file_) > 0) {
        std::ifstream in(file_, std::ios::binary);
        in.seekg(-1, std::ios::end);
        needs_newline = in.get() != '\n';
    }
    std::ofstream out(file_, std::ios::binary | std::ios::app);
    if (!out) {
        throw Error("cannot append to " + file_.string());
    }
    if (needs_newline) {
        out << '\n';
    }
    out << record.to_json().dump() << '\n';
    out.flush();
    if (!out) {
        throw Error("write failed for " + file_.string());
    }
}

const TableCell& ResultsTable::at(const std::string& dataset, Architecture arch, EncoderMode mode) const {
    auto it = cells.find({dataset, arch, mode});
    if (it == cells.end()) {
        throw ConfigError("no table cell for " + dataset + "/" + std::string(to_string(arch)) + "/" +
                          std::string(to_string(mode)));
    }
    return it->second;
}

ResultsTable build_table(const ExperimentPlan& plan, const std::vector<CellRecord>& records) {
    ResultsTable t;
    t.architectures = plan.architectures;
    t.modes = plan.modes;
    for (const auto& d : plan.datasets) {
        t.datasets.push_back(d.name);
    }
    // Latest successful record per cell.
    std::map<CellKey, double> acc;
    for (const auto& r : records) {
        if (r.ok) {
            acc[r.key] = r.report.test_accuracy;
        }
    }
    auto lookup = [&](const std::string& ds, Architecture a, EncoderMode m, std::uint64_t s) -> std::optional<double> {
        auto it = acc.find(CellKey{ds, a, m, s});
        return it == acc.end() ? std::nullopt : std::optional<double>(it->second);
    };

    for (const auto& ds : t.datasets) {
        for (auto a : t.architectures) {
            for (auto m : t.modes) {
                std::vector<double> values;
                for (auto s : plan.seeds) {
                    if (auto v = lookup(ds, a, m, s)) {
                        values.push_back(*v);
                    }
                }
                TableCell c;
                c.runs = values.size();
                c.missing = plan.seeds.size() - values.size();
                if (!values.empty()) {
                    c.accuracy = aggregate_runs(values);
                }
                t.cells[{ds, a, m}] = c;
            }
        }
    }
    for (auto a : t.architectures) {
        for (auto m : t.modes) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& ds : t.datasets) {
                const auto& c = t.cells.at({ds, a, m});
                if (c.runs > 0) {
                    sum += c.accuracy.mean;
                    ++n;
                }
            }
            if (n > 0) {
                t.averages[{a, m}] = sum / static_cast<double>(n);
            }
        }
    }
    const bool paired = std::count(t.modes.begin(), t.modes.end(), EncoderMode::base) &&
                        std::count(t.modes.begin(), t.modes.end(), EncoderMode::with_llm);
    if (paired) {
        for (const auto& ds : t.datasets) {
            for (auto a : t.architectures) {
                DiffRow row;
                row.dataset = ds;
                row.arch = a;
                for (auto s : plan.seeds) {
                    auto b = lookup(ds, a, EncoderMode::base, s);
                    auto l = lookup(ds, a, EncoderMode::with_llm, s);
                    if (b && l) {
                        row.seeds.push_back(s);
                        row.base.push_back(*b);
                        row.with_llm.push_back(*l);
                        row.diff.push_back(*l - *b);
                    }
                }
                t.differences.push_back(std::move(row));
            }
        }
    }
    return t;
}

std::string ResultsTable::to_csv() const {
    std::ostringstream out;
    out << "dataset,architecture,encoder_mode,runs,missing,mean,std\n";
    for (const auto& ds : datasets) {
        for (auto a : architectures) {
            for (auto m : modes) {
                const auto& c = cells.at({ds, a, m});
                out << csv::escape(ds, ',') << ',' << to_string(a) << ',' << to_string(m) << ',' << c.runs << ','
                    << c.missing << ',';
                if (c.runs > 0) {
                    out << full(c.accuracy.mean) << ',' << full(c.accuracy.std);
                } else {
                    out << ',';
                }
                out << '\n';
            }
        }
    }
    for (auto a : architectures) {
        for (auto m : modes) {
            auto it = averages.find({a, m});
            out << "average," << to_string(a) << ',' << to_string(m) << ",,,";
            out << (it == averages.end() ? std::string() : full(it->second)) << ",\n";
        }
    }
    return out.str();
}

std::string ResultsTable::to_markdown() const {
    std::ostringstream out;
    out << "| Dataset |";
    for (auto a : architectures) {
        for (auto m : modes) {
            out << ' ' << arch_label(a) << ' ' << to_string(m) << " |";
        }
    }
    out << "\n|---|";
    for (std::size_t i = 0; i < architectures.size() * modes.size(); ++i) {
        out << "---|";
    }
    out << '\n';
    for (const auto& ds : datasets) {
        out << "| " << ds << " |";
        for (auto a : architectures) {
            for (auto m : modes) {
                const auto& c = cells.at({ds, a, m});
                if (c.runs == 0) {
                    out << " missing |";
                    continue;
                }
                out << ' ' << fixed(c.accuracy.mean, 2) << " ± " << fixed(c.accuracy.std, 2);
                if (c.missing > 0) {
                    out << " (" << c.runs << '/' << c.runs + c.missing << ')';
                }
                out << " |";
            }
        }
        out << '\n';
    }
    out << "| Average |";
    for (auto a : architectures) {
        for (auto m : modes) {
            auto it = averages.find({a, m});
            out << ' ' << (it == averages.end() ? std::string("missing") : fixed(it->second, 2)) << " |";
        }
    }
    out << '\n';
    return out.str();
}

std::string ResultsTable::differences_csv() const {
    std::ostringstream out;
    out << "dataset,architecture,seed,base,with_llm,diff\n";
    for (const auto& row : differences) {
        for (std::size_t i = 0; i < row.seeds.size(); ++i) {
            out << csv::escape(row.dataset, ',') << ',' << to_string(row.arch) << ',' << row.seeds[i] << ','
                << full(row.base[i]) << ',' << full(row.with_llm[i]) << ',' << full(row.diff[i]) << '\n';
        }
    }
    return out.str();
}

RunSummary run_plan(const ExperimentPlan& plan, const RunOptions& options) {
    plan.validate();
    fs::create_directories(options.out_dir);
    ResultsStore store(options.out_dir / "results.jsonl");
    if (options.force) {
        fs::remove(store.path());
    }

    std::set<CellKey> done;
    for (const auto& r : store.load()) {
        if (r.ok) {
            done.insert(r.key);
        }
    }

    RunSummary summary;
    std::vector<std::unique_ptr<PreparedDataset>> prepared;
    std::vector<std::string> load_errors;
    for (const auto& ref : plan.datasets) {
        try {
            prepared.push_back(std::make_unique<PreparedDataset>(ref));
            load_errors.emplace_back();
        } catch (const std::exception& e) {
            prepared.push_back(nullptr);
            load_errors.emplace_back(e.what());
        }
    }

    struct Job {
        std::size_t dataset;
        CellKey key;
    };
    std::vector<Job> jobs;
    for (std::size_t d = 0; d < plan.datasets.size(); ++d) {
        for (auto a : plan.architectures) {
            for (auto m : plan.modes) {
                for (auto s : plan.seeds) {
                    CellKey key{plan.datasets[d].name, a, m, s};
                    if (done.count(key)) {
                        ++summary.skipped;
                    } else {
                        jobs.push_back({d, key});
                    }
                }
            }
        }
    }

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> failed{0};
    std::mutex callback_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
            const auto& job = jobs[i];
            CellRecord record;
            record.key = job.key;
            try {
                if (!prepared[job.dataset]) {
                    throw Error(load_errors[job.dataset]);
                }
                record.report = run_cell(*prepared[job.dataset], job.key.arch, job.key.mode, job.key.seed, plan);
                record.ok = true;
                logger()->info("{}: {:.2f}% (epoch {})", job.key.id(), record.report.test_accuracy,
                               record.report.stopped_epoch);
            } catch (const std::exception& e) {
                record.error = e.what();
                ++failed;
                logger()->error("{}: {}", job.key.id(), record.error);
            }
            store.append(record);
            if (options.on_cell) {
                std::lock_guard lock(callback_mutex);
                options.on_cell(record);
            }
        }
    };
    std::size_t workers = plan.workers ? plan.workers : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(jobs.size(), 1));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
    }

    summary.executed = jobs.size();
    summary.failed = failed;
    summary.table = build_table(plan, store.load());
    write_text(options.out_dir / "table.csv", summary.table.to_csv());
    write_text(options.out_dir / "table.md", summary.table.to_markdown());
    write_text(options.out_dir / "differences.csv", summary.table.differences_csv());
    return summary;
}

}  // namespace tte

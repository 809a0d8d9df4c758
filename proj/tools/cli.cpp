#include "tte/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tte/csv.hpp"
#include "tte/error.hpp"
#include "tte/experiment.hpp"
#include "tte/log.hpp"
#include "tte/projection.hpp"
#include "tte/serializer.hpp"
#include "tte/stats.hpp"

namespace tte {

namespace fs = std::filesystem;

std::optional<std::string> process_env(const char* name) {
    if (const char* v = std::getenv(name); v && *v) {
        return std::string(v);
    }
    return std::nullopt;
}

GlobalConfig resolve_config(const nlohmann::json* file, const EnvLookup& env) {
    GlobalConfig c;
    if (file) {
        const auto& f = *file;
        if (f.contains("cache_dir")) {
            c.cache_dir = f.at("cache_dir").get<std::string>();
        }
        if (f.contains("out_dir")) {
            c.out_dir = f.at("out_dir").get<std::string>();
        }
        c.log_level = f.value("log_level", c.log_level);
        if (f.contains("seeds")) {
            c.seeds = f.at("seeds").get<std::vector<std::uint64_t>>();
        }
        if (f.contains("provider")) {
            const auto& p = f.at("provider");
            c.provider.kind = p.value("kind", c.provider.kind);
            c.provider.model_id = p.value("model_id", c.provider.model_id);
            c.provider.dimension = p.value("dimension", c.provider.dimension);
            c.provider.endpoint = p.value("endpoint", c.provider.endpoint);
            c.provider.batch_size = p.value("batch_size", c.provider.batch_size);
        }
    }
    if (auto v = env("TTE_CACHE_DIR")) {
        c.cache_dir = *v;
    }
    if (auto v = env("TTE_LOG")) {
        c.log_level = *v;
    }
    if (auto v = env("EMBED_API_KEY")) {
        c.provider.api_key = *v;
    }
    return c;
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderSettings& s) {
    if (s.dimension == 0) {
        throw ConfigError("provider dimension must be positive");
    }
    if (s.kind == "hash") {
        return std::make_unique<OfflineHashProvider>(s.model_id, s.dimension);
    }
    if (s.kind == "http") {
        if (s.endpoint.empty()) {
            throw ConfigError("the http provider needs --endpoint (or provider.endpoint in the config file)");
        }
        HttpProviderConfig h;
        h.endpoint = s.endpoint;
        h.model_id = s.model_id;
        h.dimension = s.dimension;
        h.api_key = s.api_key;
        return std::make_unique<HttpProvider>(h);
    }
    throw ConfigError("unknown provider '" + s.kind + "' (expected hash or http)");
}

namespace {

struct DatasetFlags {
    std::string manifest;
    std::string csv;
    void add(CLI::App* cmd, bool required = true) {
        auto* opt = cmd->add_option("--dataset", manifest, "Dataset manifest (JSON)");
        if (required) {
            opt->required();
        }
        cmd->add_option("--csv", csv, "CSV file (default: manifest path with .csv extension)");
    }
    fs::path csv_path() const { return csv.empty() ? fs::path(manifest).replace_extension(".csv") : fs::path(csv); }
    DatasetTable load() const { return load_csv(csv_path(), DatasetManifest::load(manifest)); }
};

struct CommonFlags {
    std::string out;
    std::string cache_dir;
    bool force = false;
};

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) {
        throw ConfigError("cannot open " + p.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(p.string() + " is not valid JSON: " + e.what());
    }
}

void write_file(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
    }
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write " + p.string());
    }
    out << text;
    if (!out) {
        throw Error("write failed for " + p.string());
    }
}

// True when `path` exists and --force is off; reports the skip.
bool keep_existing(const fs::path& path, bool force, std::ostream& out) {
    if (!force && fs::exists(path)) {
        out << path.string() << " exists; skipping (use --force to overwrite)\n";
        return true;
    }
    return false;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        if (!cur.empty()) {
            out.push_back(cur);
        }
    }
    return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
    CLI::App app{"Tabular rows as sentences: embed, train and compare classifiers", "tte"};
    app.require_subcommand(1);
    std::string config_path;
    std::string log_level;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    CommonFlags common;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--out", common.out, "Output directory");
        cmd->add_flag("--force", common.force, "Overwrite existing outputs");
    };

    // ingest
    DatasetFlags ingest_ds;
    auto* ingest = app.add_subcommand("ingest", "Load and validate a dataset; write a summary");
    ingest_ds.add(ingest);
    add_common(ingest);

    // serialize
    DatasetFlags ser_ds;
    std::string ser_template(kDefaultTemplate);
    auto* serialize = app.add_subcommand("serialize", "Render every cell as a sentence");
    ser_ds.add(serialize);
    serialize->add_option("--template", ser_template, "Sentence template with {col} and {value}");
    add_common(serialize);

    // embed
    DatasetFlags emb_ds;
    std::string emb_template(kDefaultTemplate);
    std::optional<std::string> provider_kind, model_id, endpoint;
    std::optional<std::size_t> dimension, batch_size;
    auto* embed = app.add_subcommand("embed", "Build the embedded tensor E(X) through the sentence cache");
    emb_ds.add(embed);
    embed->add_option("--template", emb_template, "Sentence template with {col} and {value}");
    embed->add_option("--provider", provider_kind, "hash | http");
    embed->add_option("--model-id", model_id, "Embedding model identifier");
    embed->add_option("--dimension", dimension, "Embedding dimension");
    embed->add_option("--endpoint", endpoint, "HTTP embeddings endpoint");
    embed->add_option("--batch-size", batch_size, "Sentences per provider request");
    embed->add_option("--cache-dir", common.cache_dir, "Sentence cache directory");
    add_common(embed);

    // train
    DatasetFlags train_ds;
    std::string arch_name = "mlp", mode_name = "base", embeddings_file;
    std::optional<std::uint64_t> train_seed;
    std::optional<std::size_t> token_dim, epochs, train_batch;
    std::optional<double> lr;
    auto* train_cmd = app.add_subcommand("train", "Train and score one (dataset, arch, mode, seed) cell");
    train_ds.add(train_cmd);
    train_cmd->add_option("--arch", arch_name, "mlp | resnet | ft-transformer");
    train_cmd->add_option("--mode", mode_name, "base | with-llm");
    train_cmd->add_option("--seed", train_seed, "Experiment seed (default: first configured seed)");
    train_cmd->add_option("--embeddings", embeddings_file, "E(X) file for with-llm (default: <out>/<name>.tte)");
    train_cmd->add_option("--token-dim", token_dim, "Token width");
    train_cmd->add_option("--epochs", epochs, "Maximum epochs");
    train_cmd->add_option("--batch-size", train_batch, "Mini-batch size");
    train_cmd->add_option("--lr", lr, "Adam learning rate");
    add_common(train_cmd);

    // evaluate
    std::string plan_path, embeddings_dir;
    std::optional<std::size_t> workers;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Run an experiment plan and write the result tables");
    evaluate_cmd->add_option("--plan", plan_path, "Plan JSON")->required();
    evaluate_cmd->add_option("--embeddings-dir", embeddings_dir, "Directory holding <dataset>.tte files");
    evaluate_cmd->add_option("--workers", workers, "Concurrent cells");
    add_common(evaluate_cmd);

    // compare
    std::string results_path, compare_arch = "all";
    double rope = 0.1, rho = 0.3;
    std::size_t mc = 100000;
    std::uint64_t compare_seed = 0;
    auto* compare = app.add_subcommand("compare", "Bayesian comparison of with-llm against base");
    compare->add_option("--results", results_path, "results.jsonl from evaluate")->required();
    compare->add_option("--rope", rope, "Region of practical equivalence, percentage points");
    compare->add_option("--mc", mc, "Monte Carlo draws");
    compare->add_option("--seed", compare_seed, "Sampler seed");
    compare->add_option("--rho", rho, "Correlation of the resampled splits (test fraction)");
    compare->add_option("--architecture", compare_arch, "Architecture, or 'all' for every (dataset, arch) pair");
    add_common(compare);

    // project
    DatasetFlags proj_ds;
    std::string columns, proj_embeddings, format_name = "svg";
    std::size_t max_unique = 20;
    std::uint64_t proj_seed = 0;
    bool per_feature = false;
    auto* project = app.add_subcommand("project", "PCA of feature-value embeddings to a 2-D plot");
    proj_ds.add(project);
    project->add_option("--columns", columns, "Comma-separated feature names")->required();
    project->add_option("--embeddings", proj_embeddings, "E(X) file")->required();
    project->add_option("--max-unique", max_unique, "Values sampled per feature");
    project->add_option("--seed", proj_seed, "Value sampling seed");
    project->add_option("--format", format_name, "svg | csv");
    project->add_flag("--per-feature", per_feature, "One projection per feature instead of a joint one");
    add_common(project);

    std::vector<const char*> argv{"tte"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const CLI::App* failing = &app;
        for (auto* sub : app.get_subcommands()) {
            failing = sub;
        }
        err << failing->help();
        return 1;
    }

    try {
        std::optional<nlohmann::json> file;
        if (!config_path.empty()) {
            file = read_json(config_path);
        }
        GlobalConfig cfg = resolve_config(file ? &*file : nullptr, env);
        if (!log_level.empty()) {
            cfg.log_level = log_level;
        }
        set_log_level(cfg.log_level);
        if (!common.out.empty()) {
            cfg.out_dir = common.out;
        }
        if (!common.cache_dir.empty()) {
            cfg.cache_dir = common.cache_dir;
        }
        const fs::path out_dir = cfg.out_dir;

        if (*ingest) {
            auto table = ingest_ds.load();
            const auto path = out_dir / (table.name + ".summary.json");
            if (keep_existing(path, common.force, out)) {
                return 0;
            }
            nlohmann::json s = {{"name", table.name},
                                {"rows", table.rows()},
                                {"features", table.cols()},
                                {"categorical", table.count(FeatureKind::categorical)},
                                {"numeric", table.count(FeatureKind::numeric)},
                                {"classes", table.class_names},
                                {"class_counts", table.class_counts()}};
            std::size_t missing = 0;
            for (std::size_t r = 0; r < table.rows(); ++r) {
                for (std::size_t c = 0; c < table.cols(); ++c) {
                    missing += table.is_missing(r, c) ? 1 : 0;
                }
            }
            s["missing_cells"] = missing;
            write_file(path, s.dump(2) + "\n");
            out << table.name << ": " << table.rows() << " rows, " << table.cols() << " features, "
                << table.num_classes() << " classes -> " << path.string() << "\n";
        } else if (*serialize) {
            auto table = ser_ds.load();
            const auto path = out_dir / (table.name + ".sentences.csv");
            if (keep_existing(path, common.force, out)) {
                return 0;
            }
            Serializer serializer(ser_template);
            std::string text = "row,feature,sentence\n";
            for (std::size_t r = 0; r < table.rows(); ++r) {
                auto row = serializer.row(table, r);
                for (std::size_t c = 0; c < row.size(); ++c) {
                    text += std::to_string(r) + "," + csv::escape(table.schema[c].name, ',') + "," +
                            csv::escape(row[c], ',') + "\n";
                }
            }
            write_file(path, text);
            out << table.rows() * table.cols() << " sentences -> " << path.string() << "\n";
        } else if (*embed) {
            auto table = emb_ds.load();
            const auto path = embeddings_path(out_dir, table.name);
            if (keep_existing(path, common.force, out)) {
                return 0;
            }
            auto settings = cfg.provider;
            if (provider_kind) {
                settings.kind = *provider_kind;
            }
            if (model_id) {
                settings.model_id = *model_id;
            }
            if (dimension) {
                settings.dimension = *dimension;
            }
            if (endpoint) {
                settings.endpoint = *endpoint;
            }
            if (batch_size) {
                settings.batch_size = *batch_size;
            }
            auto provider = make_provider(settings);
            fs::create_directories(cfg.cache_dir);
            EmbeddingCache cache(EmbeddingCache::file_for(cfg.cache_dir, settings.model_id), settings.model_id,
                                 settings.dimension);
            EmbedOptions options;
            options.batch_size = settings.batch_size;
            EmbedStats stats;
            auto tensor = build_embedded_tensor(table, *provider, &cache, Serializer(emb_template), options, &stats);
            fs::create_directories(out_dir);
            tensor.save(path);
            out << table.name << ": " << stats.unique_sentences << " unique sentences, " << stats.cache_hits
                << " cached, " << stats.provider_sentences << " requested -> " << path.string() << "\n";
        } else if (*train_cmd) {
            DatasetRef ref;
            ref.manifest = train_ds.manifest;
            ref.csv = train_ds.csv_path();
            PreparedDataset data([&] {
                ref.name = DatasetManifest::load(ref.manifest).name;
                ref.embeddings = embeddings_file.empty() ? embeddings_path(out_dir, ref.name) : fs::path(embeddings_file);
                return ref;
            }());
            const auto arch = parse_architecture(arch_name);
            const auto mode = parse_encoder_mode(mode_name);
            const std::uint64_t seed = train_seed ? *train_seed : cfg.seeds.at(0);
            const CellKey key{data.ref().name, arch, mode, seed};
            const auto path = out_dir / ("train-" + data.ref().name + "-" + std::string(to_string(arch)) + "-" +
                                         std::string(to_string(mode)) + "-" + std::to_string(seed) + ".json");
            if (keep_existing(path, common.force, out)) {
                return 0;
            }
            ExperimentPlan plan;
            plan.datasets = {data.ref()};
            if (token_dim) {
                plan.model.token_dim = *token_dim;
            }
            if (epochs) {
                plan.train.max_epochs = *epochs;
            }
            if (train_batch) {
                plan.train.batch_size = *train_batch;
            }
            if (lr) {
                plan.train.lr = *lr;
            }
            plan.validate();
            CellRecord record;
            record.key = key;
            record.report = run_cell(data, arch, mode, seed, plan);
            record.ok = true;
            write_file(path, record.to_json().dump(2) + "\n");
            char line[128];
            std::snprintf(line, sizeof line, "%.2f%% test accuracy (stopped at epoch %zu, best %zu)",
                          record.report.test_accuracy, record.report.stopped_epoch, record.report.best_epoch);
            out << key.id() << ": " << line << " -> " << path.string() << "\n";
        } else if (*evaluate_cmd) {
            auto doc = read_json(plan_path);
            if (!doc.contains("seeds")) {
                doc["seeds"] = cfg.seeds;
            }
            auto plan = ExperimentPlan::from_json(doc, fs::path(plan_path).parent_path());
            if (!embeddings_dir.empty()) {
                for (std::size_t i = 0; i < plan.datasets.size(); ++i) {
                    if (!doc.at("datasets")[i].contains("embeddings")) {
                        plan.datasets[i].embeddings = embeddings_path(embeddings_dir, plan.datasets[i].name);
                    }
                }
            }
            if (workers) {
                plan.workers = *workers;
            }
            RunOptions options;
            options.out_dir = out_dir;
            options.force = common.force;
            auto summary = run_plan(plan, options);
            out << summary.table.to_markdown();
            out << summary.executed << " cells run, " << summary.skipped << " already present, " << summary.failed
                << " failed -> " << out_dir.string() << "\n";
            if (summary.failed > 0) {
                err << "error: " << summary.failed << " cell(s) failed; see " << (out_dir / "results.jsonl").string()
                    << "\n";
                return 2;
            }
        } else if (*compare) {
            const auto path = out_dir / "comparison.json";
            if (keep_existing(path, common.force, out)) {
                return 0;
            }
            auto records = ResultsStore(results_path).load();
            if (records.empty()) {
                throw ConfigError("no readable records in " + results_path);
            }
            std::vector<DiffSample> samples;
            if (compare_arch == "all") {
                for (auto a : {Architecture::mlp, Architecture::resnet, Architecture::ft_transformer}) {
                    for (auto& s : diff_samples(records, a, rho)) {
                        s.dataset += "/" + std::string(to_string(a));
                        samples.push_back(std::move(s));
                    }
                }
            } else {
                samples = diff_samples(records, parse_architecture(compare_arch), rho);
            }
            auto result = hierarchical_compare(samples, rope, mc, compare_seed);
            auto j = result.to_json();
            j["architecture"] = compare_arch;
            j["rho"] = rho;
            write_file(path, j.dump(2) + "\n");
            out << result.verdict() << "\n";
        } else if (*project) {
            auto table = proj_ds.load();
            auto tensor = EmbeddedTensor::load(proj_embeddings);
            std::vector<std::size_t> cols;
            for (const auto& name : split_list(columns)) {
                auto it = std::find_if(table.schema.begin(), table.schema.end(),
                                       [&](const FeatureSchema& f) { return f.name == name; });
                if (it == table.schema.end()) {
                    throw ConfigError("dataset '" + table.name + "' has no feature '" + name + "'");
                }
                cols.push_back(static_cast<std::size_t>(it - table.schema.begin()));
            }
            if (cols.empty()) {
                throw ConfigError("--columns lists no features");
            }
            const auto format = parse_plot_format(format_name);
            std::vector<std::pair<std::vector<std::size_t>, std::string>> jobs;
            if (per_feature) {
                for (auto c : cols) {
                    jobs.push_back({{c}, table.name + "-" + table.schema[c].name});
                }
            } else {
                jobs.push_back({cols, table.name + "-projection"});
            }
            fs::create_directories(out_dir);
            for (const auto& [job_cols, stem] : jobs) {
                const auto path = out_dir / (stem + "." + format_name);
                if (keep_existing(path, common.force, out)) {
                    continue;
                }
                auto values = collect_value_vectors(table, tensor, job_cols, max_unique, proj_seed);
                auto p = pca2(values.vectors);
                p.labels = values.labels;
                p.groups = values.groups;
                emit_projection(p, path, format);
                char line[128];
                std::snprintf(line, sizeof line, "%zu points, explained variance %.3f / %.3f",
                              static_cast<std::size_t>(p.coords.rows()), p.explained[0], p.explained[1]);
                out << line << " -> " << path.string() << "\n";
            }
        }
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace tte

#include <doctest.h>

#include <cmath>

#include "support/fixture_suite.hpp"
#include "support/temp_dir.hpp"
#include "tte/error.hpp"
#include "tte/seed.hpp"

using namespace tte;
using testing::TempDir;

namespace {

ExperimentPlan quick_plan(const std::filesystem::path& emb_dir) {
    ExperimentPlan plan;
    plan.datasets = {testing::fixture_ref("separable", emb_dir, 32)};
    plan.architectures = {Architecture::mlp};
    plan.seeds = {0, 1, 2};
    plan.model.token_dim = 16;
    plan.model.hidden = {16, 8, 4};
    plan.train.max_epochs = 6;
    plan.workers = 2;
    return plan;
}

CellRecord fake(const std::string& ds, Architecture a, EncoderMode m, std::uint64_t seed, double acc) {
    CellRecord r;
    r.key = {ds, a, m, seed};
    r.ok = true;
    r.report.test_accuracy = acc;
    r.report.stopped_epoch = 1;
    r.report.best_epoch = 1;
    r.report.history = {{1, 0.5, 0.5}};
    return r;
}

}  // namespace

TEST_CASE("plan JSON resolves relative paths and rejects repeated seeds") {
    TempDir dir;
    auto doc = nlohmann::json::parse(R"({
        "datasets": [{"name": "toy", "manifest": "m.json", "csv": "d.csv"}],
        "architectures": ["mlp", "ft"], "encoder_modes": ["base"], "seeds": [3, 4],
        "model": {"token_dim": 32}, "train": {"max_epochs": 7}, "embeddings_dir": "emb"})");
    auto plan = ExperimentPlan::from_json(doc, dir.path());
    CHECK(plan.datasets[0].manifest == dir / "m.json");
    CHECK(plan.datasets[0].embeddings == dir.path() / "emb" / "toy.tte");
    CHECK(plan.architectures == std::vector<Architecture>{Architecture::mlp, Architecture::ft_transformer});
    CHECK(plan.model.token_dim == 32);
    CHECK(plan.train.max_epochs == 7);
    CHECK(ExperimentPlan::from_json(plan.to_json()).to_json() == plan.to_json());

    doc["seeds"] = {1, 1};
    CHECK_THROWS_AS(ExperimentPlan::from_json(doc, dir.path()), ConfigError);

    ExperimentPlan defaults;
    CHECK(defaults.seeds.size() == 10);
    CHECK(defaults.architectures.size() == 3);
    CHECK(defaults.modes.size() == 2);
}

TEST_CASE("cell seeds are distinct per role and depend only on the experiment seed") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto c = cell_seeds(s);
        std::set<std::uint64_t> roles{c.split, c.val, c.init, c.shuffle};
        CHECK(roles.size() == 4);
        CHECK(c.split == derive_seed(s, "split"));
        CHECK(cell_seeds(s).init == c.init);
    }
    CHECK(cell_seeds(1).split != cell_seeds(2).split);
}

TEST_CASE("a cell is bitwise reproducible") {
    TempDir dir;
    auto plan = quick_plan(dir.path());
    PreparedDataset data(plan.datasets[0]);
    for (auto mode : {EncoderMode::base, EncoderMode::with_llm}) {
        auto a = run_cell(data, Architecture::resnet, mode, 5, plan);
        auto b = run_cell(data, Architecture::resnet, mode, 5, plan);
        CHECK(a.deterministic_json() == b.deterministic_json());
    }
}

TEST_CASE("missing embeddings name the embed command") {
    TempDir dir;
    auto plan = quick_plan(dir.path());
    plan.datasets[0].embeddings = dir / "absent.tte";
    PreparedDataset data(plan.datasets[0]);
    CHECK_THROWS_WITH_AS(run_cell(data, Architecture::mlp, EncoderMode::with_llm, 0, plan),
                         doctest::Contains("tte embed"), ConfigError);
    CHECK_NOTHROW(run_cell(data, Architecture::mlp, EncoderMode::base, 0, plan));
}

TEST_CASE("run_plan counts cells, writes tables and resumes without training") {
    TempDir dir;
    auto plan = quick_plan(dir / "emb");
    RunOptions opts;
    opts.out_dir = dir / "out";
    std::size_t callbacks = 0;
    opts.on_cell = [&](const CellRecord& r) {
        ++callbacks;
        CHECK(r.ok);
    };
    auto first = run_plan(plan, opts);
    CHECK(first.executed == 6);
    CHECK(first.failed == 0);
    CHECK(callbacks == 6);
    CHECK(first.table.cells.size() == 2);
    CHECK(first.table.at("separable", Architecture::mlp, EncoderMode::base).runs == 3);
    REQUIRE(first.table.differences.size() == 1);
    CHECK(first.table.differences[0].diff.size() == 3);
    for (auto f : {"results.jsonl", "table.csv", "table.md", "differences.csv"}) {
        CHECK(std::filesystem::exists(opts.out_dir / f));
    }
    const auto csv_before = testing::read_file(opts.out_dir / "table.csv");

    callbacks = 0;
    auto second = run_plan(plan, opts);
    CHECK(second.executed == 0);
    CHECK(second.skipped == 6);
    CHECK(callbacks == 0);
    CHECK(testing::read_file(opts.out_dir / "table.csv") == csv_before);

    // Splits are shared across modes, so reports at equal seeds are paired.
    auto records = ResultsStore(opts.out_dir / "results.jsonl").load();
    CHECK(records.size() == 6);

    opts.force = true;
    auto third = run_plan(plan, opts);
    CHECK(third.executed == 6);
    CHECK(testing::read_file(opts.out_dir / "table.csv") == csv_before);
}

TEST_CASE("worker count does not change results") {
    TempDir dir;
    auto plan = quick_plan(dir / "emb");
    plan.workers = 1;
    RunOptions a{dir / "a"};
    run_plan(plan, a);
    plan.workers = 3;
    RunOptions b{dir / "b"};
    run_plan(plan, b);
    CHECK(testing::read_file(dir / "a" / "table.csv") == testing::read_file(dir / "b" / "table.csv"));
    CHECK(testing::read_file(dir / "a" / "differences.csv") == testing::read_file(dir / "b" / "differences.csv"));
}

TEST_CASE("cell failures are recorded and the table marks them missing") {
    TempDir dir;
    auto plan = quick_plan(dir / "emb");
    plan.datasets[0].embeddings = dir / "absent.tte";
    RunOptions opts{dir / "out"};
    auto s = run_plan(plan, opts);
    CHECK(s.failed == 3);
    CHECK(s.table.at("separable", Architecture::mlp, EncoderMode::with_llm).runs == 0);
    CHECK(s.table.at("separable", Architecture::mlp, EncoderMode::with_llm).missing == 3);
    CHECK(s.table.at("separable", Architecture::mlp, EncoderMode::base).runs == 3);
    CHECK(s.table.to_markdown().find("missing") != std::string::npos);
    auto records = ResultsStore(opts.out_dir / "results.jsonl").load();
    CHECK(std::count_if(records.begin(), records.end(), [](const CellRecord& r) { return !r.ok; }) == 3);

    // A later run only retries the failures.
    plan.datasets[0].embeddings = testing::fixture_ref("separable", dir / "emb", 32).embeddings;
    auto retry = run_plan(plan, opts);
    CHECK(retry.executed == 3);
    CHECK(retry.skipped == 3);
    CHECK(retry.table.at("separable", Architecture::mlp, EncoderMode::with_llm).runs == 3);
}

TEST_CASE("table aggregation laws") {
    ExperimentPlan plan;
    plan.datasets = {{"a", {}, {}, {}}, {"b", {}, {}, {}}, {"c", {}, {}, {}}};
    plan.architectures = {Architecture::mlp};
    std::vector<CellRecord> records;
    std::mt19937_64 gen(2);
    std::uniform_real_distribution<double> u(50.0, 100.0);
    for (const auto& d : plan.datasets) {
        for (auto m : plan.modes) {
            for (auto s : plan.seeds) {
                records.push_back(fake(d.name, Architecture::mlp, m, s, d.name == "a" ? 70.0 : u(gen)));
            }
        }
    }
    auto t = build_table(plan, records);
    CHECK(t.cells.size() == 3 * 1 * 2);
    CHECK(t.at("a", Architecture::mlp, EncoderMode::base).accuracy.std == 0.0);
    CHECK(t.at("a", Architecture::mlp, EncoderMode::base).accuracy.mean == 70.0);
    for (auto m : plan.modes) {
        double sum = 0.0;
        for (auto ds : {"a", "b", "c"}) {
            sum += t.at(ds, Architecture::mlp, m).accuracy.mean;
        }
        CHECK(std::abs(t.averages.at({Architecture::mlp, m}) - sum / 3.0) < 1e-12);
    }
    REQUIRE(t.differences.size() == 3);
    for (const auto& row : t.differences) {
        CHECK(row.diff.size() == 10);
        for (std::size_t i = 0; i < row.diff.size(); ++i) {
            CHECK(row.diff[i] == row.with_llm[i] - row.base[i]);
        }
    }
    CHECK(t.to_markdown().find("| a | 70.00 ± 0.00 | 70.00 ± 0.00 |") != std::string::npos);

    // A later success for the same cell replaces an earlier one.
    records.push_back(fake("a", Architecture::mlp, EncoderMode::base, 0, 80.0));
    CHECK(build_table(plan, records).at("a", Architecture::mlp, EncoderMode::base).accuracy.mean == 71.0);
}

TEST_CASE("results store skips a torn final line and keeps appending") {
    TempDir dir;
    ResultsStore store(dir / "results.jsonl");
    store.append(fake("a", Architecture::mlp, EncoderMode::base, 0, 60.0));
    {
        std::ofstream out(dir / "results.jsonl", std::ios::app | std::ios::binary);
        out << R"({"dataset": "a", "archit)";
    }
    CHECK(store.load().size() == 1);
    store.append(fake("a", Architecture::mlp, EncoderMode::base, 1, 61.0));
    auto records = store.load();
    REQUIRE(records.size() == 2);
    CHECK(records[1].report.test_accuracy == 61.0);
    CHECK(records[1].key.seed == 1);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "support/temp_dir.hpp"
#include "tte/dataset.hpp"
#include "tte/error.hpp"

using namespace tte;
using tte::testing::TempDir;

namespace {

DatasetManifest small_manifest() {
    return DatasetManifest::from_json(nlohmann::json::parse(R"({
        "name": "toy",
        "label_column": "y",
        "columns": [{"name": "color", "kind": "categorical"}, {"name": "size", "kind": "numeric"}],
        "expected": {"n": 4, "m": 2, "n_categorical": 1, "n_numeric": 1, "classes": 2}
    })"));
}

DatasetTable labels_only(std::vector<int> labels, std::size_t classes) {
    DatasetTable t;
    t.name = "labels";
    t.schema = {{"f", FeatureKind::numeric, 0}};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t.cells.push_back({"0", 0.0});
    }
    t.labels = std::move(labels);
    for (std::size_t c = 0; c < classes; ++c) {
        t.class_names.push_back(std::to_string(c));
    }
    return t;
}

}  // namespace

TEST_CASE("load_csv reads a manifest-described table") {
    TempDir dir;
    auto csv = dir.write("toy.csv", "color,size,y\nred,1.5,yes\nblue,?,no\nred,63.0,no\ngreen,2,yes\n");
    auto table = load_csv(csv, small_manifest());
    CHECK(table.rows() == 4);
    CHECK(table.cols() == 2);
    CHECK(table.count(FeatureKind::categorical) == 1);
    CHECK(table.count(FeatureKind::numeric) == 1);
    CHECK(table.class_names == std::vector<std::string>{"no", "yes"});
    CHECK(table.labels == std::vector<int>{1, 0, 0, 1});
    CHECK(table.cell(2, 1).raw == "63.0");
    CHECK(*table.cell(2, 1).number == doctest::Approx(63.0));
    CHECK(table.is_missing(1, 1));
    CHECK_FALSE(table.is_missing(1, 0));
}

TEST_CASE("load_csv on a minimal one-row table") {
    TempDir dir;
    auto csv = dir.write("one.csv", "a,label\nx,0\n");
    auto manifest = DatasetManifest::from_json(nlohmann::json::parse(R"({
        "name": "one", "label_column": "label", "columns": [{"name": "a", "kind": "categorical"}],
        "class_names": ["0", "1"]
    })"));
    auto table = load_csv(csv, manifest);
    CHECK(table.rows() == 1);
    CHECK(table.cols() == 1);
}

TEST_CASE("load_csv names the row with the wrong arity") {
    TempDir dir;
    auto csv = dir.write("bad.csv", "color,size,y\nred,1,yes\nblue,2\nred,3,no\n");
    try {
        load_csv(csv, small_manifest());
        FAIL("expected a structural error");
    } catch (const StructuralError& e) {
        CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    }
}

TEST_CASE("load_csv rejects manifest count mismatches and unknown columns") {
    TempDir dir;
    auto csv = dir.write("toy.csv", "color,size,y\nred,1,yes\nblue,2,no\n");
    CHECK_THROWS_AS(load_csv(csv, small_manifest()), StructuralError);  // expects n = 4

    auto extra = dir.write("extra.csv", "id,color,size,y\n1,red,1,yes\n2,blue,2,no\n");
    auto manifest = small_manifest();
    manifest.expected = {};
    CHECK_THROWS_AS(load_csv(extra, manifest), StructuralError);
    manifest.drop_columns = {"id"};
    CHECK(load_csv(extra, manifest).rows() == 2);
}

TEST_CASE("numeric class labels are ordered numerically") {
    TempDir dir;
    auto csv = dir.write("num.csv", "a,y\nx,10\ny,2\nz,1\n");
    auto manifest = DatasetManifest::from_json(nlohmann::json::parse(
        R"({"name": "n", "label_column": "y", "columns": [{"name": "a", "kind": "categorical"}]})"));
    auto table = load_csv(csv, manifest);
    CHECK(table.class_names == std::vector<std::string>{"1", "2", "10"});
    CHECK(table.labels == std::vector<int>{2, 1, 0});
}

TEST_CASE("load_csv is lossless on raw text") {
    TempDir dir;
    const std::string content =
        "color,size,y\nred,1.50,yes\n\"dark, blue\",?,no\nred,+3,no\n\"say \"\"hi\"\"\",007,yes\n";
    auto csv = dir.write("toy.csv", content);
    auto table = load_csv(csv, small_manifest());
    CHECK(table.cell(1, 0).raw == "dark, blue");
    CHECK(table.cell(3, 1).raw == "007");
    write_csv(table, dir / "out.csv");
    CHECK(tte::testing::read_file(dir / "out.csv") == content);

    auto crlf = dir.write("crlf.csv", "color,size,y\r\nred,1,yes\r\nblue,2,no\r\nred,3,no\r\nred,4,yes\r\n");
    auto t2 = load_csv(crlf, small_manifest());
    write_csv(t2, dir / "crlf_out.csv");
    CHECK(tte::testing::read_file(dir / "crlf_out.csv") == "color,size,y\nred,1,yes\nblue,2,no\nred,3,no\nred,4,yes\n");
}

TEST_CASE("label column keeps its source position on write") {
    TempDir dir;
    const std::string content = "y,color,size\nyes,red,1\nno,blue,2\nno,red,3\nyes,red,4\n";
    auto table = load_csv(dir.write("t.csv", content), small_manifest());
    write_csv(table, dir / "o.csv");
    CHECK(tte::testing::read_file(dir / "o.csv") == content);
}

TEST_CASE("stratified allocation follows the floor-plus-remainder rule") {
    std::vector<std::size_t> sizes{7, 3};
    CHECK(stratified_allocation(sizes, 0.3) == std::vector<std::size_t>{2, 1});

    std::vector<std::size_t> balanced{50, 50};
    CHECK(stratified_allocation(balanced, 0.5) == std::vector<std::size_t>{25, 25});

    // Equal fractional parts: the lower class id wins the single remainder slot.
    std::vector<std::size_t> tie{5, 5};
    CHECK(stratified_allocation(tie, 0.1) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("stratified_split on 7/3 classes holds out 2 + 1") {
    auto table = labels_only({0, 0, 0, 0, 0, 0, 0, 1, 1, 1}, 2);
    for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
        auto split = stratified_split(table, 0.3, seed);
        CHECK(split.test.size() == 3);
        std::size_t c0 = 0;
        std::size_t c1 = 0;
        for (auto i : split.test) {
            (table.labels[i] == 0 ? c0 : c1)++;
        }
        CHECK(c0 == 2);
        CHECK(c1 == 1);
    }
}

TEST_CASE("stratified_split invariants hold over random tables") {
    std::mt19937_64 gen(2024);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t classes = 2 + gen() % 4;
        std::size_t n = classes + gen() % 200;
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = static_cast<int>(i < classes ? i : gen() % classes);
        }
        auto table = labels_only(labels, classes);
        double fraction = 0.05 + 0.9 * std::uniform_real_distribution<double>(0, 1)(gen);
        auto split = stratified_split(table, fraction, gen());

        std::vector<std::size_t> all = split.train;
        all.insert(all.end(), split.test.begin(), split.test.end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expected(n);
        std::iota(expected.begin(), expected.end(), std::size_t{0});
        REQUIRE(all == expected);  // disjoint cover of [0, N)

        auto counts = table.class_counts();
        std::vector<std::size_t> held(classes, 0);
        for (auto i : split.test) {
            ++held[static_cast<std::size_t>(table.labels[i])];
        }
        for (std::size_t c = 0; c < classes; ++c) {
            CHECK(std::abs(static_cast<double>(held[c]) - static_cast<double>(counts[c]) * fraction) < 1.0);
        }

        auto again = stratified_split(table, fraction, split.seed);
        CHECK(again.train == split.train);
        CHECK(again.test == split.test);
    }
}

TEST_CASE("stratified_split errors") {
    auto table = labels_only({0, 0, 0}, 2);  // class 1 has no samples
    CHECK_THROWS_AS(stratified_split(table, 0.3, 1), StructuralError);
    auto ok = labels_only({0, 1, 0, 1}, 2);
    CHECK_THROWS_AS(stratified_split(ok, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(stratified_split(ok, 1.0, 1), ConfigError);
}

TEST_CASE("validation_split carves 20 percent of the training rows") {
    std::vector<int> labels(100);
    for (std::size_t i = 0; i < 100; ++i) {
        labels[i] = static_cast<int>(i % 2);
    }
    std::vector<std::size_t> train(100);
    std::iota(train.begin(), train.end(), std::size_t{0});
    auto split = validation_split(train, labels, 0.2, 5);
    CHECK(split.fit.size() == 80);
    CHECK(split.val.size() == 20);
    auto again = validation_split(train, labels, 0.2, 5);
    CHECK(again.fit == split.fit);
    CHECK(again.val == split.val);
}

TEST_CASE("validation_split with 4/1 class counts") {
    std::vector<int> labels{0, 0, 0, 0, 1};
    std::vector<std::size_t> train{0, 1, 2, 3, 4};
    auto split = validation_split(train, labels, 0.2, 3);
    REQUIRE(split.val.size() == 1);
    std::size_t minority = std::count_if(split.val.begin(), split.val.end(), [&](auto i) { return labels[i] == 1; });
    CHECK(minority <= 1);
    CHECK(labels[split.val[0]] == 0);  // remainder 0.8 beats 0.2
}

TEST_CASE("standardizer centers and scales the fitted rows") {
    DatasetTable t;
    t.name = "s";
    t.schema = {{"a", FeatureKind::numeric, 0}, {"b", FeatureKind::numeric, 1}, {"c", FeatureKind::categorical, 2}};
    std::mt19937_64 gen(7);
    std::normal_distribution<double> normal(5.0, 3.0);
    for (int i = 0; i < 40; ++i) {
        double a = normal(gen);
        t.cells.push_back({std::to_string(a), a});
        t.cells.push_back({"4", 4.0});  // constant column
        t.cells.push_back({"x", std::nullopt});
        t.labels.push_back(i % 2);
    }
    t.cells[3 * 39] = {"?", std::nullopt};  // a missing value outside the fitted rows
    t.class_names = {"0", "1"};
    std::vector<std::size_t> rows(30);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    auto s = Standardizer::fit(t, rows);

    double mean = 0;
    double sq = 0;
    for (auto r : rows) {
        mean += s.transform(t, r, 0);
    }
    mean /= 30;
    for (auto r : rows) {
        sq += std::pow(s.transform(t, r, 0) - mean, 2);
    }
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::sqrt(sq / 30) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(s.stddev(1) == 1.0);  // std below 1e-12 replaced by 1
    CHECK(s.transform(t, 5, 1) == 0.0);
    CHECK(s.transform(t, 39, 0) == 0.0);  // missing -> mean -> z = 0
}

TEST_CASE("accuracy") {
    std::vector<int> y{0, 1, 1};
    CHECK(accuracy(y, y) == 100.0);
    std::vector<int> p{0, 0, 1};
    CHECK(accuracy(p, y) == doctest::Approx(200.0 / 3.0));
    std::vector<int> short_p{0, 1};
    CHECK_THROWS_AS(accuracy(short_p, y), ConfigError);
}

TEST_CASE("majority predictor on a 70/30 table scores the class prior") {
    std::vector<int> labels(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        labels[i] = i < 700 ? 0 : 1;
    }
    auto table = labels_only(labels, 2);
    auto split = stratified_split(table, 0.3, 11);
    std::vector<int> truth;
    for (auto i : split.test) {
        truth.push_back(labels[i]);
    }
    std::vector<int> majority(truth.size(), 0);
    CHECK(accuracy(majority, truth) == doctest::Approx(70.0));
}

TEST_CASE("aggregate_runs") {
    std::vector<double> same{70, 70, 70};
    CHECK(aggregate_runs(same).mean == 70.0);
    CHECK(aggregate_runs(same).std == 0.0);
    std::vector<double> seq{1, 2, 3};
    CHECK(aggregate_runs(seq).mean == doctest::Approx(2.0));
    CHECK(aggregate_runs(seq).std == doctest::Approx(1.0));
    std::vector<double> one{5};
    CHECK(aggregate_runs(one).mean == 5.0);
    CHECK(aggregate_runs(one).std == 0.0);
    CHECK_THROWS_AS(aggregate_runs(std::vector<double>{}), ConfigError);
}

#include <doctest.h>

#include <algorithm>
#include <random>

#include "hcn/errors.hpp"
#include "hcn/evaluation.hpp"
#include "metrics_oracle.hpp"

using namespace hcn;
using namespace hcn::evaluation;

TEST_CASE("confusion counts") {
  CHECK(confusion({}, {}, 3) == ConfusionMatrix(3));
  const auto diag = confusion({0, 1, 2, 2}, {0, 1, 2, 2}, 3);
  CHECK(diag == ConfusionMatrix(3, {1, 0, 0, 0, 1, 0, 0, 0, 2}));
  // preds (0,1,2,0) vs truths (0,1,1,2): (t0,p0), (t1,p1), (t1,p2), (t2,p0).
  const auto cm = confusion({0, 1, 2, 0}, {0, 1, 1, 2}, 3);
  CHECK(cm == ConfusionMatrix(3, {1, 0, 0, 0, 1, 1, 1, 0, 0}));
  CHECK(cm.total() == 4);
  CHECK_THROWS_AS(confusion({3}, {0}, 3), ContractError);
  CHECK_THROWS_AS(confusion({0, 1}, {0}, 3), DimensionError);
}

TEST_CASE("metrics on the hand-tallied matrix") {
  const ConfusionMatrix cm(3, {8, 1, 1, 0, 9, 1, 1, 0, 9});
  const auto r = metrics(cm);
  CHECK(*r.sensitivity[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(*r.precision[0] == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
  CHECK(std::abs(*r.precision[0] - 0.8889) < 5e-5);
  CHECK(*r.specificity[0] == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(r.accuracy == doctest::Approx(26.0 / 30.0).epsilon(1e-12));
  CHECK(std::abs(r.accuracy - 0.8667) < 5e-5);
}

TEST_CASE("metrics edge cases") {
  const auto perfect = metrics(ConfusionMatrix(2, {3, 0, 0, 5}));
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(*perfect.sensitivity[k] == 1.0);
    CHECK(*perfect.precision[k] == 1.0);
    CHECK(*perfect.specificity[k] == 1.0);
  }
  CHECK(perfect.accuracy == 1.0);
  // Class 2 never appears in the truths and is never predicted.
  const auto absent = metrics(ConfusionMatrix(3, {2, 1, 0, 0, 3, 0, 0, 0, 0}));
  CHECK_FALSE(absent.sensitivity[2].has_value());
  CHECK_FALSE(absent.precision[2].has_value());
  CHECK(absent.specificity[2] == 1.0);
  CHECK(absent.sensitivity[0].has_value());
  CHECK_THROWS_AS(metrics(ConfusionMatrix(3)), ContractError);
}

TEST_CASE("metrics agree with the one-vs-rest oracle") {
  CHECK(hcn::testing::metrics_agree_with_oracle(1000, 17));
}

TEST_CASE("binary symmetry and permutation invariance") {
  std::mt19937_64 rng(4);
  std::vector<std::size_t> p(200), t(200);
  for (auto& v : p) v = rng() % 2;
  for (auto& v : t) v = rng() % 2;
  const auto r = metrics(confusion(p, t, 2));
  CHECK(r.sensitivity[0] == r.specificity[1]);
  std::vector<std::size_t> idx(200);
  for (std::size_t i = 0; i < 200; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<std::size_t> p2, t2;
  for (auto i : idx) {
    p2.push_back(p[i]);
    t2.push_back(t[i]);
  }
  const auto r2 = metrics(confusion(p2, t2, 2));
  CHECK(r2.sensitivity == r.sensitivity);
  CHECK(r2.precision == r.precision);
  CHECK(r2.accuracy == r.accuracy);
}

TEST_CASE("comparison table and csv") {
  const std::vector<std::string> names{"Normal", "Bacterial Pneumonia", "Viral Pneumonia"};
  auto base = metrics(ConfusionMatrix(3, {8, 1, 1, 0, 9, 1, 1, 0, 9}), names, "HCN-DML");
  SUBCASE("single report gives one block") {
    const auto c = compare_strategies({base});
    CHECK(c.text.find("HCN-DML") != std::string::npos);
    CHECK(c.text.find("80.00%") != std::string::npos);
    CHECK(c.text.find("88.89%") != std::string::npos);
    const auto rows = parse_report_csv(c.csv);
    CHECK(rows.size() == 10);
    CHECK(rows.front() == CsvRow{"HCN-DML", "sensitivity", "Normal", 0.8});
    CHECK(rows.back() == CsvRow{"HCN-DML", "accuracy", "all", 26.0 / 30.0});
  }
  SUBCASE("ablation rows") {
    auto a = base, b = base, c = base;
    a.no_ecoc = true;
    b.no_bootstrap = true;
    c.no_ecoc = c.no_bootstrap = true;
    const auto cmp = compare_strategies({base, a, b, c});
    for (const char* row : {"HCN-DML w/o ECOC", "HCN-DML w/o Bootstrapping", "HCN-DML w/o ECOC + Bootstrapping"})
      CHECK(cmp.text.find(row) != std::string::npos);
    const auto rows = parse_report_csv(cmp.csv);
    CHECK(rows.size() == 40);
    CHECK(compare_strategies({base, a, b, c}).csv == cmp.csv);
  }
  SUBCASE("csv round trip keeps exact values and NA") {
    auto r = metrics(ConfusionMatrix(3, {2, 1, 0, 0, 3, 0, 0, 0, 0}), names, "HCN-FM");
    const auto rows = parse_report_csv(compare_strategies({r}).csv);
    for (const auto& row : rows) {
      if (row.metric == "accuracy") {
        CHECK(row.value == r.accuracy);
        continue;
      }
      const std::size_t k = static_cast<std::size_t>(std::find(names.begin(), names.end(), row.cls) - names.begin());
      const auto& v = row.metric == "sensitivity" ? r.sensitivity : row.metric == "precision" ? r.precision : r.specificity;
      CHECK(row.value == v[k]);
    }
    CHECK(compare_strategies({r}).csv.find(",NA\n") != std::string::npos);
  }
  CHECK_THROWS_AS(compare_strategies({}), ContractError);
  CHECK_THROWS_AS(parse_report_csv("bad\n"), IoError);
}

TEST_CASE("format_double round trips") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    CHECK(std::stod(format_double(v)) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(1.0) == "1");
}

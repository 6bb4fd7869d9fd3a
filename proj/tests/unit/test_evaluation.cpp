#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "wsi/evaluation/folds.hpp"
#include "wsi/evaluation/metrics.hpp"

using namespace wsi;
using namespace wsi::eval;
using wsi::testing::code_of;

namespace {

slide::Manifest manifest_with(const std::vector<int>& per_class) {
  nlohmann::json j = nlohmann::json::array();
  int id = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c)
    for (int i = 0; i < per_class[c]; ++i)
      j.push_back({{"slide_id", "s" + std::to_string(id++)}, {"path", "x.ppm"}, {"label", static_cast<int>(c)}});
  return slide::parse_manifest(j.dump());
}

std::map<std::string, int> labels_of(const slide::Manifest& m) {
  std::map<std::string, int> out;
  for (const auto& e : m.entries) out[e.slide_id] = e.label_index;
  return out;
}

}  // namespace

TEST_CASE("binary auc") {
  CHECK(binary_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
  CHECK(binary_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
  CHECK(code_of([] { binary_auc({0.1, 0.2}, {1, 1}); }) == ErrorCode::SingleClassOnly);
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = rng.normal();
      y[i] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    const double auc = binary_auc(s, y);
    CHECK(std::abs(auc - wsi::testing::brute_auc(s, y)) <= 1e-12);
    std::vector<double> e(n), aff(n), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
      e[i] = std::exp(s[i]);
      aff[i] = 3 * s[i] - 7;
      neg[i] = -s[i];
    }
    CHECK(binary_auc(e, y) == auc);
    CHECK(binary_auc(aff, y) == auc);
    CHECK(std::abs(auc + binary_auc(neg, y) - 1) <= 1e-12);
  }
}

TEST_CASE("macro auc") {
  CHECK(macro_auc({1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, {0, 1, 2}) == 1.0);
  CHECK(code_of([] { macro_auc({0.5, 0.5, 0.5, 0.5}, 2, {0, 0}); }) == ErrorCode::MissingClass);
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 3 + rng.below(100);
    std::vector<double> p(n * 3);
    std::vector<int> y(n);
    for (auto& v : p) v = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i < 3 ? i : rng.below(3));
    double by_hand = 0;
    for (int c = 0; c < 3; ++c) {
      std::vector<double> col;
      std::vector<int> ovr;
      for (std::size_t i = 0; i < n; ++i) {
        col.push_back(p[i * 3 + static_cast<std::size_t>(c)]);
        ovr.push_back(y[i] == c);
      }
      by_hand += binary_auc(col, ovr);
    }
    CHECK(macro_auc(p, 3, y) == by_hand / 3);
  }
}

TEST_CASE("concordance index") {
  CHECK(concordance_index({3, 2, 1}, {1, 2, 3}, {true, true, true}) == 1.0);
  CHECK(concordance_index({1, 2, 3}, {1, 2, 3}, {true, true, true}) == 0.0);
  CHECK(code_of([] { concordance_index({1, 2}, {1, 2}, {false, false}); }) == ErrorCode::NoComparablePairs);
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 100;
    std::vector<double> r(n), t(n), shifted(n);
    std::vector<bool> e(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = std::round(rng.normal() * 4) / 4;
      t[i] = std::round(rng.uniform(0, 20));
      e[i] = rng.uniform() < 0.6;
      shifted[i] = r[i] + 2.5;
    }
    const double c = concordance_index(r, t, e);
    CHECK(std::abs(c - wsi::testing::brute_cindex(r, t, e)) <= 1e-12);
    CHECK(concordance_index(shifted, t, e) == c);
  }
}

TEST_CASE("summaries") {
  auto s = summarize("auc", "fp", {0.8, 0.9, 1.0});
  CHECK(s.mean == doctest::Approx(0.9));
  CHECK(s.stddev == doctest::Approx(0.1));
  CHECK(summarize("auc", "fp", {0.7}).stddev == 0.0);
}

TEST_CASE("folds") {
  SUBCASE("40 slides into 10 folds") {
    auto m = manifest_with({20, 20});
    auto split = make_folds(m, 10, 4);
    REQUIRE(split.folds.size() == 10);
    std::set<std::string> seen;
    for (const auto& f : split.folds) {
      CHECK(f.val.size() == 4);
      CHECK(f.train.size() == 36);
      for (const auto& id : f.val) CHECK(seen.insert(id).second);
      for (const auto& id : f.train) CHECK(std::find(f.val.begin(), f.val.end(), id) == f.val.end());
    }
    CHECK(seen.size() == 40);
    CHECK(make_folds(m, 10, 4) == split);
    CHECK_FALSE(make_folds(m, 10, 5) == split);
  }
  SUBCASE("stratification keeps each class within one of its share") {
    auto m = manifest_with({23, 11, 16});
    auto labels = labels_of(m);
    auto split = make_folds(m, 10, 9);
    for (const auto& f : split.folds) {
      std::array<int, 3> counts{};
      for (const auto& id : f.val) ++counts[static_cast<std::size_t>(labels[id])];
      const double share = static_cast<double>(f.val.size()) / 50.0;
      CHECK(std::abs(counts[0] - 23 * share) <= 1.0 + 1e-9);
      CHECK(std::abs(counts[1] - 11 * share) <= 1.0 + 1e-9);
      CHECK(std::abs(counts[2] - 16 * share) <= 1.0 + 1e-9);
      CHECK(counts[0] >= 1);
      CHECK(counts[1] >= 1);
    }
  }
  SUBCASE("too few slides") {
    CHECK(code_of([] { make_folds(manifest_with({3, 3}), 10, 0); }) == ErrorCode::TooFewSlides);
  }
  SUBCASE("subsampling") {
    auto m = manifest_with({20, 12});
    auto labels = labels_of(m);
    auto split = make_folds(m, 10, 1);
    CHECK(subsample_train(split, m, 1.0, 3) == split);
    auto quarter = subsample_train(split, m, 0.25, 3);
    CHECK(quarter == subsample_train(split, m, 0.25, 3));
    for (std::size_t i = 0; i < 10; ++i) {
      std::array<int, 2> counts{};
      for (const auto& id : quarter.folds[i].train) {
        ++counts[static_cast<std::size_t>(labels[id])];
        const auto& full = split.folds[i].train;
        CHECK(std::find(full.begin(), full.end(), id) != full.end());
      }
      CHECK(counts[0] == 5);
      CHECK(counts[1] == 3);
      CHECK(quarter.folds[i].val == split.folds[i].val);
    }
  }
  SUBCASE("fold file round trip") {
    auto m = manifest_with({6, 6});
    auto split = make_folds(m, 4, 2);
    auto path = wsi::testing::scratch_dir("folds") / "folds.json";
    write_folds(path, split);
    CHECK(read_folds(path) == split);
  }
}

TEST_CASE("metrics csv") {
  auto path = wsi::testing::scratch_dir("metrics") / "metrics.csv";
  write_metrics_csv(path, {summarize("auc", "abc", {0.5, 0.75})});
  std::ifstream is(path);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "config,fold,metric,value");
  CHECK(row.rfind("abc,0,auc,0.5", 0) == 0);
}

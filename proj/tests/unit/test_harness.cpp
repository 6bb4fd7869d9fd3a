#include <cmath>
#include <regex>
#include <sstream>

#include "doctest.h"
#include "harness_fixture.hpp"
#include "test_util.hpp"
#include "wsi/harness/experiment.hpp"
#include "wsi/harness/report.hpp"
#include "wsi/harness/synthetic_dataset.hpp"
#include "wsi/preprocess/stain.hpp"
#include "wsi/slide_io/image.hpp"
#include "wsi/tensor_core/checkpoint.hpp"

using namespace wsi;
using namespace wsi::harness;
using wsi::testing::code_of;
using wsi::testing::scratch_dir;
using wsi::testing::slurp;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

RunRecord record(Cell cell, std::vector<double> folds, std::vector<double> loss) {
  RunRecord r;
  r.cell = cell;
  r.fingerprint = "f" + to_string(cell);
  r.metric = "auc";
  r.per_fold = std::move(folds);
  r.epoch_loss = std::move(loss);
  return r;
}

ModelOverrides tiny_model() {
  ModelOverrides m;
  m.l2_dim = 24;
  m.l3_layers = 1;
  m.l3_heads = 3;
  m.mlp_ratio = 2;
  m.instance_hidden = 16;
  return m;
}

}  // namespace

TEST_CASE("grid cells") {
  const auto grid = grid_cells();
  REQUIRE(grid.size() == 9);
  int na = 0;
  for (const auto& c : grid) na += is_na(c);
  CHECK(na == 2);
  CHECK(valid_cells().size() == 7);
  CHECK(to_string(grid[0]) == "most/frozen");
  CHECK(to_string(grid[8]) == "none");
  for (const auto& c : valid_cells()) CHECK(cell_from_string(to_string(c)) == c);
  CHECK(is_na(cell_from_string("none/frozen")));
  CHECK(code_of([] { cell_from_string("none/sideways"); }) == ErrorCode::InvalidCell);
  CHECK(code_of([] { cell_from_string("medium"); }) == ErrorCode::InvalidCell);
}

TEST_CASE("experiment config") {
  ExperimentConfig c;
  c.dataset = "data/manifest.json";
  c.l2_checkpoints[agg::Structure::Medium] = "pre/l2_medium.sfw";
  SUBCASE("json round trip") {
    auto back = config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(fingerprint(back) == fingerprint(c));
  }
  SUBCASE("validation") {
    auto j = to_json(c);
    j["colour"] = 1;
    CHECK(code_of([&] { config_from_json(j); }) == ErrorCode::InvalidConfig);
    auto bad = c;
    bad.epochs = 0;
    CHECK(code_of([&] { validate(bad); }) == ErrorCode::InvalidConfig);
    bad = c;
    bad.train_fraction = 0;
    CHECK(code_of([&] { validate(bad); }) == ErrorCode::InvalidConfig);
    bad = c;
    bad.cells = {{agg::Structure::None, agg::L2Mode::Frozen}};
    CHECK(code_of([&] { validate(bad); }) == ErrorCode::InvalidCell);
  }
  SUBCASE("fingerprint tracks semantic fields only") {
    const auto base = fingerprint(c);
    CHECK(base.size() == 16);
    auto same = c;
    same.out = "elsewhere";
    same.threads = 4;
    CHECK(fingerprint(same) == base);
    std::vector<std::function<void(ExperimentConfig&)>> edits{
        [](ExperimentConfig& x) { x.dataset = "other.json"; },
        [](ExperimentConfig& x) { x.task = agg::Task::Survival; },
        [](ExperimentConfig& x) { x.cells = {{agg::Structure::None, agg::L2Mode::Unset}}; },
        [](ExperimentConfig& x) { x.epochs = 100; },
        [](ExperimentConfig& x) { x.lr = 2e-4; },
        [](ExperimentConfig& x) { x.batch = 2; },
        [](ExperimentConfig& x) { x.survival_batch = 8; },
        [](ExperimentConfig& x) { x.seed = 1; },
        [](ExperimentConfig& x) { x.train_fraction = 0.25; },
        [](ExperimentConfig& x) { x.folds = 5; },
        [](ExperimentConfig& x) { x.stratified = false; },
        [](ExperimentConfig& x) { x.l2_checkpoints[agg::Structure::Most] = "m.sfw"; },
        [](ExperimentConfig& x) { x.model.l2_dim = 96; },
        [](ExperimentConfig& x) { x.model.l3_layers = 1; },
        [](ExperimentConfig& x) { x.model.l3_heads = 6; },
        [](ExperimentConfig& x) { x.model.mlp_ratio = 2; },
        [](ExperimentConfig& x) { x.model.instance_hidden = 64; },
        [](ExperimentConfig& x) { x.model.l2_layers = 1; },
        [](ExperimentConfig& x) { x.model.l2_heads = 1; },
        [](ExperimentConfig& x) { x.dtype = nn::DType::f64; },
    };
    for (std::size_t i = 0; i < edits.size(); ++i) {
      auto changed = c;
      edits[i](changed);
      CAPTURE(i);
      CHECK(fingerprint(changed) != base);
    }
  }
  SUBCASE("shipped presets load") {
    for (const char* name : {"default.json", "long.json", "random_init_only.json"}) {
      CAPTURE(name);
      auto preset = load_config(fs::path(WSI_SOURCE_DIR) / "configs" / name);
      CHECK_NOTHROW(validate(preset));
      CHECK(preset.lr == 1e-4);
      CHECK(preset.batch == 1);
    }
    CHECK(load_config(fs::path(WSI_SOURCE_DIR) / "configs" / "default.json").epochs == 20);
    CHECK(load_config(fs::path(WSI_SOURCE_DIR) / "configs" / "long.json").epochs == 100);
  }
}

TEST_CASE("report files") {
  SUBCASE("single record gives a one-row csv") {
    auto csv = results_csv({record({agg::Structure::Medium, agg::L2Mode::RandomInit}, {0.8, 0.9}, {1, 0.5})});
    std::stringstream ss(csv);
    std::string header, row, extra;
    std::getline(ss, header);
    std::getline(ss, row);
    CHECK_FALSE(std::getline(ss, extra));
    CHECK(header == "cell,structure,l2_mode,config,metric,mean,std,fold_0,fold_1");
    auto cols = split_csv(row);
    CHECK(cols[0] == "medium/random_init");
    CHECK(std::stod(cols[5]) == doctest::Approx(0.85));
  }
  SUBCASE("mean and std recompute from the fold columns") {
    Rng rng(1);
    std::vector<RunRecord> records;
    for (const auto& cell : grid_cells()) {
      if (is_na(cell)) {
        RunRecord r;
        r.cell = cell;
        r.na = true;
        r.metric = "auc";
        records.push_back(r);
        continue;
      }
      std::vector<double> folds(7);
      for (auto& f : folds) f = rng.uniform();
      records.push_back(record(cell, folds, {2, 1, 0.5}));
    }
    std::stringstream ss(results_csv(records));
    std::string line;
    std::getline(ss, line);
    int rows = 0, na_rows = 0;
    while (std::getline(ss, line)) {
      ++rows;
      auto cols = split_csv(line);
      if (cols[5] == "N/A") {
        ++na_rows;
        continue;
      }
      std::vector<double> f;
      for (std::size_t k = 7; k < cols.size(); ++k) f.push_back(std::stod(cols[k]));
      double mean = 0, var = 0;
      for (double v : f) mean += v / static_cast<double>(f.size());
      for (double v : f) var += (v - mean) * (v - mean) / static_cast<double>(f.size() - 1);
      CHECK(std::abs(std::stod(cols[5]) - mean) <= 1e-9);
      CHECK(std::abs(std::stod(cols[6]) - std::sqrt(var)) <= 1e-9);
    }
    CHECK(rows == 9);
    CHECK(na_rows == 2);
    const auto svg = loss_svg(records);
    const std::regex poly("<polyline");
    CHECK(std::distance(std::sregex_iterator(svg.begin(), svg.end(), poly), std::sregex_iterator()) == 7);
    CHECK(svg.find("data-epochs=\"3\"") != std::string::npos);
    const auto grid = grid_csv(records);
    std::size_t na = 0;
    for (auto p = grid.find("N/A"); p != std::string::npos; p = grid.find("N/A", p + 1)) ++na;
    CHECK(na == 2);
  }
  SUBCASE("cells not run show a dash") {
    auto text = grid_text({record({agg::Structure::None, agg::L2Mode::Unset}, {0.7, 0.8}, {1})});
    CHECK(text.find("0.750 ± 0.071") != std::string::npos);
    CHECK(text.find(" - ") != std::string::npos);
  }
}

TEST_CASE("reference stain assets match the generator") {
  const fs::path assets = fs::path(WSI_SOURCE_DIR) / "assets";
  CHECK(slide::read_ppm(assets / "reference_tile.ppm") == reference_tile());
  const auto shipped = preprocess::load_stain_matrix(assets / "reference_stain.json");
  const auto fitted = reference_stain();
  for (int k = 0; k < 3; ++k) {
    CHECK(shipped.hematoxylin[k] == doctest::Approx(fitted.hematoxylin[k]).epsilon(1e-12));
    CHECK(shipped.eosin[k] == doctest::Approx(fitted.eosin[k]).epsilon(1e-12));
  }
  CHECK(preprocess::macenko_fit(slide::read_ppm(assets / "reference_tile.ppm")).max_concentrations ==
        fitted.max_concentrations);
}

TEST_CASE("matrix run, determinism and resume") {
  const auto root = scratch_dir("matrix");
  const auto manifest = wsi::testing::feature_dataset(root / "data", slide::LabelRule::LocalPresence, 12, 3);
  ExperimentConfig c;
  c.dataset = manifest;
  c.epochs = 2;
  c.folds = 3;
  c.model = tiny_model();
  c.seed = 5;
  auto data = load_dataset(manifest);
  CHECK(data.slides.size() == 12);

  c.out = root / "no_ckpt";
  CHECK(code_of([&] { run_matrix(c, {.quiet = true}); }) == ErrorCode::MissingCheckpoint);

  c.l2_checkpoints = wsi::testing::pretrain_checkpoints(data, c.model, root / "pre", 1, 2);
  c.out = root / "a";
  auto a = run_matrix(c, {.quiet = true});
  CHECK(a.complete);
  CHECK(a.computed == 7);
  REQUIRE(a.records.size() == 9);
  int na = 0;
  for (const auto& r : a.records) {
    na += r.na;
    if (!r.na) {
      CHECK(r.per_fold.size() == 3);
      CHECK(r.epoch_loss.size() == 2);
    }
  }
  CHECK(na == 2);
  const auto grid = slurp(c.out / kGridCsv);
  CHECK(grid.find("N/A") != std::string::npos);

  auto again = run_matrix(c, {.quiet = true});
  CHECK(again.resumed == 7);
  CHECK(again.computed == 0);

  auto b_cfg = c;
  b_cfg.out = root / "b";
  run_matrix(b_cfg, {.cell_threads = 2, .quiet = true});

  auto r_cfg = c;
  r_cfg.out = root / "r";
  auto partial = run_matrix(r_cfg, {.stop_after_cells = 3, .quiet = true});
  CHECK_FALSE(partial.complete);
  CHECK(partial.computed == 3);
  CHECK_FALSE(fs::exists(r_cfg.out / kResultsCsv));
  auto resumed = run_matrix(r_cfg, {.quiet = true});
  CHECK(resumed.resumed == 3);
  CHECK(resumed.computed == 4);

  for (const char* f : {kResultsCsv, kMetricsCsv, kGridCsv, kGridText, kLossPlot}) {
    CAPTURE(f);
    CHECK_FALSE(slurp(c.out / f).empty());
    CHECK(slurp(c.out / f) == slurp(b_cfg.out / f));
    CHECK(slurp(c.out / f) == slurp(r_cfg.out / f));
  }
  const auto stored = stored_records(c);
  REQUIRE(stored.size() == 9);
  CHECK(results_csv(stored) == slurp(c.out / kResultsCsv));

  SUBCASE("a single cell alone matches its matrix result") {
    auto solo = c;
    solo.cells = {{agg::Structure::None, agg::L2Mode::Unset}};
    solo.out = root / "solo";
    auto s = run_matrix(solo, {.quiet = true});
    const RunRecord* full = nullptr;
    for (const auto& r : a.records)
      if (r.cell == solo.cells[0]) full = &r;
    REQUIRE(full != nullptr);
    const RunRecord* one = nullptr;
    for (const auto& r : s.records)
      if (r.cell == solo.cells[0]) one = &r;
    REQUIRE(one != nullptr);
    CHECK(one->per_fold == full->per_fold);
  }
  SUBCASE("frozen training leaves the checkpoint untouched") {
    const Cell frozen{agg::Structure::Medium, agg::L2Mode::Frozen};
    const auto ckpt = nn::load_parameters(c.l2_checkpoints.at(agg::Structure::Medium));
    std::vector<std::string> ids;
    for (const auto& e : data.manifest.entries) ids.push_back(e.slide_id);
    auto model = train_model(c, frozen, data, ids, 1, ckpt);
    const auto l2 = model.l2_parameters();
    REQUIRE(l2.size() == ckpt.size());
    for (std::size_t i = 0; i < l2.size(); ++i) CHECK(l2[i].tensor.to_vector() == ckpt[i].tensor.to_vector());
  }
}

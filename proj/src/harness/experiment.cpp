#include "wsi/harness/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>

#include "wsi/error.hpp"
#include "wsi/features/feature_bag.hpp"
#include "wsi/harness/report.hpp"
#include "wsi/parallel.hpp"
#include "wsi/tensor_core/checkpoint.hpp"
#include "wsi/tensor_core/ops.hpp"
#include "wsi/tensor_core/optim.hpp"

namespace wsi::harness {

using json = nlohmann::json;
using agg::L2Mode;
using agg::Structure;

std::string to_string(const Cell& cell) {
  if (cell.structure == Structure::None && cell.mode == L2Mode::Unset) return "none";
  return agg::to_string(cell.structure) + "/" + agg::to_string(cell.mode);
}

Cell cell_from_string(const std::string& name) {
  if (name == "none") return {Structure::None, L2Mode::Unset};
  const auto slash = name.find('/');
  if (slash == std::string::npos) fail(ErrorCode::InvalidCell, "cell '" + name + "' is not structure/mode");
  try {
    return {agg::structure_from_string(name.substr(0, slash)), agg::l2_mode_from_string(name.substr(slash + 1))};
  } catch (const Error& e) {
    fail(ErrorCode::InvalidCell, "cell '" + name + "': " + e.what());
  }
}

std::vector<Cell> grid_cells() {
  std::vector<Cell> cells;
  for (Structure s : {Structure::Most, Structure::Medium, Structure::None})
    for (L2Mode m : {L2Mode::Frozen, L2Mode::Finetune, L2Mode::RandomInit})
      cells.push_back({s, s == Structure::None && m == L2Mode::RandomInit ? L2Mode::Unset : m});
  return cells;
}

std::vector<Cell> valid_cells() {
  std::vector<Cell> cells;
  for (const Cell& c : grid_cells())
    if (!is_na(c)) cells.push_back(c);
  return cells;
}

bool is_na(const Cell& cell) {
  return cell.structure == Structure::None && cell.mode != L2Mode::Unset;
}

namespace {

void check_cell(const Cell& cell) {
  if (is_na(cell)) fail(ErrorCode::InvalidCell, to_string(cell) + " has no model (structure none has no level-2 encoder)");
  if (cell.structure != Structure::None && cell.mode == L2Mode::Unset)
    fail(ErrorCode::InvalidCell, agg::to_string(cell.structure) + " needs a level-2 regime");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

json semantic_json(const ExperimentConfig& config) {
  json j = to_json(config);
  j.erase("out");
  j.erase("threads");
  return j;
}

std::uint64_t cell_code(const Cell& cell) {
  return static_cast<std::uint64_t>(cell.structure) * 8 + static_cast<std::uint64_t>(cell.mode);
}

}  // namespace

void validate(const ExperimentConfig& c) {
  if (c.epochs <= 0) fail(ErrorCode::InvalidConfig, "epochs must be positive");
  if (!(c.lr > 0) || !std::isfinite(c.lr)) fail(ErrorCode::InvalidConfig, "lr must be positive");
  if (c.batch == 0) fail(ErrorCode::InvalidConfig, "batch must be positive");
  if (c.survival_batch < 2) fail(ErrorCode::InvalidConfig, "survival_batch must be at least 2");
  if (!(c.train_fraction > 0 && c.train_fraction <= 1))
    fail(ErrorCode::InvalidConfig, "train_fraction must lie in (0, 1]");
  if (c.folds < 2) fail(ErrorCode::InvalidConfig, "need at least 2 folds");
  if (c.threads < 1) fail(ErrorCode::InvalidConfig, "threads must be >= 1");
  if (c.cells.empty()) fail(ErrorCode::InvalidConfig, "no cells requested");
  std::set<std::string> seen;
  for (const Cell& cell : c.cells) {
    check_cell(cell);
    if (!seen.insert(to_string(cell)).second) fail(ErrorCode::InvalidCell, "cell " + to_string(cell) + " repeated");
  }
  // Architecture checks run through the model validator.
  for (const Cell& cell : c.cells) agg::validate(model_config(c, cell, 2));
}

json to_json(const ExperimentConfig& c) {
  json cells = json::array();
  for (const Cell& cell : c.cells) cells.push_back(to_string(cell));
  json model = {{"l2_dim", c.model.l2_dim},
                {"l3_layers", c.model.l3_layers},
                {"l3_heads", c.model.l3_heads},
                {"mlp_ratio", c.model.mlp_ratio},
                {"instance_hidden", c.model.instance_hidden}};
  if (c.model.l2_layers) model["l2_layers"] = *c.model.l2_layers;
  if (c.model.l2_heads) model["l2_heads"] = *c.model.l2_heads;
  json checkpoints = json::object();
  for (const auto& [structure, path] : c.l2_checkpoints) checkpoints[agg::to_string(structure)] = path.generic_string();
  return {{"dataset", c.dataset.generic_string()},
          {"task", agg::to_string(c.task)},
          {"cells", cells},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"batch", c.batch},
          {"survival_batch", c.survival_batch},
          {"seed", c.seed},
          {"train_fraction", c.train_fraction},
          {"folds", c.folds},
          {"stratified", c.stratified},
          {"l2_checkpoints", checkpoints},
          {"model", model},
          {"dtype", c.dtype == nn::DType::f64 ? "f64" : "f32"},
          {"threads", c.threads},
          {"out", c.out.generic_string()}};
}

ExperimentConfig config_from_json(const json& j) {
  static const std::set<std::string> known{"dataset", "task",  "cells",  "epochs",        "lr",
                                           "batch",   "survival_batch", "seed", "train_fraction", "folds",
                                           "stratified", "l2_checkpoints", "model", "dtype", "threads",
                                           "out"};
  static const std::set<std::string> known_model{"l2_dim", "l3_layers", "l3_heads", "mlp_ratio",
                                                 "instance_hidden", "l2_layers", "l2_heads"};
  if (!j.is_object()) fail(ErrorCode::InvalidConfig, "experiment config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
  ExperimentConfig c;
  try {
    c.dataset = j.value("dataset", std::string());
    c.task = agg::task_from_string(j.value("task", std::string("classification")));
    if (j.contains("cells")) {
      const auto& cells = j.at("cells");
      if (cells.is_string() && cells.get<std::string>() == "all") {
        c.cells = valid_cells();
      } else {
        c.cells.clear();
        for (const auto& name : cells) c.cells.push_back(cell_from_string(name.get<std::string>()));
      }
    }
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch = j.value("batch", c.batch);
    c.survival_batch = j.value("survival_batch", c.survival_batch);
    c.seed = j.value("seed", c.seed);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.folds = j.value("folds", c.folds);
    c.stratified = j.value("stratified", c.stratified);
    if (j.contains("l2_checkpoints")) {
      for (const auto& [key, value] : j.at("l2_checkpoints").items()) {
        const Structure structure = agg::structure_from_string(key);
        if (structure == Structure::None) fail(ErrorCode::InvalidConfig, "structure none has no level-2 checkpoint");
        c.l2_checkpoints[structure] = value.get<std::string>();
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      for (const auto& [key, value] : m.items())
        if (!known_model.count(key)) fail(ErrorCode::InvalidConfig, "unknown model key '" + key + "'");
      c.model.l2_dim = m.value("l2_dim", c.model.l2_dim);
      c.model.l3_layers = m.value("l3_layers", c.model.l3_layers);
      c.model.l3_heads = m.value("l3_heads", c.model.l3_heads);
      c.model.mlp_ratio = m.value("mlp_ratio", c.model.mlp_ratio);
      c.model.instance_hidden = m.value("instance_hidden", c.model.instance_hidden);
      if (m.contains("l2_layers")) c.model.l2_layers = m.at("l2_layers").get<std::size_t>();
      if (m.contains("l2_heads")) c.model.l2_heads = m.at("l2_heads").get<std::size_t>();
    }
    const std::string dtype = j.value("dtype", std::string("f32"));
    if (dtype != "f32" && dtype != "f64") fail(ErrorCode::InvalidConfig, "dtype must be f32 or f64");
    c.dtype = dtype == "f64" ? nn::DType::f64 : nn::DType::f32;
    c.threads = j.value("threads", c.threads);
    c.out = j.value("out", std::string("runs"));
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("experiment config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::InvalidConfig, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << to_json(config).dump(2) << '\n';
}

std::string fingerprint(const ExperimentConfig& config) { return fnv1a(semantic_json(config).dump()); }

std::string cell_fingerprint(const ExperimentConfig& config, const Cell& cell) {
  json j = semantic_json(config);
  j.erase("cells");
  j["cell"] = to_string(cell);
  // A cell only depends on the checkpoint it reads.
  j.erase("l2_checkpoints");
  if (cell.mode == L2Mode::Frozen || cell.mode == L2Mode::Finetune) {
    const auto it = config.l2_checkpoints.find(cell.structure);
    j["l2_checkpoint"] = it == config.l2_checkpoints.end() ? std::string() : it->second.generic_string();
  }
  return fnv1a(j.dump());
}

agg::ModelConfig model_config(const ExperimentConfig& config, const Cell& cell, std::size_t classes) {
  agg::ModelConfig m = agg::make_config(cell.structure, cell.mode, classes, config.seed, config.task);
  m.l2_dim = config.model.l2_dim;
  m.l3_layers = config.model.l3_layers;
  m.l3_heads = config.model.l3_heads;
  m.mlp_ratio = config.model.mlp_ratio;
  m.instance_hidden = config.model.instance_hidden;
  if (config.model.l2_layers) m.l2_layers = *config.model.l2_layers;
  if (config.model.l2_heads) m.l2_heads = *config.model.l2_heads;
  return m;
}

std::size_t Dataset::index_of(const std::string& slide_id) const {
  const auto it = by_id.find(slide_id);
  if (it == by_id.end()) fail(ErrorCode::BadManifest, "unknown slide " + slide_id);
  return it->second;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, nn::DType dtype) {
  Dataset d;
  d.manifest = slide::read_manifest(manifest_path);
  for (const auto& e : d.manifest.entries) {
    if (!e.features) fail(ErrorCode::BadManifest, e.slide_id + ": entry has no features file");
    auto bag = features::import_embeddings(d.manifest.resolve(*e.features), std::nullopt, e.slide_id);
    d.by_id[e.slide_id] = d.slides.size();
    d.slides.push_back(agg::prepare_slide(std::move(bag), dtype));
  }
  return d;
}

namespace {

std::vector<std::size_t> indices_of(const Dataset& data, const std::vector<std::string>& ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) out.push_back(data.index_of(id));
  return out;
}

std::size_t class_count(const Dataset& data) { return std::max<std::size_t>(2, data.manifest.classes.size()); }

void check_finite(double loss) {
  if (!std::isfinite(loss)) fail(ErrorCode::NaNInGraph, "training loss is not finite");
}

}  // namespace

agg::SlideModel train_model(const ExperimentConfig& config, const Cell& cell, const Dataset& data,
                            const std::vector<std::string>& train_ids, std::uint64_t seed,
                            const std::optional<nn::ParameterList>& l2_checkpoint, std::vector<double>* epoch_loss) {
  check_cell(cell);
  const bool survival = config.task == agg::Task::Survival;
  if (survival && !data.manifest.has_survival())
    fail(ErrorCode::BadManifest, "survival task needs survival_time and event_observed on every entry");

  agg::ModelConfig mc = model_config(config, cell, class_count(data));
  mc.seed = seed;
  agg::SlideModel model = agg::build_model(mc, l2_checkpoint, config.dtype);
  nn::AdamW optimizer(model.trainable_parameters());

  const std::vector<std::size_t> train = indices_of(data, train_ids);
  if (train.empty()) fail(ErrorCode::TooFewSlides, "empty training fold");

  // A frozen level-2 encoder gives the same region embeddings every epoch.
  std::vector<nn::Tensor> cache;
  if (cell.mode == L2Mode::Frozen) {
    nn::NoGradGuard guard;
    for (std::size_t i : train) cache.push_back(model.encode_regions(data.slides[i]));
  }
  std::vector<std::size_t> position(data.slides.size(), 0);
  for (std::size_t p = 0; p < train.size(); ++p) position[train[p]] = p;

  Rng rng(mix_seed(seed, 0x7a1));
  auto forward = [&](std::size_t i) {
    const nn::Tensor* cached = cache.empty() ? nullptr : &cache[position[i]];
    return model.forward(data.slides[i], &rng, cached).logits;
  };

  std::vector<std::size_t> order = train;
  const std::size_t step_size = survival ? config.survival_batch : config.batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += step_size) {
      const std::size_t end = std::min(order.size(), start + step_size);
      nn::Tensor loss;
      if (survival) {
        std::vector<nn::Tensor> risks;
        std::vector<double> times;
        std::vector<bool> events;
        for (std::size_t p = start; p < end; ++p) {
          const auto& e = data.manifest.entries[order[p]];
          times.push_back(*e.survival_time);
          events.push_back(*e.event_observed);
          risks.push_back(forward(order[p]));
        }
        if (std::find(events.begin(), events.end(), true) == events.end()) continue;
        loss = agg::cox_loss(nn::concat_rows(risks), times, events);
        total += loss.item();
        ++counted;
      } else {
        std::vector<nn::Tensor> losses;
        for (std::size_t p = start; p < end; ++p) {
          const auto label = static_cast<std::size_t>(data.manifest.entries[order[p]].label_index);
          losses.push_back(nn::cross_entropy(forward(order[p]), {label}));
        }
        loss = losses.size() == 1 ? losses[0] : nn::scale(nn::sum(nn::concat_rows(losses)), 1.0 / losses.size());
        total += loss.item() * static_cast<double>(end - start);
        counted += end - start;
      }
      check_finite(loss.item());
      optimizer.zero_grad();
      nn::backward(loss);
      optimizer.step(config.lr);
    }
    if (epoch_loss) epoch_loss->push_back(counted ? total / static_cast<double>(counted) : 0.0);
  }
  return model;
}

std::string metric_name(const ExperimentConfig& config, const Dataset& data) {
  if (config.task == agg::Task::Survival) return "c_index";
  return class_count(data) > 2 ? "macro_auc" : "auc";
}

double score_model(const agg::SlideModel& model, const Dataset& data, const std::vector<std::string>& ids) {
  const std::vector<std::size_t> idx = indices_of(data, ids);
  if (model.config().task == agg::Task::Survival) {
    std::vector<double> risks, times;
    std::vector<bool> events;
    for (std::size_t i : idx) {
      const auto& e = data.manifest.entries[i];
      if (!e.survival_time) fail(ErrorCode::BadManifest, e.slide_id + ": no survival fields");
      risks.push_back(model.predict_risk(data.slides[i]).risk);
      times.push_back(*e.survival_time);
      events.push_back(*e.event_observed);
    }
    return eval::concordance_index(risks, times, events);
  }
  const std::size_t k = model.config().classes;
  std::vector<double> probabilities, positive;
  std::vector<int> labels;
  for (std::size_t i : idx) {
    const auto p = model.predict(data.slides[i]).probabilities;
    for (double v : p) check_finite(v);
    probabilities.insert(probabilities.end(), p.begin(), p.end());
    positive.push_back(p[1]);
    labels.push_back(data.manifest.entries[i].label_index);
  }
  return k == 2 ? eval::binary_auc(positive, labels) : eval::macro_auc(probabilities, k, labels);
}

FoldOutcome run_fold(const ExperimentConfig& config, const Cell& cell, const Dataset& data,
                     const std::vector<std::string>& train_ids, const std::vector<std::string>& val_ids,
                     std::size_t fold_index, const std::optional<nn::ParameterList>& l2_checkpoint) {
  FoldOutcome out;
  const std::uint64_t seed = mix_seed(mix_seed(config.seed, cell_code(cell)), fold_index);
  const agg::SlideModel model = train_model(config, cell, data, train_ids, seed, l2_checkpoint, &out.epoch_loss);
  out.metric = score_model(model, data, val_ids);
  return out;
}

eval::MetricsReport RunRecord::report() const { return eval::summarize(metric, fingerprint, per_fold); }

json to_json(const RunRecord& r) {
  return {{"cell", to_string(r.cell)},
          {"structure", agg::to_string(r.cell.structure)},
          {"l2_mode", agg::to_string(r.cell.mode)},
          {"fingerprint", r.fingerprint},
          {"seed", r.seed},
          {"metric", r.metric},
          {"per_fold", r.per_fold},
          {"epoch_loss", r.epoch_loss},
          {"wall_seconds", r.wall_seconds},
          {"na", r.na}};
}

RunRecord record_from_json(const json& j) {
  try {
    RunRecord r;
    r.cell = {agg::structure_from_string(j.at("structure").get<std::string>()),
              agg::l2_mode_from_string(j.at("l2_mode").get<std::string>())};
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metric = j.at("metric").get<std::string>();
    r.per_fold = j.at("per_fold").get<std::vector<double>>();
    r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    r.wall_seconds = j.value("wall_seconds", 0.0);
    r.na = j.value("na", false);
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("run record: ") + e.what());
  }
}

RunRecord run_cell(const ExperimentConfig& config, const Cell& cell, const Dataset& data, const eval::FoldSplit& split,
                   const std::optional<nn::ParameterList>& l2_checkpoint) {
  RunRecord r;
  r.cell = cell;
  r.fingerprint = cell_fingerprint(config, cell);
  r.seed = config.seed;
  r.metric = metric_name(config, data);
  if (is_na(cell)) {
    r.na = true;
    return r;
  }
  const auto start = std::chrono::steady_clock::now();
  std::vector<FoldOutcome> outcomes(split.folds.size());
  parallel_for(split.folds.size(), config.threads, [&](std::size_t f) {
    outcomes[f] = run_fold(config, cell, data, split.folds[f].train, split.folds[f].val, f, l2_checkpoint);
  });
  r.epoch_loss.assign(static_cast<std::size_t>(config.epochs), 0.0);
  for (const auto& o : outcomes) {
    r.per_fold.push_back(o.metric);
    for (std::size_t e = 0; e < o.epoch_loss.size(); ++e)
      r.epoch_loss[e] += o.epoch_loss[e] / static_cast<double>(outcomes.size());
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

namespace {

std::optional<RunRecord> load_record(const std::filesystem::path& path, const std::string& fp) {
  std::ifstream is(path);
  if (!is) return std::nullopt;
  try {
    RunRecord r = record_from_json(json::parse(is));
    if (r.fingerprint != fp) return std::nullopt;
    return r;
  } catch (const std::exception&) {
    // A half-written or foreign file is recomputed.
    return std::nullopt;
  }
}

void store_record(const std::filesystem::path& path, const RunRecord& r) {
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream os(tmp);
    if (!os) fail(ErrorCode::Io, "cannot write " + tmp.string());
    os << to_json(r).dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

MatrixResult run_matrix(const ExperimentConfig& config, const MatrixOptions& options) {
  validate(config);
  if (options.cell_threads < 1) fail(ErrorCode::InvalidConfig, "cell_threads must be >= 1");
  const Dataset data = load_dataset(config.dataset, config.dtype);
  eval::FoldSplit split = eval::make_folds(data.manifest, config.folds, config.seed, config.stratified);
  split = eval::subsample_train(split, data.manifest, config.train_fraction, config.seed);

  std::map<Structure, nn::ParameterList> checkpoints;
  for (const Cell& cell : config.cells) {
    if (cell.mode != L2Mode::Frozen && cell.mode != L2Mode::Finetune) continue;
    if (checkpoints.count(cell.structure)) continue;
    const auto it = config.l2_checkpoints.find(cell.structure);
    if (it == config.l2_checkpoints.end() || it->second.empty())
      fail(ErrorCode::MissingCheckpoint, "cell " + to_string(cell) + " needs l2_checkpoints." + agg::to_string(cell.structure));
    checkpoints[cell.structure] = nn::load_parameters(it->second);
  }
  auto checkpoint_for = [&](const Cell& cell) -> std::optional<nn::ParameterList> {
    const auto it = checkpoints.find(cell.structure);
    if (it == checkpoints.end() || (cell.mode != L2Mode::Frozen && cell.mode != L2Mode::Finetune)) return std::nullopt;
    return it->second;
  };

  const auto cells_dir = config.out / "cells";
  std::filesystem::create_directories(cells_dir);
  eval::write_folds(config.out / "folds.json", split);
  {
    json j = semantic_json(config);
    std::ofstream os(config.out / "experiment.json");
    os << j.dump(2) << '\n';
  }

  MatrixResult result;
  std::vector<std::optional<RunRecord>> slots;
  struct Pending {
    std::size_t slot;
    Cell cell;
    std::filesystem::path path;
  };
  std::vector<Pending> pending;
  for (const Cell& cell : grid_cells()) {
    if (is_na(cell)) {
      slots.push_back(run_cell(config, cell, data, split, std::nullopt));
      continue;
    }
    if (std::find(config.cells.begin(), config.cells.end(), cell) == config.cells.end()) continue;
    const std::string fp = cell_fingerprint(config, cell);
    const auto path = cells_dir / (fp + ".json");
    if (auto loaded = load_record(path, fp)) {
      if (!options.quiet) std::cerr << "cell " << to_string(cell) << ": loaded " << path.filename().string() << '\n';
      slots.push_back(std::move(loaded));
      ++result.resumed;
      continue;
    }
    slots.emplace_back();
    pending.push_back({slots.size() - 1, cell, path});
  }
  if (options.stop_after_cells && pending.size() > *options.stop_after_cells) {
    pending.resize(*options.stop_after_cells);
    result.complete = false;
  }

  std::mutex log_mutex;
  parallel_for(pending.size(), options.cell_threads, [&](std::size_t i) {
    const Pending& p = pending[i];
    if (!options.quiet) {
      std::lock_guard lock(log_mutex);
      std::cerr << "cell " << to_string(p.cell) << ": training " << split.folds.size() << " folds\n";
    }
    RunRecord r = run_cell(config, p.cell, data, split, checkpoint_for(p.cell));
    store_record(p.path, r);
    if (!options.quiet) {
      std::lock_guard lock(log_mutex);
      std::cerr << "cell " << to_string(p.cell) << ": " << r.metric << " " << r.report().mean << '\n';
    }
    slots[p.slot] = std::move(r);
  });
  result.computed = pending.size();

  for (auto& s : slots)
    if (s) result.records.push_back(std::move(*s));
  if (result.complete) emit_report(result.records, config.out);
  return result;
}

std::vector<RunRecord> stored_records(const ExperimentConfig& config) {
  std::vector<RunRecord> records;
  std::string metric;
  for (const Cell& cell : grid_cells()) {
    RunRecord r;
    if (is_na(cell)) {
      r.cell = cell;
      r.fingerprint = cell_fingerprint(config, cell);
      r.seed = config.seed;
      r.na = true;
      records.push_back(std::move(r));
      continue;
    }
    if (std::find(config.cells.begin(), config.cells.end(), cell) == config.cells.end()) continue;
    const std::string fp = cell_fingerprint(config, cell);
    if (auto loaded = load_record(config.out / "cells" / (fp + ".json"), fp)) {
      metric = loaded->metric;
      records.push_back(std::move(*loaded));
    }
  }
  if (metric.empty()) fail(ErrorCode::Io, "no finished cells under " + config.out.string());
  for (auto& r : records)
    if (r.na) r.metric = metric;
  return records;
}

}  // namespace wsi::harness

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsi/aggregators/model.hpp"
#include "wsi/evaluation/folds.hpp"
#include "wsi/evaluation/metrics.hpp"
#include "wsi/slide_io/manifest.hpp"

namespace wsi::harness {

/// One grid position: (structure, level-2 regime). Structure none only pairs
/// with L2Mode::Unset, shown in the random-init column.
struct Cell {
  agg::Structure structure = agg::Structure::Medium;
  agg::L2Mode mode = agg::L2Mode::RandomInit;

  bool operator==(const Cell&) const = default;
};

std::string to_string(const Cell& cell);
/// Grid rows are most / medium / none; columns frozen / finetune / random_init.
std::vector<Cell> grid_cells();
/// The seven grid positions that have a model, in grid order.
std::vector<Cell> valid_cells();
/// True for the two grid positions that have no model (none x frozen/finetune).
bool is_na(const Cell& cell);
/// Parse "most/frozen", "medium/random_init", "none" (Max-MIL).
Cell cell_from_string(const std::string& name);

/// Architecture overrides applied on top of the per-structure defaults.
struct ModelOverrides {
  std::size_t l2_dim = 192;
  std::size_t l3_layers = 2;
  std::size_t l3_heads = 3;
  std::size_t mlp_ratio = 4;
  std::size_t instance_hidden = 256;
  /// When set, replace the (2, 3) / (6, 6) level-2 depth and head count.
  std::optional<std::size_t> l2_layers;
  std::optional<std::size_t> l2_heads;

  bool operator==(const ModelOverrides&) const = default;
};

struct ExperimentConfig {
  /// Manifest whose entries carry precomputed features.
  std::filesystem::path dataset;
  agg::Task task = agg::Task::Classification;
  std::vector<Cell> cells = valid_cells();
  int epochs = 20;
  double lr = 1e-4;
  std::size_t batch = 1;
  /// Slides per Cox step; a partial likelihood needs several slides at once.
  std::size_t survival_batch = 16;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;
  std::size_t folds = 10;
  bool stratified = true;
  /// Pre-trained level-2 encoder per structure, read by frozen and finetune cells.
  std::map<agg::Structure, std::filesystem::path> l2_checkpoints;
  ModelOverrides model;
  nn::DType dtype = nn::DType::f32;
  /// Folds trained concurrently within a cell.
  int threads = 1;
  /// Not part of the fingerprint.
  std::filesystem::path out = "runs";
};

/// Throws InvalidConfig (epochs <= 0, bad fraction, ...) or InvalidCell.
void validate(const ExperimentConfig& config);

nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys take defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// 16 hex digits of FNV-1a over the canonical JSON of every field except the
/// output directory and the thread count.
std::string fingerprint(const ExperimentConfig& config);
/// Fingerprint of the experiment restricted to one cell.
std::string cell_fingerprint(const ExperimentConfig& config, const Cell& cell);

/// Model config of `cell` under `config` (classes from the dataset).
agg::ModelConfig model_config(const ExperimentConfig& config, const Cell& cell, std::size_t classes);

struct Dataset {
  slide::Manifest manifest;
  /// Parallel to manifest.entries.
  std::vector<agg::SlideData> slides;
  std::map<std::string, std::size_t> by_id;

  /// Throws BadManifest for an unknown id.
  std::size_t index_of(const std::string& slide_id) const;
};

/// Load every entry's feature file. Throws BadManifest when an entry lacks
/// features or, for survival, survival fields.
Dataset load_dataset(const std::filesystem::path& manifest_path, nn::DType dtype = nn::DType::f32);

struct FoldOutcome {
  double metric = 0;
  std::vector<double> epoch_loss;
};

/// Train a fresh model for `cell` on `train_ids` and score `val_ids` with the
/// final-epoch model.
FoldOutcome run_fold(const ExperimentConfig& config, const Cell& cell, const Dataset& data,
                     const std::vector<std::string>& train_ids, const std::vector<std::string>& val_ids,
                     std::size_t fold_index, const std::optional<nn::ParameterList>& l2_checkpoint);

/// Train on the given slides and return the model (used by `train`).
agg::SlideModel train_model(const ExperimentConfig& config, const Cell& cell, const Dataset& data,
                            const std::vector<std::string>& train_ids, std::uint64_t seed,
                            const std::optional<nn::ParameterList>& l2_checkpoint,
                            std::vector<double>* epoch_loss = nullptr);

/// AUC (binary), macro-AUC (multi-class) or c-index (survival).
std::string metric_name(const ExperimentConfig& config, const Dataset& data);
double score_model(const agg::SlideModel& model, const Dataset& data, const std::vector<std::string>& ids);

struct RunRecord {
  Cell cell;
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::string metric;
  std::vector<double> per_fold;
  /// Mean over folds of each epoch's mean training loss.
  std::vector<double> epoch_loss;
  double wall_seconds = 0;
  /// Grid position without a model.
  bool na = false;

  eval::MetricsReport report() const;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord record_from_json(const nlohmann::json& j);

RunRecord run_cell(const ExperimentConfig& config, const Cell& cell, const Dataset& data,
                   const eval::FoldSplit& split, const std::optional<nn::ParameterList>& l2_checkpoint);

struct MatrixOptions {
  /// Stop after computing this many cells (simulates an interruption).
  std::optional<std::size_t> stop_after_cells;
  /// Cells trained concurrently; each cell keeps its own seed.
  int cell_threads = 1;
  bool quiet = false;
};

struct MatrixResult {
  /// In grid order; N/A cells included.
  std::vector<RunRecord> records;
  std::size_t computed = 0;
  std::size_t resumed = 0;
  bool complete = true;
};

/// Run every requested cell over all folds. Each finished cell is written to
/// `<out>/cells/<cell fingerprint>.json`; a rerun loads matching files instead
/// of recomputing them. Emits the report once every cell is present.
MatrixResult run_matrix(const ExperimentConfig& config, const MatrixOptions& options = {});

/// Finished cells stored under `config.out`, in grid order with N/A cells.
/// Needs no dataset. Throws Io when no cell has been stored yet.
std::vector<RunRecord> stored_records(const ExperimentConfig& config);

}  // namespace wsi::harness

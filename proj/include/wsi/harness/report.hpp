#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wsi/harness/experiment.hpp"

namespace wsi::harness {

/// Files written by emit_report, relative to the output directory.
inline constexpr const char* kResultsCsv = "results.csv";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kGridCsv = "grid.csv";
inline constexpr const char* kGridText = "grid.txt";
inline constexpr const char* kLossPlot = "loss_curves.svg";

/// One row per record: cell, structure, l2_mode, config, metric, mean, std,
/// fold_0..fold_{k-1}. N/A records carry "N/A" in every value column.
std::string results_csv(const std::vector<RunRecord>& records);
/// 3x3 grid (rows most/medium/none, columns frozen/finetune/random_init) of
/// "mean ± std"; "N/A" for cells without a model, "-" for cells not run.
std::string grid_csv(const std::vector<RunRecord>& records);
std::string grid_text(const std::vector<RunRecord>& records);
/// One polyline per trained record over epochs 1..E.
std::string loss_svg(const std::vector<RunRecord>& records);

/// Write all report files. Contents depend only on the records' metrics and
/// losses, never on wall time.
void emit_report(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir);

}  // namespace wsi::harness

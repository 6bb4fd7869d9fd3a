#pragma once

#include <filesystem>
#include <vector>

#include "wsi/preprocess/tissue_mask.hpp"

namespace wsi::preprocess {

enum class PatchLevel { L1, L2 };

inline constexpr std::int64_t kL1Size = 256;
inline constexpr std::int64_t kL2Size = 4096;

/// Paper-scale foreground thresholds.
inline constexpr double kL1Threshold = 0.75;
inline constexpr double kL2Threshold = 0.40;
inline constexpr double kL2ThresholdSparse = 0.20;

std::int64_t patch_size(PatchLevel level);
const char* to_string(PatchLevel level);

struct PatchRecord {
  PatchLevel level = PatchLevel::L1;
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t size = kL1Size;
  double fg_fraction = 0;

  bool operator==(const PatchRecord&) const = default;
};

/// Share of the window [x, x+size)^2 covered by tissue cells (area weighted;
/// area outside the mask counts as background).
double foreground_fraction(const TissueMask& mask, std::int64_t x, std::int64_t y, std::int64_t size);

/// Non-overlapping grid over the slide extent recorded in `mask`; keeps
/// windows with fraction >= threshold, sorted by (y, x).
std::vector<PatchRecord> extract_patches(const TissueMask& mask, PatchLevel level, double threshold);

/// L1 records inside L2 cells that pass `l2_threshold`, each passing `l1_threshold`.
std::vector<PatchRecord> extract_nested(const TissueMask& mask, double l2_threshold, double l1_threshold);

/// CSV with header `level,x,y,size,fg_fraction`.
void write_patch_index(const std::filesystem::path& path, const std::vector<PatchRecord>& records);
std::vector<PatchRecord> read_patch_index(const std::filesystem::path& path);

}  // namespace wsi::preprocess

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wsi::features {

inline constexpr std::size_t kL1Dim = 384;
/// Level-1 cells per level-2 region side (4096 / 256).
inline constexpr int kRegionSide = 16;
inline constexpr int kRegionSlots = kRegionSide * kRegionSide;

struct FeatureEntry {
  std::int32_t grid_x = 0;
  std::int32_t grid_y = 0;
  std::vector<float> vector;

  bool operator==(const FeatureEntry&) const = default;
};

struct FeatureBag {
  std::string slide_id;
  std::size_t dim = kL1Dim;
  std::vector<FeatureEntry> entries;

  bool operator==(const FeatureBag&) const = default;
};

/// Throws DimMismatch for ragged vectors, ShapeMismatch for duplicate grid
/// cells and NaNInGraph for non-finite values.
void validate(const FeatureBag& bag);

/// Sort entries by (grid_y, grid_x).
void sort_entries(FeatureBag& bag);

/// Binary embedding file: "WSIF", u32 version = 1, u32 dim, u64 count, then
/// per entry i32 grid_x, i32 grid_y and dim little-endian f32 values.
void export_embeddings(const FeatureBag& bag, const std::filesystem::path& path);

/// `slide_id` defaults to the file stem. When `expected_dim` is set a
/// different stored dim raises DimMismatch.
FeatureBag import_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_dim = std::nullopt,
                             std::optional<std::string> slide_id = std::nullopt);

/// 16x16 token grid of one level-2 region. Slot (i, j), stored at index
/// j * 16 + i, holds the level-1 cell (16 * region_x + i, 16 * region_y + j).
struct RegionGrid {
  std::int32_t region_x = 0;
  std::int32_t region_y = 0;
  std::size_t dim = kL1Dim;
  /// kRegionSlots x dim, zero for absent slots.
  std::vector<float> tokens;
  std::array<std::uint8_t, kRegionSlots> present{};

  int present_count() const;
  const float* token(int slot) const { return tokens.data() + static_cast<std::size_t>(slot) * dim; }
  float* token(int slot) { return tokens.data() + static_cast<std::size_t>(slot) * dim; }
  bool operator==(const RegionGrid&) const = default;
};

RegionGrid empty_region(std::int32_t region_x, std::int32_t region_y, std::size_t dim);

/// Partition by (floor(grid_x / 16), floor(grid_y / 16)), sorted by region
/// (y, x); regions with fewer than `min_presence` tokens are dropped.
std::vector<RegionGrid> group_into_regions(const FeatureBag& bag, int min_presence = 1);

/// Present tokens back as entries, sorted by (grid_y, grid_x).
std::vector<FeatureEntry> flatten(const std::vector<RegionGrid>& regions);

}  // namespace wsi::features

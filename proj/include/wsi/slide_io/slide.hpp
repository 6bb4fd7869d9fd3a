#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "wsi/slide_io/image.hpp"

namespace wsi::slide {

struct PyramidLevel {
  std::int64_t width = 0;
  std::int64_t height = 0;
  double downsample = 1.0;
};

/// Read-only multi-resolution slide. Region reads are pure and safe to issue
/// from several threads at once.
class SlidePyramid {
 public:
  virtual ~SlidePyramid() = default;

  const std::vector<PyramidLevel>& levels() const { return levels_; }
  double mpp() const { return mpp_; }
  std::int64_t width() const { return levels_.front().width; }
  std::int64_t height() const { return levels_.front().height; }

  /// Pixels of [x, x+w) x [y, y+h) in the coordinates of `level`. Area
  /// outside the level raster is white.
  RgbImage read_region(std::size_t level, std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) const;

 protected:
  SlidePyramid(std::vector<PyramidLevel> levels, double mpp);

  /// Fill `out` (pre-filled white, placed at (x, y)) with in-bounds pixels.
  virtual void fill_region(std::size_t level, std::int64_t x, std::int64_t y, RgbImage& out) const = 0;

 private:
  std::vector<PyramidLevel> levels_;
  double mpp_;
};

using SlidePtr = std::shared_ptr<const SlidePyramid>;

/// Level rasters held in memory; level k is the box-downsample of level 0.
SlidePtr make_memory_pyramid(RgbImage level0, double mpp, const std::vector<int>& downsamples = {1});

/// Open a pyramid directory (meta.json + tiles) or a single P6 raster. A plain
/// raster needs `declared_mpp` or a `<file>.json` sidecar with {"mpp": ...}.
SlidePtr open_pyramid(const std::filesystem::path& path, std::optional<double> declared_mpp = std::nullopt);

/// Write `level0` as a tiled pyramid directory.
void write_pyramid(const RgbImage& level0, double mpp, const std::filesystem::path& dir, int tile_size = 512,
                   const std::vector<int>& downsamples = {1, 2, 4});

/// Single-level view at `target_mpp`, area-averaging from the finest suitable
/// source level. Identity when the resolutions already agree.
SlidePtr rescale_to_mpp(const SlidePtr& slide, double target_mpp = 0.5);

/// Full level raster (convenience for desk-scale slides).
RgbImage read_level(const SlidePyramid& slide, std::size_t level = 0);

}  // namespace wsi::slide

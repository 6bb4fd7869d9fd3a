#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>

#include "wsi/slide_io/image.hpp"
#include "wsi/slide_io/slide.hpp"

namespace wsi::preprocess {

/// Binary tissue grid. Cell (i, j) covers level-0 pixels
/// [i*factor, (i+1)*factor) x [j*factor, (j+1)*factor).
struct TissueMask {
  slide::GrayImage grid;  // values 0/1
  int factor = 1;
  std::int64_t slide_width = 0;
  std::int64_t slide_height = 0;

  /// Number of tissue cells.
  std::int64_t coverage() const;
  bool operator==(const TissueMask&) const = default;
};

struct TissueMaskOptions {
  /// Overview long side limit; the overview factor is the smallest power of
  /// two that brings the slide under it.
  std::int64_t max_overview = 4096;
  /// When the lower Otsu class has mean saturation above this, the overview
  /// holds no background and this value becomes the threshold.
  int background_saturation = 25;
};

/// HSV saturation scaled to 0..255.
slide::GrayImage saturation(const slide::RgbImage& image);

/// Otsu threshold over a 256-bin histogram: the t maximizing between-class
/// variance of {v <= t} vs {v > t}; the smallest such t on ties.
int otsu_threshold(const std::array<std::uint64_t, 256>& histogram);

/// 3x3 majority filter on a 0/1 grid with edge replication.
slide::GrayImage median3x3(const slide::GrayImage& binary);

/// Smallest power of two f with max(width, height) / f <= max_overview.
int overview_factor(std::int64_t width, std::int64_t height, std::int64_t max_overview = 4096);

/// Downsampled copy of level 0 whose long side is at most `max_side`,
/// built from the coarsest stored level that divides the factor. Returns the
/// image and its factor relative to level 0.
std::pair<slide::RgbImage, int> read_overview(const slide::SlidePyramid& slide, std::int64_t max_side);

/// Throws EmptySlide for a slide without pixels.
TissueMask compute_tissue_mask(const slide::SlidePyramid& slide, const TissueMaskOptions& options = {});

/// Mask as P5 (0/255) plus `<path>.json` with {factor, width, height}.
void write_mask(const std::filesystem::path& path, const TissueMask& mask);
TissueMask read_mask(const std::filesystem::path& path);

}  // namespace wsi::preprocess

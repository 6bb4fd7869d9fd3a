#pragma once

#include <array>
#include <filesystem>

#include "wsi/slide_io/image.hpp"

namespace wsi::preprocess {

using Vec3 = std::array<double, 3>;

/// Haematoxylin and eosin optical-density unit vectors with the 99th
/// percentile concentration of each stain.
struct StainMatrix {
  Vec3 hematoxylin{};
  Vec3 eosin{};
  std::array<double, 2> max_concentrations{};
};

struct MacenkoOptions {
  /// Pixels with OD norm below this are treated as background.
  double beta = 0.15;
  /// Percentile (in percent) of the extreme projected angles.
  double alpha = 1.0;
  std::size_t min_pixels = 1000;
  /// Fits whose two extreme directions are closer than this are single-stain.
  double min_separation_deg = 5.0;
};

/// -log10((I + 1) / 256).
double optical_density(std::uint8_t intensity);

/// Linear-interpolated percentile (p in [0, 100]) of unsorted values.
double percentile(std::vector<double> values, double p);

/// Throws InsufficientStain or DegenerateStain.
StainMatrix macenko_fit(const slide::RgbImage& pixels, const MacenkoOptions& options = {});

/// Re-express `image` in the reference stain basis. Pixels with OD norm below
/// beta are copied unchanged.
slide::RgbImage macenko_normalize(const slide::RgbImage& image, const StainMatrix& fitted,
                                  const StainMatrix& reference, const MacenkoOptions& options = {});

/// Fit `image`, falling back to `reference` when the fit fails. `used_fallback`
/// reports which happened.
StainMatrix fit_or_reference(const slide::RgbImage& image, const StainMatrix& reference, bool* used_fallback = nullptr,
                             const MacenkoOptions& options = {});

/// Angle between two 3-vectors in degrees.
double angle_deg(const Vec3& a, const Vec3& b);

void save_stain_matrix(const std::filesystem::path& path, const StainMatrix& matrix);
StainMatrix load_stain_matrix(const std::filesystem::path& path);

}  // namespace wsi::preprocess

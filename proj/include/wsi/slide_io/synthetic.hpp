#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wsi/slide_io/image.hpp"

namespace wsi::slide {

struct Point {
  double x = 0;
  double y = 0;
};

using Polygon = std::vector<Point>;

enum class Motif { A, B };
enum class LabelRule { LocalPresence, SpatialArrangement };

std::string to_string(Motif motif);
std::string to_string(LabelRule rule);
Motif motif_from_string(const std::string& name);
LabelRule label_rule_from_string(const std::string& name);

struct MotifPlacement {
  Motif motif = Motif::A;
  Point center;
  /// Box side is 256 * scale pixels.
  double scale = 0.75;
};

struct SyntheticSlideSpec {
  std::int64_t width = 1024;
  std::int64_t height = 1024;
  std::vector<Polygon> tissue;
  std::vector<MotifPlacement> motifs;
  LabelRule rule = LabelRule::LocalPresence;
  int label = 0;
  /// Multipliers on haematoxylin / eosin concentrations.
  double stain_h = 1.0;
  double stain_e = 1.0;
  double mpp = 0.5;
};

/// Unit optical-density vectors of the two chromophores used for rendering.
inline constexpr std::array<double, 3> kHematoxylinOd{0.651107825757, 0.701193043123, 0.290494260723};
inline constexpr std::array<double, 3> kEosinOd{0.070101721297, 0.991438629777, 0.110159847753};

/// 8-bit intensity for optical density `od` (inverse of -log10((I+1)/256)).
std::uint8_t od_to_intensity(double od);

/// Throws SpecInvalid unless dims are positive multiples of 256, polygons have
/// >= 3 vertices and every motif center lies inside tissue.
void validate(const SyntheticSlideSpec& spec);

/// Even-odd point-in-polygon test.
bool inside(const Polygon& polygon, Point p);
bool inside_any(const std::vector<Polygon>& polygons, Point p);

/// Binary raster of the tissue polygons sampled at pixel centers.
GrayImage rasterize_tissue(const std::vector<Polygon>& polygons, std::int64_t width, std::int64_t height);

/// Render the level-0 raster. Deterministic in (spec, seed).
RgbImage render_synthetic_slide(const SyntheticSlideSpec& spec, std::uint64_t seed);

struct SyntheticTruth {
  std::vector<Polygon> tissue;
  /// (motif, x, y, w, h) in level-0 pixels.
  struct Box {
    Motif motif;
    std::int64_t x, y, w, h;
  };
  std::vector<Box> motifs;
  int label = 0;
  LabelRule rule = LabelRule::LocalPresence;
};

SyntheticTruth truth_of(const SyntheticSlideSpec& spec);
SyntheticTruth read_truth(const std::filesystem::path& path);

/// Write a pyramid directory plus `truth.json` into `dir`.
void generate_synthetic_slide(const SyntheticSlideSpec& spec, std::uint64_t seed, const std::filesystem::path& dir,
                              int tile_size = 512);

/// A 256x256 all-tissue patch containing one motif (or none), centered.
RgbImage render_motif_patch(const Motif* motif, std::uint64_t seed, double stain_h = 1.0, double stain_e = 1.0);

struct DatasetPlan {
  LabelRule rule = LabelRule::LocalPresence;
  int slides = 64;
  std::int64_t width = 1024;
  std::int64_t height = 1024;
  /// Motifs of each kind per slide.
  int motifs_per_kind = 2;
  /// Motif box side as a fraction of a 256 px cell.
  double motif_scale = 0.75;
  /// Tissue outline vertices sit up to this many pixels inside the slide edge.
  double tissue_margin = 32.0;
  /// Per-slide stain multipliers are drawn from [1 - j, 1 + j].
  double stain_jitter = 0.15;
};

/// Balanced label assignment (alternating) with seeded layouts. Local-presence
/// positives hold A motifs and negatives the same number of B motifs, in
/// random cells. Spatial-arrangement slides hold the same motifs; positives put
/// A in the left half of the slide and B in the right half, negatives the
/// mirror image, never in the outermost columns.
std::vector<SyntheticSlideSpec> plan_dataset(const DatasetPlan& plan, std::uint64_t seed);

}  // namespace wsi::slide

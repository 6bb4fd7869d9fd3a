#include "wsi/preprocess/tissue_mask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "wsi/error.hpp"

namespace wsi::preprocess {

using slide::GrayImage;
using slide::RgbImage;

std::int64_t TissueMask::coverage() const {
  return std::count_if(grid.pixels.begin(), grid.pixels.end(), [](std::uint8_t v) { return v != 0; });
}

GrayImage saturation(const RgbImage& image) {
  GrayImage out(image.width, image.height);
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const std::uint8_t r = image.pixels[3 * i], g = image.pixels[3 * i + 1], b = image.pixels[3 * i + 2];
    const int mx = std::max({r, g, b}), mn = std::min({r, g, b});
    out.pixels[i] = mx == 0 ? 0 : static_cast<std::uint8_t>((255 * (mx - mn) + mx / 2) / mx);
  }
  return out;
}

int otsu_threshold(const std::array<std::uint64_t, 256>& histogram) {
  double total = 0, total_sum = 0;
  for (int v = 0; v < 256; ++v) {
    total += static_cast<double>(histogram[v]);
    total_sum += static_cast<double>(v) * static_cast<double>(histogram[v]);
  }
  int best_t = 0;
  double best = -1;
  double w0 = 0, sum0 = 0;
  for (int t = 0; t < 256; ++t) {
    w0 += static_cast<double>(histogram[t]);
    sum0 += static_cast<double>(t) * static_cast<double>(histogram[t]);
    const double w1 = total - w0;
    double between = 0;
    if (w0 > 0 && w1 > 0) {
      const double m0 = sum0 / w0, m1 = (total_sum - sum0) / w1;
      between = w0 * w1 * (m0 - m1) * (m0 - m1);
    }
    if (between > best) {
      best = between;
      best_t = t;
    }
  }
  return best_t;
}

GrayImage median3x3(const GrayImage& binary) {
  GrayImage out(binary.width, binary.height);
  for (std::int64_t y = 0; y < binary.height; ++y)
    for (std::int64_t x = 0; x < binary.width; ++x) {
      int votes = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::int64_t sx = std::clamp<std::int64_t>(x + dx, 0, binary.width - 1);
          const std::int64_t sy = std::clamp<std::int64_t>(y + dy, 0, binary.height - 1);
          votes += binary.get(sx, sy) != 0;
        }
      out.set(x, y, votes >= 5 ? 1 : 0);
    }
  return out;
}

int overview_factor(std::int64_t width, std::int64_t height, std::int64_t max_overview) {
  const std::int64_t side = std::max(width, height);
  int factor = 1;
  while ((side + factor - 1) / factor > max_overview) factor *= 2;
  return factor;
}

std::pair<RgbImage, int> read_overview(const slide::SlidePyramid& slide, std::int64_t max_side) {
  const int factor = overview_factor(slide.width(), slide.height(), max_side);
  std::size_t level = 0;
  int level_ds = 1;
  for (std::size_t i = 0; i < slide.levels().size(); ++i) {
    const double ds = slide.levels()[i].downsample;
    const auto ids = static_cast<int>(std::lround(ds));
    if (std::abs(ds - ids) < 1e-9 && ids <= factor && factor % ids == 0) {
      level = i;
      level_ds = ids;
    }
  }
  return {slide::box_downsample(slide::read_level(slide, level), factor / level_ds), factor};
}

TissueMask compute_tissue_mask(const slide::SlidePyramid& slide, const TissueMaskOptions& options) {
  if (slide.width() <= 0 || slide.height() <= 0) fail(ErrorCode::EmptySlide, "slide has no pixels");
  const auto [overview, factor] = read_overview(slide, options.max_overview);
  const GrayImage sat = saturation(overview);

  std::array<std::uint64_t, 256> hist{};
  for (auto v : sat.pixels) ++hist[v];
  int threshold = otsu_threshold(hist);
  std::uint64_t low_count = 0, low_sum = 0;
  for (int v = 0; v <= threshold; ++v) {
    low_count += hist[v];
    low_sum += static_cast<std::uint64_t>(v) * hist[v];
  }
  if (low_count > 0 && static_cast<double>(low_sum) / static_cast<double>(low_count) > options.background_saturation)
    threshold = options.background_saturation;

  GrayImage binary(sat.width, sat.height);
  for (std::size_t i = 0; i < sat.pixels.size(); ++i) binary.pixels[i] = sat.pixels[i] > threshold ? 1 : 0;

  TissueMask mask;
  mask.grid = median3x3(binary);
  mask.factor = factor;
  mask.slide_width = slide.width();
  mask.slide_height = slide.height();
  return mask;
}

void write_mask(const std::filesystem::path& path, const TissueMask& mask) {
  GrayImage scaled = mask.grid;
  for (auto& v : scaled.pixels) v = v ? 255 : 0;
  slide::write_pgm(path, scaled);
  nlohmann::json j{{"factor", mask.factor}, {"width", mask.slide_width}, {"height", mask.slide_height}};
  std::ofstream os(path.string() + ".json");
  os << j.dump(2) << '\n';
}

TissueMask read_mask(const std::filesystem::path& path) {
  TissueMask mask;
  mask.grid = slide::read_pgm(path);
  for (auto& v : mask.grid.pixels) v = v >= 128 ? 1 : 0;
  std::ifstream is(path.string() + ".json");
  if (!is) fail(ErrorCode::MissingMetadata, "no sidecar for mask " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    mask.factor = j.at("factor").get<int>();
    mask.slide_width = j.at("width").get<std::int64_t>();
    mask.slide_height = j.at("height").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MissingMetadata, path.string() + ".json: " + e.what());
  }
  if (mask.factor < 1 || mask.grid.width != (mask.slide_width + mask.factor - 1) / mask.factor ||
      mask.grid.height != (mask.slide_height + mask.factor - 1) / mask.factor)
    fail(ErrorCode::MissingMetadata, path.string() + ": mask grid does not match sidecar dimensions");
  return mask;
}

}  // namespace wsi::preprocess

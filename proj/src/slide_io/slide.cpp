#include "wsi/slide_io/slide.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>

#include "json.hpp"

#include "wsi/error.hpp"

namespace wsi::slide {

namespace fs = std::filesystem;
using nlohmann::json;

SlidePyramid::SlidePyramid(std::vector<PyramidLevel> levels, double mpp) : levels_(std::move(levels)), mpp_(mpp) {
  if (levels_.empty()) fail(ErrorCode::MissingMetadata, "pyramid without levels");
  if (!(mpp_ > 0)) fail(ErrorCode::MissingMetadata, "mpp must be positive");
  if (levels_.front().downsample != 1.0) fail(ErrorCode::MissingMetadata, "level 0 must have downsample 1");
  for (std::size_t i = 1; i < levels_.size(); ++i)
    if (!(levels_[i].downsample > levels_[i - 1].downsample))
      fail(ErrorCode::MissingMetadata, "downsample factors must strictly increase");
}

RgbImage SlidePyramid::read_region(std::size_t level, std::int64_t x, std::int64_t y, std::int64_t w,
                                   std::int64_t h) const {
  if (level >= levels_.size()) fail(ErrorCode::InvalidConfig, "level " + std::to_string(level) + " out of range");
  if (w < 0 || h < 0) fail(ErrorCode::InvalidConfig, "negative region size");
  RgbImage out(w, h);
  const auto& lv = levels_[level];
  if (x >= lv.width || y >= lv.height || x + w <= 0 || y + h <= 0 || w == 0 || h == 0) return out;
  fill_region(level, x, y, out);
  return out;
}

namespace {

std::vector<PyramidLevel> derive_levels(std::int64_t width, std::int64_t height, const std::vector<double>& ds) {
  std::vector<PyramidLevel> levels;
  for (double d : ds) {
    levels.push_back({static_cast<std::int64_t>(std::ceil(static_cast<double>(width) / d - 1e-9)),
                      static_cast<std::int64_t>(std::ceil(static_cast<double>(height) / d - 1e-9)), d});
  }
  return levels;
}

/// Copy the overlap of `src` (placed at (sx, sy)) into `out` (placed at (ox, oy)).
void blit(const RgbImage& src, std::int64_t sx, std::int64_t sy, RgbImage& out, std::int64_t ox, std::int64_t oy) {
  const std::int64_t x0 = std::max(sx, ox), x1 = std::min(sx + src.width, ox + out.width);
  const std::int64_t y0 = std::max(sy, oy), y1 = std::min(sy + src.height, oy + out.height);
  if (x0 >= x1 || y0 >= y1) return;
  for (std::int64_t y = y0; y < y1; ++y) {
    std::copy_n(src.pixels.begin() + static_cast<std::ptrdiff_t>(src.offset(x0 - sx, y - sy)), 3 * (x1 - x0),
                out.pixels.begin() + static_cast<std::ptrdiff_t>(out.offset(x0 - ox, y - oy)));
  }
}

class MemoryPyramid final : public SlidePyramid {
 public:
  MemoryPyramid(std::vector<PyramidLevel> levels, double mpp, std::vector<RgbImage> rasters)
      : SlidePyramid(std::move(levels), mpp), rasters_(std::move(rasters)) {}

 protected:
  void fill_region(std::size_t level, std::int64_t x, std::int64_t y, RgbImage& out) const override {
    blit(rasters_[level], 0, 0, out, x, y);
  }

 private:
  std::vector<RgbImage> rasters_;
};

class DirectoryPyramid final : public SlidePyramid {
 public:
  DirectoryPyramid(std::vector<PyramidLevel> levels, double mpp, fs::path dir, std::int64_t tile_size)
      : SlidePyramid(std::move(levels), mpp), dir_(std::move(dir)), tile_size_(tile_size) {}

 protected:
  void fill_region(std::size_t level, std::int64_t x, std::int64_t y, RgbImage& out) const override {
    const auto& lv = levels()[level];
    const std::int64_t c0 = std::max<std::int64_t>(x, 0) / tile_size_;
    const std::int64_t c1 = (std::min(x + out.width, lv.width) - 1) / tile_size_;
    const std::int64_t r0 = std::max<std::int64_t>(y, 0) / tile_size_;
    const std::int64_t r1 = (std::min(y + out.height, lv.height) - 1) / tile_size_;
    for (std::int64_t r = r0; r <= r1; ++r)
      for (std::int64_t c = c0; c <= c1; ++c) {
        auto tile = load_tile(level, c, r);
        blit(*tile, c * tile_size_, r * tile_size_, out, x, y);
      }
  }

 private:
  std::shared_ptr<const RgbImage> load_tile(std::size_t level, std::int64_t col, std::int64_t row) const {
    const auto key = std::make_tuple(level, col, row);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const fs::path path = dir_ / ("L" + std::to_string(level) + "_X" + std::to_string(col) + "_Y" +
                                  std::to_string(row) + ".ppm");
    if (!fs::exists(path)) fail(ErrorCode::CorruptTile, "missing tile " + path.string());
    auto tile = std::make_shared<const RgbImage>(read_ppm(path));
    const auto& lv = levels()[level];
    const std::int64_t ew = std::min(tile_size_, lv.width - col * tile_size_);
    const std::int64_t eh = std::min(tile_size_, lv.height - row * tile_size_);
    if (tile->width != ew || tile->height != eh)
      fail(ErrorCode::CorruptTile, path.string() + ": expected " + std::to_string(ew) + "x" + std::to_string(eh));
    std::lock_guard lock(mutex_);
    if (cache_.size() >= kCacheTiles) {
      cache_.erase(order_.front());
      order_.pop_front();
    }
    if (cache_.emplace(key, tile).second) order_.push_back(key);
    return tile;
  }

  static constexpr std::size_t kCacheTiles = 64;
  using Key = std::tuple<std::size_t, std::int64_t, std::int64_t>;
  fs::path dir_;
  std::int64_t tile_size_;
  mutable std::mutex mutex_;
  mutable std::map<Key, std::shared_ptr<const RgbImage>> cache_;
  mutable std::deque<Key> order_;
};

class RescaledView final : public SlidePyramid {
 public:
  RescaledView(SlidePtr source, std::size_t source_level, double factor, double target_mpp)
      : SlidePyramid(view_levels(*source, factor, target_mpp), target_mpp),
        source_(std::move(source)),
        source_level_(source_level),
        factor_(factor / source_->levels()[source_level].downsample) {}

 protected:
  void fill_region(std::size_t, std::int64_t x, std::int64_t y, RgbImage& out) const override {
    if (std::abs(factor_ - 1.0) < 1e-9) {
      out = source_->read_region(source_level_, x, y, out.width, out.height);
      clear_outside(out, x, y);
      return;
    }
    const double f = factor_;
    const auto sx0 = static_cast<std::int64_t>(std::floor(static_cast<double>(x) * f));
    const auto sy0 = static_cast<std::int64_t>(std::floor(static_cast<double>(y) * f));
    const auto sx1 = static_cast<std::int64_t>(std::ceil(static_cast<double>(x + out.width) * f));
    const auto sy1 = static_cast<std::int64_t>(std::ceil(static_cast<double>(y + out.height) * f));
    const RgbImage src = source_->read_region(source_level_, sx0, sy0, sx1 - sx0, sy1 - sy0);

    const auto cols = coverage(x, out.width, sx0, src.width);
    const auto rows = coverage(y, out.height, sy0, src.height);
    const double area = f * f;
    for (std::int64_t v = 0; v < out.height; ++v) {
      for (std::int64_t u = 0; u < out.width; ++u) {
        double acc[3] = {0, 0, 0};
        for (const auto& [sy, wy] : rows[static_cast<std::size_t>(v)])
          for (const auto& [sx, wx] : cols[static_cast<std::size_t>(u)]) {
            const std::size_t o = src.offset(sx, sy);
            const double w = wx * wy;
            acc[0] += w * src.pixels[o];
            acc[1] += w * src.pixels[o + 1];
            acc[2] += w * src.pixels[o + 2];
          }
        for (int c = 0; c < 3; ++c) {
          const double value = std::clamp(std::round(acc[c] / area), 0.0, 255.0);
          out.pixels[out.offset(u, v) + c] = static_cast<std::uint8_t>(value);
        }
      }
    }
    clear_outside(out, x, y);
  }

 private:
  static std::vector<PyramidLevel> view_levels(const SlidePyramid& source, double factor, double) {
    return derive_levels(static_cast<std::int64_t>(std::ceil(static_cast<double>(source.width()) / factor - 1e-9)),
                         static_cast<std::int64_t>(std::ceil(static_cast<double>(source.height()) / factor - 1e-9)),
                         {1.0});
  }

  /// For each output index, the (source index relative to `src_origin`, overlap) pairs.
  std::vector<std::vector<std::pair<std::int64_t, double>>> coverage(std::int64_t start, std::int64_t count,
                                                                    std::int64_t src_origin,
                                                                    std::int64_t src_len) const {
    std::vector<std::vector<std::pair<std::int64_t, double>>> result(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
      const double a = static_cast<double>(start + i) * factor_;
      const double b = static_cast<double>(start + i + 1) * factor_;
      for (auto s = static_cast<std::int64_t>(std::floor(a)); static_cast<double>(s) < b; ++s) {
        const double overlap = std::min(b, static_cast<double>(s + 1)) - std::max(a, static_cast<double>(s));
        const std::int64_t rel = s - src_origin;
        if (overlap > 1e-12 && rel >= 0 && rel < src_len) result[static_cast<std::size_t>(i)].emplace_back(rel, overlap);
      }
    }
    return result;
  }

  /// View pixels past the view's own extent stay white.
  void clear_outside(RgbImage& out, std::int64_t x, std::int64_t y) const {
    for (std::int64_t v = 0; v < out.height; ++v)
      for (std::int64_t u = 0; u < out.width; ++u)
        if (x + u < 0 || y + v < 0 || x + u >= width() || y + v >= height()) out.set(u, v, kWhite);
  }

  SlidePtr source_;
  std::size_t source_level_;
  double factor_;
};

json read_json_file(const fs::path& path, ErrorCode code) {
  std::ifstream is(path);
  if (!is) fail(code, "cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    fail(code, path.string() + ": " + e.what());
  }
}

}  // namespace

SlidePtr make_memory_pyramid(RgbImage level0, double mpp, const std::vector<int>& downsamples) {
  std::vector<double> ds(downsamples.begin(), downsamples.end());
  auto levels = derive_levels(level0.width, level0.height, ds);
  std::vector<RgbImage> rasters;
  for (int d : downsamples) rasters.push_back(box_downsample(level0, d));
  return std::make_shared<MemoryPyramid>(std::move(levels), mpp, std::move(rasters));
}

SlidePtr open_pyramid(const fs::path& path, std::optional<double> declared_mpp) {
  if (fs::is_directory(path)) {
    const fs::path meta_path = path / "meta.json";
    if (!fs::exists(meta_path)) fail(ErrorCode::MissingMetadata, "no meta.json in " + path.string());
    const json meta = read_json_file(meta_path, ErrorCode::MissingMetadata);
    try {
      const auto width = meta.at("width").get<std::int64_t>();
      const auto height = meta.at("height").get<std::int64_t>();
      const auto mpp = meta.at("mpp").get<double>();
      const auto tile = meta.value("tile_size", std::int64_t{512});
      std::vector<double> ds;
      for (const auto& lv : meta.at("levels")) ds.push_back(lv.at("downsample").get<double>());
      if (width <= 0 || height <= 0 || tile <= 0) fail(ErrorCode::MissingMetadata, "non-positive dimensions");
      return std::make_shared<DirectoryPyramid>(derive_levels(width, height, ds), mpp, path, tile);
    } catch (const json::exception& e) {
      fail(ErrorCode::MissingMetadata, meta_path.string() + ": " + e.what());
    }
  }
  if (!fs::is_regular_file(path)) fail(ErrorCode::UnknownFormat, "no such slide " + path.string());
  if (!is_ppm(path)) fail(ErrorCode::UnknownFormat, path.string() + " is neither a pyramid directory nor a P6 raster");
  std::optional<double> mpp = declared_mpp;
  if (!mpp) {
    const fs::path sidecar = path.string() + ".json";
    if (!fs::exists(sidecar)) fail(ErrorCode::MissingMetadata, "no mpp declared for " + path.string());
    const json meta = read_json_file(sidecar, ErrorCode::MissingMetadata);
    if (!meta.contains("mpp") || !meta["mpp"].is_number()) fail(ErrorCode::MissingMetadata, sidecar.string());
    mpp = meta["mpp"].get<double>();
  }
  return make_memory_pyramid(read_ppm(path), *mpp);
}

void write_pyramid(const RgbImage& level0, double mpp, const fs::path& dir, int tile_size,
                   const std::vector<int>& downsamples) {
  if (downsamples.empty() || downsamples.front() != 1) fail(ErrorCode::InvalidConfig, "first downsample must be 1");
  fs::create_directories(dir);
  json meta;
  meta["width"] = level0.width;
  meta["height"] = level0.height;
  meta["mpp"] = mpp;
  meta["tile_size"] = tile_size;
  meta["levels"] = json::array();
  for (std::size_t level = 0; level < downsamples.size(); ++level) {
    meta["levels"].push_back({{"downsample", downsamples[level]}});
    const RgbImage raster = box_downsample(level0, downsamples[level]);
    for (std::int64_t row = 0; row * tile_size < raster.height; ++row)
      for (std::int64_t col = 0; col * tile_size < raster.width; ++col) {
        const std::int64_t w = std::min<std::int64_t>(tile_size, raster.width - col * tile_size);
        const std::int64_t h = std::min<std::int64_t>(tile_size, raster.height - row * tile_size);
        write_ppm(dir / ("L" + std::to_string(level) + "_X" + std::to_string(col) + "_Y" + std::to_string(row) +
                         ".ppm"),
                  crop(raster, col * tile_size, row * tile_size, w, h));
      }
  }
  std::ofstream os(dir / "meta.json");
  os << meta.dump(2) << '\n';
}

SlidePtr rescale_to_mpp(const SlidePtr& slide, double target_mpp) {
  if (target_mpp < slide->mpp() - 1e-12)
    fail(ErrorCode::UpsamplingRequired,
         "target " + std::to_string(target_mpp) + " finer than native " + std::to_string(slide->mpp()));
  const double factor = target_mpp / slide->mpp();
  if (std::abs(factor - 1.0) < 1e-9) return slide;
  std::size_t level = 0;
  for (std::size_t i = 0; i < slide->levels().size(); ++i)
    if (slide->levels()[i].downsample <= factor + 1e-9) level = i;
  return std::make_shared<RescaledView>(slide, level, factor, target_mpp);
}

RgbImage read_level(const SlidePyramid& slide, std::size_t level) {
  const auto& lv = slide.levels().at(level);
  return slide.read_region(level, 0, 0, lv.width, lv.height);
}

}  // namespace wsi::slide

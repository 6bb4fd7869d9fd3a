#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace wsi::slide {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};

/// Interleaved 8-bit RGB raster, row-major.
struct RgbImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::int64_t w, std::int64_t h, Rgb fill = kWhite);

  std::size_t offset(std::int64_t x, std::int64_t y) const {
    return 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
  }
  Rgb get(std::int64_t x, std::int64_t y) const {
    const std::size_t o = offset(x, y);
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
  }
  void set(std::int64_t x, std::int64_t y, Rgb c) {
    const std::size_t o = offset(x, y);
    pixels[o] = c[0];
    pixels[o + 1] = c[1];
    pixels[o + 2] = c[2];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }

  bool operator==(const RgbImage&) const = default;
};

struct GrayImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::int64_t w, std::int64_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w * h), fill) {}

  std::uint8_t get(std::int64_t x, std::int64_t y) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
  void set(std::int64_t x, std::int64_t y, std::uint8_t v) { pixels[static_cast<std::size_t>(y * width + x)] = v; }

  bool operator==(const GrayImage&) const = default;
};

/// Binary P6, maxval 255.
RgbImage read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
bool is_ppm(const std::filesystem::path& path);

/// Binary P5, maxval 255.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Copy a window; area outside the source is white.
RgbImage crop(const RgbImage& image, std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h);

/// Integer-factor box average with rounding. Output is ceil(size / factor);
/// partial edge blocks average only the pixels they contain.
RgbImage box_downsample(const RgbImage& image, int factor);

}  // namespace wsi::slide

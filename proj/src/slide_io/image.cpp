#include "wsi/slide_io/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <string>

#include "wsi/error.hpp"

namespace wsi::slide {

namespace {

// Reads the whitespace/comment separated header tokens of a PNM file.
std::string next_token(std::istream& is) {
  std::string token;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

struct PnmHeader {
  std::string magic;
  std::int64_t width = 0;
  std::int64_t height = 0;
};

PnmHeader read_header(std::istream& is, const std::filesystem::path& path, const char* expected, ErrorCode code) {
  PnmHeader h;
  h.magic = next_token(is);
  if (h.magic != expected) fail(code, path.string() + ": expected " + expected + " raster");
  try {
    h.width = std::stoll(next_token(is));
    h.height = std::stoll(next_token(is));
    const int maxval = std::stoi(next_token(is));
    if (maxval != 255) fail(code, path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    fail(code, path.string() + ": malformed header");
  }
  if (h.width <= 0 || h.height <= 0) fail(code, path.string() + ": empty raster");
  return h;
}

}  // namespace

RgbImage::RgbImage(std::int64_t w, std::int64_t h, Rgb fill) : width(w), height(h) {
  pixels.resize(3 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill[0];
    pixels[i + 1] = fill[1];
    pixels[i + 2] = fill[2];
  }
}

RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::CorruptTile, "cannot open " + path.string());
  const PnmHeader h = read_header(is, path, "P6", ErrorCode::CorruptTile);
  RgbImage image;
  image.width = h.width;
  image.height = h.height;
  image.pixels.resize(3 * static_cast<std::size_t>(h.width * h.height));
  if (!is.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size())))
    fail(ErrorCode::CorruptTile, path.string() + ": truncated pixel data");
  return image;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  if (!os) fail(ErrorCode::Io, "failed writing " + path.string());
}

bool is_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[2] = {};
  return is.read(magic, 2) && magic[0] == 'P' && magic[1] == '6';
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open " + path.string());
  const PnmHeader h = read_header(is, path, "P5", ErrorCode::UnknownFormat);
  GrayImage image(h.width, h.height);
  if (!is.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size())))
    fail(ErrorCode::TruncatedFile, path.string() + ": truncated pixel data");
  return image;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

RgbImage crop(const RgbImage& image, std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h) {
  RgbImage out(w, h);
  const std::int64_t x0 = std::max<std::int64_t>(x, 0), x1 = std::min(x + w, image.width);
  const std::int64_t y0 = std::max<std::int64_t>(y, 0), y1 = std::min(y + h, image.height);
  if (x0 >= x1) return out;
  for (std::int64_t yy = y0; yy < y1; ++yy) {
    std::copy_n(image.pixels.begin() + static_cast<std::ptrdiff_t>(image.offset(x0, yy)), 3 * (x1 - x0),
                out.pixels.begin() + static_cast<std::ptrdiff_t>(out.offset(x0 - x, yy - y)));
  }
  return out;
}

RgbImage box_downsample(const RgbImage& image, int factor) {
  if (factor < 1) fail(ErrorCode::InvalidConfig, "downsample factor must be >= 1");
  if (factor == 1) return image;
  const std::int64_t ow = (image.width + factor - 1) / factor, oh = (image.height + factor - 1) / factor;
  RgbImage out(ow, oh);
  std::vector<std::uint32_t> acc(3 * static_cast<std::size_t>(ow));
  std::vector<std::uint32_t> count(static_cast<std::size_t>(ow));
  for (std::int64_t oy = 0; oy < oh; ++oy) {
    std::fill(acc.begin(), acc.end(), 0u);
    std::fill(count.begin(), count.end(), 0u);
    const std::int64_t y_end = std::min<std::int64_t>((oy + 1) * factor, image.height);
    for (std::int64_t y = oy * factor; y < y_end; ++y) {
      const std::uint8_t* row = image.pixels.data() + image.offset(0, y);
      for (std::int64_t x = 0; x < image.width; ++x) {
        const std::size_t ox = static_cast<std::size_t>(x / factor);
        acc[3 * ox] += row[3 * x];
        acc[3 * ox + 1] += row[3 * x + 1];
        acc[3 * ox + 2] += row[3 * x + 2];
        count[ox] += 1;
      }
    }
    for (std::int64_t ox = 0; ox < ow; ++ox) {
      const std::uint32_t n = count[static_cast<std::size_t>(ox)];
      for (int c = 0; c < 3; ++c)
        out.pixels[out.offset(ox, oy) + c] = static_cast<std::uint8_t>((acc[3 * ox + c] + n / 2) / n);
    }
  }
  return out;
}

}  // namespace wsi::slide

#include "wsi/features/toy_encoder.hpp"

#include <cmath>

#include "wsi/error.hpp"
#include "wsi/rng.hpp"

namespace wsi::features {

namespace {
constexpr int kGray = 32;
constexpr int kProjections = 128;

void normalize_block(double* v, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  if (s <= 0) return;
  const double inv = 1.0 / std::sqrt(s);
  for (std::size_t i = 0; i < n; ++i) v[i] *= inv;
}
}  // namespace

ToyEncoder::ToyEncoder(std::uint64_t seed) : projection_(static_cast<std::size_t>(kProjections) * kGray * kGray) {
  Rng rng(mix_seed(seed, 0x70e));
  for (auto& w : projection_) w = rng.normal() / kGray;
}

std::vector<float> ToyEncoder::encode(const slide::RgbImage& patch) const {
  if (patch.width != kPatchSize || patch.height != kPatchSize)
    fail(ErrorCode::WrongPatchSize, "patch is " + std::to_string(patch.width) + "x" + std::to_string(patch.height) +
                                        ", expected 256x256");
  std::vector<double> out(kDim, 0.0);
  double* means = out.data();            // 192
  double* histogram = out.data() + 192;  // 64
  double* projected = out.data() + 256;  // 128

  // Box means over 32x32 blocks and a 4x4 grayscale grid per block for the projections.
  std::vector<double> gray(kGray * kGray, 0.0);
  for (std::int64_t y = 0; y < kPatchSize; ++y) {
    const std::uint8_t* row = patch.pixels.data() + patch.offset(0, y);
    for (std::int64_t x = 0; x < kPatchSize; ++x) {
      const std::uint8_t r = row[3 * x], g = row[3 * x + 1], b = row[3 * x + 2];
      double* m = means + 3 * ((y / 32) * 8 + x / 32);
      m[0] += r;
      m[1] += g;
      m[2] += b;
      histogram[(r >> 6) * 16 + (g >> 6) * 4 + (b >> 6)] += 1;
      gray[static_cast<std::size_t>((y / 8) * kGray + x / 8)] += (r + g + b) / 3.0;
    }
  }
  for (int i = 0; i < 192; ++i) means[i] /= 32.0 * 32.0 * 255.0;
  for (auto& g : gray) g /= 64.0 * 255.0;
  double gray_mean = 0;
  for (double g : gray) gray_mean += g;
  gray_mean /= static_cast<double>(gray.size());
  for (auto& g : gray) g -= gray_mean;
  for (int k = 0; k < kProjections; ++k) {
    const double* w = projection_.data() + static_cast<std::size_t>(k) * gray.size();
    double s = 0;
    for (std::size_t i = 0; i < gray.size(); ++i) s += w[i] * gray[i];
    projected[k] = s;
  }

  normalize_block(means, 192);
  normalize_block(histogram, 64);
  normalize_block(projected, 128);
  normalize_block(out.data(), kDim);
  return {out.begin(), out.end()};
}

std::vector<float> toy_encode(const slide::RgbImage& patch, const EncoderSpec& spec) {
  if (spec.kind != EncoderKind::Toy) fail(ErrorCode::InvalidConfig, "toy_encode needs a toy encoder spec");
  if (spec.dim != ToyEncoder::kDim) fail(ErrorCode::InvalidConfig, "toy encoder produces 384-d features");
  return ToyEncoder(spec.seed).encode(patch);
}

}  // namespace wsi::features

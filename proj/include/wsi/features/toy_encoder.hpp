#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsi/slide_io/image.hpp"

namespace wsi::features {

enum class EncoderKind { Toy, Imported };

struct EncoderSpec {
  EncoderKind kind = EncoderKind::Toy;
  std::size_t dim = 384;
  std::uint64_t seed = 0;
  /// Free text naming the data that trained an imported encoder.
  std::string provenance = "toy: fixed seeded projections, never trained";
};

/// Fixed, seeded stand-in for a pre-trained patch encoder. Output blocks:
/// 8x8x3 box means (192), 4x4x4 joint colour histogram (64) and 128 random
/// projections of the mean-centred 32x32 grayscale patch. Each block is
/// scaled to unit norm before the whole vector is normalized, so no block
/// dominates by construction.
class ToyEncoder {
 public:
  static constexpr std::int64_t kPatchSize = 256;
  static constexpr std::size_t kDim = 384;

  explicit ToyEncoder(std::uint64_t seed = 0);

  /// Throws WrongPatchSize unless the patch is 256x256.
  std::vector<float> encode(const slide::RgbImage& patch) const;

 private:
  std::vector<double> projection_;  // 128 x 1024
};

/// One-off encode; throws InvalidConfig unless spec.kind is Toy with dim 384.
std::vector<float> toy_encode(const slide::RgbImage& patch, const EncoderSpec& spec);

}  // namespace wsi::features

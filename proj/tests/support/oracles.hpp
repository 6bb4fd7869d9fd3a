#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "wsi/preprocess/patches.hpp"
#include "wsi/preprocess/stain.hpp"
#include "wsi/preprocess/tissue_mask.hpp"
#include "wsi/rng.hpp"
#include "wsi/slide_io/image.hpp"

namespace wsi::testing {

/// O(n^2) pair counting: (concordant + 0.5 tied) / (pos * neg).
double brute_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// One-vs-rest brute_auc per class column, averaged.
double brute_macro_auc(const std::vector<double>& probs, std::size_t k, const std::vector<int>& labels);

/// All ordered pairs (i, j) with an event at i and times[i] < times[j].
double brute_cindex(const std::vector<double>& risks, const std::vector<double>& times,
                    const std::vector<bool>& events);

/// Foreground pixels of a window counted pixel by pixel on the mask
/// upsampled to level 0.
std::int64_t brute_tissue_pixels(const preprocess::TissueMask& mask, std::int64_t x, std::int64_t y,
                                 std::int64_t size);

/// Grid windows of `size` whose brute fraction passes `threshold`.
std::vector<std::pair<std::int64_t, std::int64_t>> brute_patches(const preprocess::TissueMask& mask,
                                                                 std::int64_t size, double threshold);

struct StainConstruction {
  preprocess::Vec3 h;
  preprocess::Vec3 e;
  slide::RgbImage image;
};

/// Pixels mixed from two random unit OD vectors (h bluer than e), with
/// pure-stain, mixed and background pixels, quantized to 8 bits.
StainConstruction make_stain_construction(Rng& rng, std::int64_t side = 128);

/// Mean absolute per-channel difference of two same-sized images.
double mean_abs_diff(const slide::RgbImage& a, const slide::RgbImage& b);

/// Plain Adam(W) on one scalar, written out longhand.
double scalar_adamw(double p, const std::vector<double>& grads, double lr, double beta1, double beta2, double eps,
                    double weight_decay);

}  // namespace wsi::testing

#include "wsi/features/feature_bag.hpp"

namespace wsi::testing {

/// Regions of `dim`-wide tokens drawn around a few prototypes, each region
/// dominated by one prototype, with random partial coverage.
std::vector<features::RegionGrid> toy_region_corpus(std::size_t count, std::size_t dim, std::uint64_t seed);

}  // namespace wsi::testing

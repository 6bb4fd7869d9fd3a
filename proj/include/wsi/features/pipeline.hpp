#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wsi/features/feature_bag.hpp"
#include "wsi/features/toy_encoder.hpp"
#include "wsi/preprocess/patches.hpp"
#include "wsi/preprocess/stain.hpp"
#include "wsi/preprocess/tissue_mask.hpp"
#include "wsi/slide_io/slide.hpp"

namespace wsi::features {

struct EmbedOptions {
  double target_mpp = 0.5;
  double l1_threshold = preprocess::kL1Threshold;
  double l2_threshold = preprocess::kL2Threshold;
  /// Stain normalization target; none disables normalization.
  std::optional<preprocess::StainMatrix> reference;
  /// Long side of the image the per-slide stain fit runs on.
  std::int64_t stain_fit_side = 2048;
  preprocess::TissueMaskOptions mask;
  preprocess::MacenkoOptions macenko;
  EncoderSpec encoder;
  int threads = 1;
};

struct EmbedResult {
  FeatureBag bag;
  std::vector<preprocess::PatchRecord> patches;
  preprocess::TissueMask mask;
  /// The slide's own stain fit failed and the reference basis was used.
  bool stain_fallback = false;
};

/// Rescale, mask, tile (level-1 patches inside kept level-2 regions),
/// normalize and encode one slide. Entries come out sorted by (y, x).
EmbedResult embed_slide(const slide::SlidePtr& slide, const std::string& slide_id, const EmbedOptions& options);

}  // namespace wsi::features

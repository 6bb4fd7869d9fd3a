#include "wsi/features/pipeline.hpp"

#include "wsi/error.hpp"
#include "wsi/parallel.hpp"

namespace wsi::features {

EmbedResult embed_slide(const slide::SlidePtr& source, const std::string& slide_id, const EmbedOptions& options) {
  if (options.encoder.kind != EncoderKind::Toy)
    fail(ErrorCode::InvalidConfig, "slides can only be embedded with the toy encoder; import other features");
  const slide::SlidePtr view = slide::rescale_to_mpp(source, options.target_mpp);

  EmbedResult result;
  result.mask = preprocess::compute_tissue_mask(*view, options.mask);
  result.patches = preprocess::extract_nested(result.mask, options.l2_threshold, options.l1_threshold);

  preprocess::StainMatrix fitted;
  if (options.reference) {
    const auto overview = preprocess::read_overview(*view, options.stain_fit_side).first;
    fitted = preprocess::fit_or_reference(overview, *options.reference, &result.stain_fallback, options.macenko);
  }

  const ToyEncoder encoder(options.encoder.seed);
  result.bag.slide_id = slide_id;
  result.bag.dim = ToyEncoder::kDim;
  result.bag.entries.resize(result.patches.size());
  parallel_for(result.patches.size(), options.threads, [&](std::size_t i) {
    const auto& rec = result.patches[i];
    slide::RgbImage patch = view->read_region(0, rec.x, rec.y, rec.size, rec.size);
    if (options.reference) patch = preprocess::macenko_normalize(patch, fitted, *options.reference, options.macenko);
    FeatureEntry& e = result.bag.entries[i];
    e.grid_x = static_cast<std::int32_t>(rec.x / preprocess::kL1Size);
    e.grid_y = static_cast<std::int32_t>(rec.y / preprocess::kL1Size);
    e.vector = encoder.encode(patch);
  });
  return result;
}

}  // namespace wsi::features

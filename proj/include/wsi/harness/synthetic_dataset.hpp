#pragma once

#include <cstdint>
#include <filesystem>

#include "wsi/features/pipeline.hpp"
#include "wsi/preprocess/stain.hpp"
#include "wsi/slide_io/synthetic.hpp"

namespace wsi::harness {

/// Seed of the stain-normalization reference tile.
inline constexpr std::uint64_t kReferenceTileSeed = 20240601;

/// Plain-tissue 256x256 tile the stain reference is fitted on.
slide::RgbImage reference_tile();
preprocess::StainMatrix reference_stain();

struct SyntheticDatasetOptions {
  slide::DatasetPlan plan;
  /// Write each slide's pyramid and truth under `slides/`; otherwise slides
  /// are embedded straight from memory and the manifest holds features only.
  bool write_slides = true;
  features::EmbedOptions embed = desk_embed_options();

  /// Desk-scale slides cover a small corner of one level-2 region, so the
  /// region threshold is lowered to keep it.
  static features::EmbedOptions desk_embed_options();
};

/// Render, embed and index a planned dataset into `dir`:
/// `manifest.json`, `features/<id>.wsif`, and optionally `slides/<id>/`.
/// Returns the manifest path.
std::filesystem::path build_synthetic_dataset(const SyntheticDatasetOptions& options, std::uint64_t seed,
                                              const std::filesystem::path& dir);

}  // namespace wsi::harness

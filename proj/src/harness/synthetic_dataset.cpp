#include "wsi/harness/synthetic_dataset.hpp"

#include <cstdio>

#include "wsi/features/feature_bag.hpp"
#include "wsi/rng.hpp"
#include "wsi/slide_io/manifest.hpp"

namespace wsi::harness {

slide::RgbImage reference_tile() { return slide::render_motif_patch(nullptr, kReferenceTileSeed); }

preprocess::StainMatrix reference_stain() { return preprocess::macenko_fit(reference_tile()); }

features::EmbedOptions SyntheticDatasetOptions::desk_embed_options() {
  features::EmbedOptions o;
  o.l2_threshold = 0.03;
  o.reference = reference_stain();
  return o;
}

std::filesystem::path build_synthetic_dataset(const SyntheticDatasetOptions& options, std::uint64_t seed,
                                              const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  if (options.write_slides) fs::create_directories(dir / "slides");

  const auto specs = slide::plan_dataset(options.plan, seed);
  std::vector<slide::SlideManifestEntry> entries;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "slide_%03zu", i);
    const std::uint64_t slide_seed = mix_seed(seed, 0x5000 + i);

    slide::SlidePtr slide;
    slide::SlideManifestEntry entry;
    entry.slide_id = id;
    entry.label = std::to_string(specs[i].label);
    if (options.write_slides) {
      const fs::path slide_dir = dir / "slides" / id;
      slide::generate_synthetic_slide(specs[i], slide_seed, slide_dir);
      slide = slide::open_pyramid(slide_dir);
      entry.path = fs::relative(slide_dir, dir).generic_string();
    } else {
      slide = slide::make_memory_pyramid(slide::render_synthetic_slide(specs[i], slide_seed), specs[i].mpp);
    }
    const auto result = features::embed_slide(slide, id, options.embed);
    const fs::path feature_path = dir / "features" / (std::string(id) + ".wsif");
    features::export_embeddings(result.bag, feature_path);
    entry.features = fs::relative(feature_path, dir).generic_string();
    entries.push_back(std::move(entry));
  }
  const fs::path manifest = dir / "manifest.json";
  slide::write_manifest(manifest, entries);
  return manifest;
}

}  // namespace wsi::harness

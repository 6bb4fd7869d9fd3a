#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace wsi::slide {

struct SlideManifestEntry {
  std::string slide_id;
  /// Slide pyramid or raster; relative paths resolve against the manifest's directory.
  std::string path;
  /// Class name as written (integers are kept in decimal form).
  std::string label;
  /// Dense class index assigned by `read_manifest`.
  int label_index = -1;
  std::optional<double> survival_time;
  std::optional<bool> event_observed;
  /// Precomputed level-1 embedding file, if any.
  std::optional<std::string> features;
};

struct Manifest {
  std::vector<SlideManifestEntry> entries;
  /// class index -> name.
  std::vector<std::string> classes;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& relative) const;
  bool has_survival() const;
};

/// Parse a JSON array of entries. Integer labels map to themselves (classes
/// 0..max); string labels map to indices in sorted name order. Throws
/// BadManifest on duplicate ids, half-present survival fields, missing keys.
Manifest read_manifest(const std::filesystem::path& path);
Manifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
void write_manifest(const std::filesystem::path& path, const std::vector<SlideManifestEntry>& entries);

}  // namespace wsi::slide

#include "wsi/slide_io/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "wsi/error.hpp"

namespace wsi::slide {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path Manifest::resolve(const std::string& relative) const {
  const fs::path p(relative);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

bool Manifest::has_survival() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.survival_time.has_value(); });
}

Manifest parse_manifest(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::BadManifest, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_array()) fail(ErrorCode::BadManifest, "manifest must be a JSON array");

  Manifest manifest;
  manifest.base_dir = base_dir;
  std::set<std::string> ids;
  bool integer_labels = true;
  for (const auto& item : j) {
    SlideManifestEntry e;
    try {
      e.slide_id = item.at("slide_id").get<std::string>();
      e.path = item.value("path", std::string{});
      const auto& label = item.at("label");
      if (label.is_number_integer()) {
        if (label.get<int>() < 0) fail(ErrorCode::BadManifest, e.slide_id + ": negative label");
        e.label = std::to_string(label.get<int>());
      } else {
        e.label = label.get<std::string>();
        integer_labels = false;
      }
      if (item.contains("survival_time")) e.survival_time = item["survival_time"].get<double>();
      if (item.contains("event_observed")) {
        const auto& ev = item["event_observed"];
        e.event_observed = ev.is_boolean() ? ev.get<bool>() : ev.get<int>() != 0;
      }
      if (item.contains("features")) e.features = item["features"].get<std::string>();
    } catch (const json::exception& ex) {
      fail(ErrorCode::BadManifest, std::string("malformed manifest entry: ") + ex.what());
    }
    if (e.slide_id.empty()) fail(ErrorCode::BadManifest, "empty slide_id");
    if (e.path.empty() && !e.features) fail(ErrorCode::BadManifest, e.slide_id + ": needs a path or features file");
    if (!ids.insert(e.slide_id).second) fail(ErrorCode::BadManifest, "duplicate slide_id " + e.slide_id);
    if (e.survival_time.has_value() != e.event_observed.has_value())
      fail(ErrorCode::BadManifest, e.slide_id + ": survival_time and event_observed must appear together");
    if (e.survival_time && !(*e.survival_time >= 0))
      fail(ErrorCode::BadManifest, e.slide_id + ": survival_time must be non-negative");
    manifest.entries.push_back(std::move(e));
  }

  if (integer_labels) {
    int max_label = -1;
    for (auto& e : manifest.entries) {
      e.label_index = std::stoi(e.label);
      max_label = std::max(max_label, e.label_index);
    }
    for (int c = 0; c <= max_label; ++c) manifest.classes.push_back(std::to_string(c));
  } else {
    std::set<std::string> names;
    for (const auto& e : manifest.entries) names.insert(e.label);
    manifest.classes.assign(names.begin(), names.end());
    for (auto& e : manifest.entries)
      e.label_index = static_cast<int>(
          std::lower_bound(manifest.classes.begin(), manifest.classes.end(), e.label) - manifest.classes.begin());
  }
  return manifest;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::BadManifest, "cannot open manifest " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest(ss.str(), path.parent_path());
}

void write_manifest(const fs::path& path, const std::vector<SlideManifestEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries) {
    json item;
    item["slide_id"] = e.slide_id;
    if (!e.path.empty()) item["path"] = e.path;
    const bool numeric = !e.label.empty() && std::all_of(e.label.begin(), e.label.end(), ::isdigit);
    if (numeric)
      item["label"] = std::stoi(e.label);
    else
      item["label"] = e.label;
    if (e.survival_time) item["survival_time"] = *e.survival_time;
    if (e.event_observed) item["event_observed"] = *e.event_observed;
    if (e.features) item["features"] = *e.features;
    j.push_back(std::move(item));
  }
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << j.dump(2) << '\n';
}

}  // namespace wsi::slide

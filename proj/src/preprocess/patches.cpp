#include "wsi/preprocess/patches.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "wsi/error.hpp"

namespace wsi::preprocess {

std::int64_t patch_size(PatchLevel level) { return level == PatchLevel::L1 ? kL1Size : kL2Size; }

const char* to_string(PatchLevel level) { return level == PatchLevel::L1 ? "L1" : "L2"; }

namespace {

/// Integer tissue area (in level-0 pixels) under the window.
std::int64_t tissue_area(const TissueMask& mask, std::int64_t x, std::int64_t y, std::int64_t size) {
  const std::int64_t f = mask.factor;
  const std::int64_t x0 = std::max<std::int64_t>(x, 0), y0 = std::max<std::int64_t>(y, 0);
  const std::int64_t x1 = std::min(x + size, mask.grid.width * f), y1 = std::min(y + size, mask.grid.height * f);
  if (x0 >= x1 || y0 >= y1) return 0;
  std::int64_t area = 0;
  for (std::int64_t cy = y0 / f; cy * f < y1; ++cy) {
    const std::int64_t oy = std::min(y1, (cy + 1) * f) - std::max(y0, cy * f);
    for (std::int64_t cx = x0 / f; cx * f < x1; ++cx) {
      if (!mask.grid.get(cx, cy)) continue;
      area += oy * (std::min(x1, (cx + 1) * f) - std::max(x0, cx * f));
    }
  }
  return area;
}

}  // namespace

double foreground_fraction(const TissueMask& mask, std::int64_t x, std::int64_t y, std::int64_t size) {
  return static_cast<double>(tissue_area(mask, x, y, size)) / static_cast<double>(size * size);
}

std::vector<PatchRecord> extract_patches(const TissueMask& mask, PatchLevel level, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) fail(ErrorCode::InvalidConfig, "threshold must lie in (0, 1]");
  const std::int64_t size = patch_size(level);
  std::vector<PatchRecord> records;
  for (std::int64_t y = 0; y < mask.slide_height; y += size)
    for (std::int64_t x = 0; x < mask.slide_width; x += size) {
      const double fraction = foreground_fraction(mask, x, y, size);
      if (fraction >= threshold) records.push_back({level, x, y, size, fraction});
    }
  return records;
}

std::vector<PatchRecord> extract_nested(const TissueMask& mask, double l2_threshold, double l1_threshold) {
  std::vector<PatchRecord> out;
  const auto regions = extract_patches(mask, PatchLevel::L2, l2_threshold);
  for (const auto& l1 : extract_patches(mask, PatchLevel::L1, l1_threshold)) {
    const bool kept = std::any_of(regions.begin(), regions.end(), [&](const PatchRecord& r) {
      return l1.x >= r.x && l1.x < r.x + r.size && l1.y >= r.y && l1.y < r.y + r.size;
    });
    if (kept) out.push_back(l1);
  }
  return out;
}

void write_patch_index(const std::filesystem::path& path, const std::vector<PatchRecord>& records) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os << "level,x,y,size,fg_fraction\n";
  os.precision(17);
  for (const auto& r : records) os << to_string(r.level) << ',' << r.x << ',' << r.y << ',' << r.size << ',' << r.fg_fraction << '\n';
}

std::vector<PatchRecord> read_patch_index(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::Io, "cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "level,x,y,size,fg_fraction") fail(ErrorCode::Io, path.string() + ": unexpected header");
  std::vector<PatchRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string level, field;
    PatchRecord r;
    std::getline(ss, level, ',');
    if (level != "L1" && level != "L2") fail(ErrorCode::Io, path.string() + ": bad level " + level);
    r.level = level == "L1" ? PatchLevel::L1 : PatchLevel::L2;
    try {
      std::getline(ss, field, ',');
      r.x = std::stoll(field);
      std::getline(ss, field, ',');
      r.y = std::stoll(field);
      std::getline(ss, field, ',');
      r.size = std::stoll(field);
      std::getline(ss, field, ',');
      r.fg_fraction = std::stod(field);
    } catch (const std::logic_error&) {
      fail(ErrorCode::Io, path.string() + ": malformed row '" + line + "'");
    }
    records.push_back(r);
  }
  return records;
}

}  // namespace wsi::preprocess

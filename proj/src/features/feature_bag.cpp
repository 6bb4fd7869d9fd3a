#include "wsi/features/feature_bag.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "wsi/binary_io.hpp"
#include "wsi/error.hpp"

namespace wsi::features {

namespace {
constexpr char kMagic[4] = {'W', 'S', 'I', 'F'};
constexpr std::uint32_t kVersion = 1;

std::int32_t floor_div(std::int32_t a, std::int32_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
}  // namespace

void validate(const FeatureBag& bag) {
  std::set<std::pair<std::int32_t, std::int32_t>> seen;
  for (const auto& e : bag.entries) {
    if (e.vector.size() != bag.dim)
      fail(ErrorCode::DimMismatch, bag.slide_id + ": entry of length " + std::to_string(e.vector.size()) +
                                       " in a bag of dim " + std::to_string(bag.dim));
    if (!seen.emplace(e.grid_x, e.grid_y).second)
      fail(ErrorCode::ShapeMismatch, bag.slide_id + ": duplicate grid cell (" + std::to_string(e.grid_x) + ", " +
                                         std::to_string(e.grid_y) + ")");
    if (!std::all_of(e.vector.begin(), e.vector.end(), [](float v) { return std::isfinite(v); }))
      fail(ErrorCode::NaNInGraph, bag.slide_id + ": non-finite feature value");
  }
}

void sort_entries(FeatureBag& bag) {
  std::sort(bag.entries.begin(), bag.entries.end(), [](const FeatureEntry& a, const FeatureEntry& b) {
    return std::tie(a.grid_y, a.grid_x) < std::tie(b.grid_y, b.grid_x);
  });
}

void export_embeddings(const FeatureBag& bag, const std::filesystem::path& path) {
  for (const auto& e : bag.entries)
    if (e.vector.size() != bag.dim) fail(ErrorCode::DimMismatch, "ragged feature bag " + bag.slide_id);
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string());
  os.write(kMagic, 4);
  io::write_le<std::uint32_t>(os, kVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(bag.dim));
  io::write_le<std::uint64_t>(os, bag.entries.size());
  for (const auto& e : bag.entries) {
    io::write_le<std::int32_t>(os, e.grid_x);
    io::write_le<std::int32_t>(os, e.grid_y);
    for (float v : e.vector) io::write_le<float>(os, v);
  }
  if (!os) fail(ErrorCode::Io, "failed writing " + path.string());
}

FeatureBag import_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_dim,
                             std::optional<std::string> slide_id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open " + path.string());
  char magic[4] = {};
  if (!is.read(magic, 4)) fail(ErrorCode::TruncatedFile, path.string() + ": missing header");
  if (!std::equal(magic, magic + 4, kMagic)) fail(ErrorCode::BadMagic, path.string() + ": not an embedding file");
  const auto version = io::read_le<std::uint32_t>(is, ErrorCode::TruncatedFile);
  if (version != kVersion) fail(ErrorCode::BadMagic, path.string() + ": unsupported version " + std::to_string(version));
  FeatureBag bag;
  bag.slide_id = slide_id.value_or(path.stem().string());
  bag.dim = io::read_le<std::uint32_t>(is, ErrorCode::TruncatedFile);
  if (expected_dim && *expected_dim != bag.dim)
    fail(ErrorCode::DimMismatch, path.string() + ": dim " + std::to_string(bag.dim) + ", expected " +
                                     std::to_string(*expected_dim));
  const auto count = io::read_le<std::uint64_t>(is, ErrorCode::TruncatedFile);

  // Guard the reservation against a corrupt count.
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(is.tellg() - here);
  is.seekg(here);
  const std::uint64_t entry_bytes = 8 + 4 * static_cast<std::uint64_t>(bag.dim);
  if (count > remaining / entry_bytes)
    fail(ErrorCode::TruncatedFile, path.string() + ": header promises " + std::to_string(count) + " entries");

  bag.entries.resize(count);
  for (auto& e : bag.entries) {
    e.grid_x = io::read_le<std::int32_t>(is, ErrorCode::TruncatedFile);
    e.grid_y = io::read_le<std::int32_t>(is, ErrorCode::TruncatedFile);
    e.vector.resize(bag.dim);
    for (auto& v : e.vector) v = io::read_le<float>(is, ErrorCode::TruncatedFile);
  }
  return bag;
}

int RegionGrid::present_count() const {
  return static_cast<int>(std::count(present.begin(), present.end(), std::uint8_t{1}));
}

RegionGrid empty_region(std::int32_t region_x, std::int32_t region_y, std::size_t dim) {
  RegionGrid r;
  r.region_x = region_x;
  r.region_y = region_y;
  r.dim = dim;
  r.tokens.assign(static_cast<std::size_t>(kRegionSlots) * dim, 0.0f);
  return r;
}

std::vector<RegionGrid> group_into_regions(const FeatureBag& bag, int min_presence) {
  std::map<std::pair<std::int32_t, std::int32_t>, RegionGrid> regions;  // keyed by (y, x)
  for (const auto& e : bag.entries) {
    if (e.vector.size() != bag.dim) fail(ErrorCode::DimMismatch, "ragged feature bag " + bag.slide_id);
    const std::int32_t rx = floor_div(e.grid_x, kRegionSide), ry = floor_div(e.grid_y, kRegionSide);
    auto it = regions.find({ry, rx});
    if (it == regions.end()) it = regions.emplace(std::make_pair(ry, rx), empty_region(rx, ry, bag.dim)).first;
    const int slot = (e.grid_y - ry * kRegionSide) * kRegionSide + (e.grid_x - rx * kRegionSide);
    RegionGrid& r = it->second;
    if (r.present[slot]) fail(ErrorCode::ShapeMismatch, bag.slide_id + ": duplicate grid cell");
    r.present[slot] = 1;
    std::copy(e.vector.begin(), e.vector.end(), r.token(slot));
  }
  std::vector<RegionGrid> out;
  for (auto& [key, r] : regions)
    if (r.present_count() >= min_presence) out.push_back(std::move(r));
  return out;
}

std::vector<FeatureEntry> flatten(const std::vector<RegionGrid>& regions) {
  std::vector<FeatureEntry> out;
  for (const auto& r : regions)
    for (int slot = 0; slot < kRegionSlots; ++slot) {
      if (!r.present[slot]) continue;
      FeatureEntry e;
      e.grid_x = r.region_x * kRegionSide + slot % kRegionSide;
      e.grid_y = r.region_y * kRegionSide + slot / kRegionSide;
      e.vector.assign(r.token(slot), r.token(slot) + r.dim);
      out.push_back(std::move(e));
    }
  std::sort(out.begin(), out.end(), [](const FeatureEntry& a, const FeatureEntry& b) {
    return std::tie(a.grid_y, a.grid_x) < std::tie(b.grid_y, b.grid_x);
  });
  return out;
}

}  // namespace wsi::features

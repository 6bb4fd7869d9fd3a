#include <cmath>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "wsi/features/feature_bag.hpp"
#include "wsi/features/pipeline.hpp"
#include "wsi/features/toy_encoder.hpp"
#include "wsi/rng.hpp"
#include "wsi/slide_io/synthetic.hpp"

using namespace wsi;
using namespace wsi::features;
using wsi::testing::code_of;
using wsi::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

FeatureBag random_bag(Rng& rng, std::size_t dim, const std::vector<std::pair<int, int>>& cells) {
  FeatureBag bag;
  bag.slide_id = "s";
  bag.dim = dim;
  for (auto [x, y] : cells) {
    FeatureEntry e{x, y, {}};
    for (std::size_t k = 0; k < dim; ++k) e.vector.push_back(static_cast<float>(rng.normal()));
    bag.entries.push_back(std::move(e));
  }
  return bag;
}

template <typename T>
void put(std::string& s, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  s.append(b, sizeof(T));
}

}  // namespace

TEST_CASE("toy encoder") {
  ToyEncoder enc(0);
  const slide::Motif a = slide::Motif::A, b = slide::Motif::B;
  auto patch = slide::render_motif_patch(&a, 1);
  SUBCASE("deterministic, 384 wide, unit norm") {
    auto v = enc.encode(patch);
    CHECK(v.size() == 384);
    CHECK(v == ToyEncoder(0).encode(patch));
    double n = 0;
    for (float x : v) n += double(x) * x;
    CHECK(std::abs(n - 1) < 1e-5);
  }
  SUBCASE("wrong size") {
    CHECK(code_of([&] { enc.encode(slide::RgbImage(128, 256)); }) == ErrorCode::WrongPatchSize);
    EncoderSpec spec;
    spec.dim = 512;
    CHECK(code_of([&] { toy_encode(patch, spec); }) == ErrorCode::InvalidConfig);
  }
  SUBCASE("same motif renders are closer than different motifs") {
    double same = 0, diff = 0;
    const int pairs = 250;
    for (int i = 0; i < pairs; ++i) {
      const auto seed = static_cast<std::uint64_t>(2 * i);
      auto a1 = enc.encode(slide::render_motif_patch(&a, 1000 + seed));
      auto a2 = enc.encode(slide::render_motif_patch(&a, 1001 + seed));
      auto b1 = enc.encode(slide::render_motif_patch(&b, 5000 + seed));
      auto b2 = enc.encode(slide::render_motif_patch(&b, 5001 + seed));
      same += cosine(a1, a2) + cosine(b1, b2);
      diff += cosine(a1, b1) + cosine(a2, b2);
    }
    same /= 2 * pairs;
    diff /= 2 * pairs;
    MESSAGE("same-motif cosine " << same << ", cross-motif cosine " << diff);
    CHECK(same - diff >= 0.1);
  }
}

TEST_CASE("embedding files") {
  auto dir = scratch_dir("wsif");
  SUBCASE("round trip") {
    Rng rng(1);
    auto bag = random_bag(rng, 384, {{0, 0}, {5, 2}, {17, 3}});
    bag.slide_id = "slide7";
    export_embeddings(bag, dir / "slide7.wsif");
    CHECK(import_embeddings(dir / "slide7.wsif") == bag);
    CHECK(code_of([&] { import_embeddings(dir / "slide7.wsif", 2); }) == ErrorCode::DimMismatch);
  }
  SUBCASE("hand-laid bytes") {
    std::string bytes = "WSIF";
    put<std::uint32_t>(bytes, 1);
    put<std::uint32_t>(bytes, 2);
    put<std::uint64_t>(bytes, 1);
    put<std::int32_t>(bytes, 3);
    put<std::int32_t>(bytes, 7);
    put<float>(bytes, 1.0f);
    put<float>(bytes, -2.5f);
    std::ofstream(dir / "hand.wsif", std::ios::binary) << bytes;
    auto bag = import_embeddings(dir / "hand.wsif");
    CHECK(bag.slide_id == "hand");
    CHECK(bag.dim == 2);
    REQUIRE(bag.entries.size() == 1);
    CHECK(bag.entries[0].grid_x == 3);
    CHECK(bag.entries[0].grid_y == 7);
    CHECK(bag.entries[0].vector == std::vector<float>{1.0f, -2.5f});
    std::ofstream(dir / "cut.wsif", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK(code_of([&] { import_embeddings(dir / "cut.wsif"); }) == ErrorCode::TruncatedFile);
    bytes.replace(0, 4, "XXXX");
    std::ofstream(dir / "bad.wsif", std::ios::binary) << bytes;
    CHECK(code_of([&] { import_embeddings(dir / "bad.wsif"); }) == ErrorCode::BadMagic);
  }
  SUBCASE("bag validation") {
    Rng rng(2);
    auto bag = random_bag(rng, 4, {{0, 0}, {0, 0}});
    CHECK(code_of([&] { validate(bag); }) == ErrorCode::ShapeMismatch);
    bag = random_bag(rng, 4, {{0, 0}, {1, 0}});
    bag.entries[1].vector.pop_back();
    CHECK(code_of([&] { validate(bag); }) == ErrorCode::DimMismatch);
    bag = random_bag(rng, 4, {{0, 0}});
    bag.entries[0].vector[2] = std::nanf("");
    CHECK(code_of([&] { validate(bag); }) == ErrorCode::NaNInGraph);
  }
}

TEST_CASE("region grouping") {
  Rng rng(3);
  SUBCASE("one full region") {
    std::vector<std::pair<int, int>> cells;
    for (int y = 16; y < 32; ++y)
      for (int x = 32; x < 48; ++x) cells.emplace_back(x, y);
    auto regions = group_into_regions(random_bag(rng, 3, cells));
    REQUIRE(regions.size() == 1);
    CHECK(regions[0].present_count() == 256);
    CHECK(regions[0].region_x == 2);
    CHECK(regions[0].region_y == 1);
  }
  SUBCASE("partial border region counts its entries") {
    std::vector<std::pair<int, int>> cells;
    for (int i = 0; i < 256 && cells.size() < 57; i += 4) cells.emplace_back(16 * 5 + i % 16, 16 * 3 + i / 16);
    for (int i = 1; cells.size() < 57; i += 4) cells.emplace_back(16 * 5 + i % 16, 16 * 3 + i / 16);
    auto bag = random_bag(rng, 3, cells);
    auto regions = group_into_regions(bag);
    REQUIRE(regions.size() == 1);
    int direct = 0;
    for (auto p : regions[0].present) direct += p;
    CHECK(direct == 57);
    CHECK(regions[0].present_count() == 57);
  }
  SUBCASE("empty bag") {
    FeatureBag bag;
    CHECK(group_into_regions(bag).empty());
  }
  SUBCASE("flatten inverts grouping and slots are coordinate exact") {
    std::vector<std::pair<int, int>> cells;
    for (int k = 0; k < 300; ++k) cells.emplace_back(static_cast<int>(rng.below(70)), static_cast<int>(rng.below(40)));
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    auto bag = random_bag(rng, 5, cells);
    auto regions = group_into_regions(bag);
    for (const auto& r : regions)
      for (int slot = 0; slot < kRegionSlots; ++slot) {
        if (!r.present[slot]) continue;
        const int gx = 16 * r.region_x + slot % 16, gy = 16 * r.region_y + slot / 16;
        auto it = std::find_if(bag.entries.begin(), bag.entries.end(),
                               [&](const FeatureEntry& e) { return e.grid_x == gx && e.grid_y == gy; });
        REQUIRE(it != bag.entries.end());
        CHECK(std::equal(it->vector.begin(), it->vector.end(), r.token(slot)));
      }
    sort_entries(bag);
    CHECK(flatten(regions) == bag.entries);
    std::size_t kept = 0;
    for (const auto& r : group_into_regions(bag, 30)) {
      CHECK(r.present_count() >= 30);
      ++kept;
    }
    CHECK(kept <= regions.size());
  }
}

TEST_CASE("embed_slide over a rendered slide") {
  slide::DatasetPlan plan;
  plan.slides = 2;
  auto specs = slide::plan_dataset(plan, 4);
  auto img = slide::render_synthetic_slide(specs[0], 4);
  auto pyr = slide::make_memory_pyramid(img, 0.5);
  EmbedOptions opt;
  opt.l2_threshold = 0.03;
  auto one = embed_slide(pyr, "x", opt);
  REQUIRE_FALSE(one.bag.entries.empty());
  CHECK(one.bag.entries.size() == one.patches.size());
  for (std::size_t i = 1; i < one.bag.entries.size(); ++i) {
    const auto& p = one.bag.entries[i - 1];
    const auto& q = one.bag.entries[i];
    CHECK(std::make_pair(p.grid_y, p.grid_x) < std::make_pair(q.grid_y, q.grid_x));
  }
  opt.threads = 3;
  CHECK(embed_slide(pyr, "x", opt).bag == one.bag);
}

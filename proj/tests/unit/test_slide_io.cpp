#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "test_util.hpp"
#include "json.hpp"
#include "wsi/error.hpp"
#include "wsi/rng.hpp"
#include "wsi/preprocess/stain.hpp"
#include "wsi/slide_io/manifest.hpp"
#include "wsi/slide_io/slide.hpp"
#include "wsi/slide_io/synthetic.hpp"

using namespace wsi;
using wsi::testing::code_of;
using wsi::testing::scratch_dir;
using namespace wsi::slide;
namespace fs = std::filesystem;

namespace {

RgbImage noise_image(std::int64_t w, std::int64_t h, std::uint64_t seed) {
  RgbImage img(w, h);
  Rng rng(seed);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

SyntheticSlideSpec square_tissue_spec() {
  SyntheticSlideSpec spec;
  spec.width = 1024;
  spec.height = 768;
  spec.tissue = {{{100, 100}, {900, 120}, {880, 700}, {120, 650}}};
  spec.motifs = {{Motif::A, {400, 400}, 0.75}};
  spec.label = 1;
  return spec;
}

}  // namespace

TEST_CASE("plain raster opens as one level and round-trips") {
  auto dir = scratch_dir("raster");
  auto img = noise_image(512, 512, 1);
  write_ppm(dir / "s.ppm", img);
  auto slide = open_pyramid(dir / "s.ppm", 0.5);
  CHECK(slide->levels().size() == 1);
  CHECK(slide->mpp() == 0.5);
  CHECK(slide->read_region(0, 0, 0, 512, 512) == img);
  CHECK(code_of([&] { open_pyramid(dir / "s.ppm"); }) == ErrorCode::MissingMetadata);
  std::ofstream(dir / "junk.bin") << "not an image";
  CHECK(code_of([&] { open_pyramid(dir / "junk.bin", 0.5); }) == ErrorCode::UnknownFormat);
}

TEST_CASE("reads past the right edge are white") {
  auto slide = make_memory_pyramid(noise_image(256, 256, 2), 0.5);
  auto r = slide->read_region(0, 0, 0, 266, 16);
  for (std::int64_t y = 0; y < 16; ++y)
    for (std::int64_t x = 256; x < 266; ++x) CHECK(r.get(x, y) == kWhite);
  CHECK(r.get(255, 3) == slide->read_region(0, 255, 3, 1, 1).get(0, 0));
}

TEST_CASE("pyramid directory levels match box downsample") {
  auto dir = scratch_dir("pyr");
  auto img = noise_image(700, 600, 3);
  write_pyramid(img, 0.5, dir / "p", 256, {1, 2, 4});
  auto slide = open_pyramid(dir / "p");
  REQUIRE(slide->levels().size() == 3);
  CHECK(slide->levels()[1].downsample == 2.0);
  CHECK(read_level(*slide, 0) == img);
  auto l1 = read_level(*slide, 1);
  auto want = box_downsample(img, 2);
  REQUIRE(l1.pixels.size() == want.pixels.size());
  for (std::size_t i = 0; i < want.pixels.size(); ++i) CHECK(std::abs(int(l1.pixels[i]) - int(want.pixels[i])) <= 1);
  // read_region is pure
  CHECK(slide->read_region(1, 17, 40, 100, 90) == slide->read_region(1, 17, 40, 100, 90));
}

TEST_CASE("missing tiles and metadata") {
  auto dir = scratch_dir("broken");
  write_pyramid(noise_image(600, 600, 4), 0.5, dir / "p", 512, {1});
  fs::remove(dir / "p" / "L0_X1_Y1.ppm");
  auto slide = open_pyramid(dir / "p");
  CHECK(code_of([&] { slide->read_region(0, 0, 0, 600, 600); }) == ErrorCode::CorruptTile);
  fs::create_directories(dir / "empty");
  CHECK(code_of([&] { open_pyramid(dir / "empty"); }) == ErrorCode::MissingMetadata);
}

TEST_CASE("256 px tiles reconstruct the level raster") {
  auto img = noise_image(768, 512, 5);
  auto slide = make_memory_pyramid(img, 0.5);
  RgbImage rebuilt(768, 512, {0, 0, 0});
  for (std::int64_t y = 0; y < 512; y += 256)
    for (std::int64_t x = 0; x < 768; x += 256) {
      auto t = slide->read_region(0, x, y, 256, 256);
      for (std::int64_t j = 0; j < 256; ++j)
        for (std::int64_t i = 0; i < 256; ++i) rebuilt.set(x + i, y + j, t.get(i, j));
    }
  CHECK(rebuilt == img);
}

TEST_CASE("rescale to 0.5 mpp") {
  auto img = noise_image(512, 256, 6);
  SUBCASE("0.25 -> 0.5 halves both sides") {
    auto view = rescale_to_mpp(make_memory_pyramid(img, 0.25), 0.5);
    CHECK(view->mpp() == 0.5);
    CHECK(view->width() == 256);
    CHECK(view->height() == 128);
    CHECK(read_level(*view) == box_downsample(img, 2));
  }
  SUBCASE("same resolution is the identity") {
    auto s = make_memory_pyramid(img, 0.5);
    CHECK(read_level(*rescale_to_mpp(s, 0.5)) == img);
  }
  SUBCASE("constant colour stays constant") {
    auto flat = RgbImage(300, 200, {200, 120, 180});
    auto view = rescale_to_mpp(make_memory_pyramid(flat, 0.25), 0.5);
    auto out = read_level(*view);
    for (std::int64_t y = 0; y < out.height; ++y)
      for (std::int64_t x = 0; x < out.width; ++x) CHECK(out.get(x, y) == Rgb{200, 120, 180});
  }
  SUBCASE("coarser slides are rejected") {
    CHECK(code_of([&] { rescale_to_mpp(make_memory_pyramid(img, 1.0), 0.5); }) == ErrorCode::UpsamplingRequired);
  }
}

TEST_CASE("synthetic generator") {
  SUBCASE("no tissue renders white with an empty truth mask") {
    SyntheticSlideSpec spec;
    spec.width = 512;
    spec.height = 256;
    auto img = render_synthetic_slide(spec, 1);
    for (auto v : img.pixels) CHECK(v == 255);
    auto dir = scratch_dir("empty_slide");
    generate_synthetic_slide(spec, 1, dir / "s");
    auto truth = read_truth(dir / "s" / "truth.json");
    CHECK(truth.tissue.empty());
    CHECK(truth.motifs.empty());
  }
  SUBCASE("deterministic in seed") {
    auto spec = square_tissue_spec();
    CHECK(render_synthetic_slide(spec, 9) == render_synthetic_slide(spec, 9));
    CHECK_FALSE(render_synthetic_slide(spec, 9) == render_synthetic_slide(spec, 10));
  }
  SUBCASE("invalid specs") {
    auto spec = square_tissue_spec();
    spec.width = 1000;
    CHECK(code_of([&] { validate(spec); }) == ErrorCode::SpecInvalid);
    spec = square_tissue_spec();
    spec.motifs[0].center = {20, 20};
    CHECK(code_of([&] { validate(spec); }) == ErrorCode::SpecInvalid);
    spec = square_tissue_spec();
    spec.tissue[0].resize(2);
    CHECK(code_of([&] { validate(spec); }) == ErrorCode::SpecInvalid);
  }
  SUBCASE("Macenko recovers the rendering stain vectors") {
    auto spec = square_tissue_spec();
    spec.motifs.clear();
    auto img = render_synthetic_slide(spec, 3);
    auto tissue = crop(img, 200, 200, 600, 400);
    auto fit = preprocess::macenko_fit(tissue);
    CHECK(preprocess::angle_deg(fit.hematoxylin, kHematoxylinOd) < 2.0);
    CHECK(preprocess::angle_deg(fit.eosin, kEosinOd) < 2.0);
  }
  SUBCASE("written pyramid matches the in-memory render") {
    auto spec = square_tissue_spec();
    auto dir = scratch_dir("gen");
    generate_synthetic_slide(spec, 4, dir / "s");
    auto slide = open_pyramid(dir / "s");
    CHECK(read_level(*slide) == render_synthetic_slide(spec, 4));
    auto truth = read_truth(dir / "s" / "truth.json");
    CHECK(truth.label == 1);
    REQUIRE(truth.motifs.size() == 1);
    CHECK(truth.motifs[0].motif == Motif::A);
  }
}

TEST_CASE("dataset plans follow their label rules") {
  for (auto rule : {LabelRule::LocalPresence, LabelRule::SpatialArrangement}) {
    DatasetPlan plan;
    plan.rule = rule;
    plan.slides = 16;
    auto specs = plan_dataset(plan, 5);
    REQUIRE(specs.size() == 16);
    int positives = 0;
    for (const auto& s : specs) {
      validate(s);
      std::map<Motif, int> counts;
      for (const auto& m : s.motifs) ++counts[m.motif];
      positives += s.label;
      if (rule == LabelRule::LocalPresence) {
        if (s.label == 1)
          CHECK(counts[Motif::A] >= 1);
        else
          CHECK(counts[Motif::A] == 0);
      } else {
        CHECK(counts[Motif::A] == plan.motifs_per_kind);
        CHECK(counts[Motif::B] == plan.motifs_per_kind);
      }
    }
    CHECK(positives == 8);
  }
}

TEST_CASE("manifest parsing") {
  auto m = parse_manifest(R"([
    {"slide_id": "a", "path": "a.ppm", "label": "tumor"},
    {"slide_id": "b", "path": "b.ppm", "label": "normal", "survival_time": 3.5, "event_observed": true}
  ])");
  CHECK(m.classes == std::vector<std::string>{"normal", "tumor"});
  CHECK(m.entries[0].label_index == 1);
  CHECK(m.entries[1].survival_time == 3.5);
  CHECK(code_of([] {
          parse_manifest(R"([{"slide_id": "a", "path": "x", "label": 0}, {"slide_id": "a", "path": "y", "label": 1}])");
        }) == ErrorCode::BadManifest);
  CHECK(code_of([] { parse_manifest(R"([{"slide_id": "a", "path": "x", "label": 0, "survival_time": 2}])"); }) ==
        ErrorCode::BadManifest);
  auto ints = parse_manifest(R"([{"slide_id": "a", "path": "x", "label": 2}, {"slide_id": "b", "path": "y", "label": 0}])");
  CHECK(ints.classes.size() == 3);
  CHECK(ints.entries[0].label_index == 2);
}

#include "wsi/slide_io/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "wsi/error.hpp"
#include "wsi/rng.hpp"
#include "wsi/slide_io/slide.hpp"

namespace wsi::slide {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Motif motif) { return motif == Motif::A ? "A" : "B"; }

std::string to_string(LabelRule rule) {
  return rule == LabelRule::LocalPresence ? "local-presence" : "spatial-arrangement";
}

Motif motif_from_string(const std::string& name) {
  if (name == "A") return Motif::A;
  if (name == "B") return Motif::B;
  fail(ErrorCode::SpecInvalid, "unknown motif '" + name + "'");
}

LabelRule label_rule_from_string(const std::string& name) {
  if (name == "local-presence") return LabelRule::LocalPresence;
  if (name == "spatial-arrangement") return LabelRule::SpatialArrangement;
  fail(ErrorCode::SpecInvalid, "unknown label rule '" + name + "'");
}

std::uint8_t od_to_intensity(double od) {
  const double value = std::round(256.0 * std::pow(10.0, -od) - 1.0);
  return static_cast<std::uint8_t>(std::clamp(value, 0.0, 255.0));
}

bool inside(const Polygon& polygon, Point p) {
  bool in = false;
  for (std::size_t i = 0, j = polygon.size() - 1; i < polygon.size(); j = i++) {
    const Point a = polygon[i], b = polygon[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

bool inside_any(const std::vector<Polygon>& polygons, Point p) {
  return std::any_of(polygons.begin(), polygons.end(), [&](const Polygon& poly) { return inside(poly, p); });
}

void validate(const SyntheticSlideSpec& spec) {
  if (spec.width <= 0 || spec.height <= 0 || spec.width % 256 || spec.height % 256)
    fail(ErrorCode::SpecInvalid, "slide dimensions must be positive multiples of 256");
  if (!(spec.mpp > 0)) fail(ErrorCode::SpecInvalid, "mpp must be positive");
  if (!(spec.stain_h > 0) || !(spec.stain_e > 0)) fail(ErrorCode::SpecInvalid, "stain multipliers must be positive");
  for (const auto& poly : spec.tissue)
    if (poly.size() < 3) fail(ErrorCode::SpecInvalid, "tissue polygon needs at least 3 vertices");
  for (const auto& m : spec.motifs) {
    if (!(m.scale > 0 && m.scale <= 4)) fail(ErrorCode::SpecInvalid, "motif scale out of range");
    if (!inside_any(spec.tissue, m.center))
      fail(ErrorCode::SpecInvalid, "motif center (" + std::to_string(m.center.x) + ", " + std::to_string(m.center.y) +
                                       ") lies outside tissue");
  }
}

GrayImage rasterize_tissue(const std::vector<Polygon>& polygons, std::int64_t width, std::int64_t height) {
  GrayImage mask(width, height, 0);
  std::vector<double> crossings;
  for (std::int64_t y = 0; y < height; ++y) {
    const double py = static_cast<double>(y) + 0.5;
    std::uint8_t* row = mask.pixels.data() + y * width;
    for (const auto& poly : polygons) {
      crossings.clear();
      for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point a = poly[i], b = poly[j];
        if ((a.y > py) != (b.y > py)) crossings.push_back((b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x);
      }
      std::sort(crossings.begin(), crossings.end());
      // Pixel x is covered when its center x + 0.5 falls in [left, right).
      for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
        const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(crossings[k] - 0.5)));
        const auto x1 = std::min<std::int64_t>(width, static_cast<std::int64_t>(std::ceil(crossings[k + 1] - 0.5)));
        for (std::int64_t x = x0; x < x1; ++x) row[x] = 1;
      }
    }
  }
  return mask;
}

namespace {

struct Box {
  std::int64_t x0, y0, x1, y1;
};

Box motif_box(const MotifPlacement& m) {
  const auto side = static_cast<std::int64_t>(std::llround(256.0 * m.scale));
  const auto x0 = static_cast<std::int64_t>(std::llround(m.center.x - static_cast<double>(side) / 2));
  const auto y0 = static_cast<std::int64_t>(std::llround(m.center.y - static_cast<double>(side) / 2));
  return {x0, y0, x0 + side, y0 + side};
}

class Canvas {
 public:
  Canvas(std::int64_t w, std::int64_t h, GrayImage tissue)
      : w_(w), h_(h), tissue_(std::move(tissue)), ch_(static_cast<std::size_t>(w * h)), ce_(ch_.size()) {}

  bool is_tissue(std::int64_t x, std::int64_t y) const { return tissue_.pixels[index(x, y)] != 0; }
  float& h(std::int64_t x, std::int64_t y) { return ch_[index(x, y)]; }
  float& e(std::int64_t x, std::int64_t y) { return ce_[index(x, y)]; }

  template <typename F>
  void for_box(Box b, F&& f) {
    for (std::int64_t y = std::max<std::int64_t>(b.y0, 0); y < std::min(b.y1, h_); ++y)
      for (std::int64_t x = std::max<std::int64_t>(b.x0, 0); x < std::min(b.x1, w_); ++x)
        if (is_tissue(x, y)) f(x, y);
  }

  /// Soft-edged disc of haematoxylin that displaces eosin.
  void nucleus(double cx, double cy, double r, double strength) {
    const Box b{static_cast<std::int64_t>(std::floor(cx - r - 2)), static_cast<std::int64_t>(std::floor(cy - r - 2)),
                static_cast<std::int64_t>(std::ceil(cx + r + 2)), static_cast<std::int64_t>(std::ceil(cy + r + 2))};
    for_box(b, [&](std::int64_t x, std::int64_t y) {
      const double d = std::hypot(static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy);
      const double t = std::clamp((r + 0.75 - d) / 1.5, 0.0, 1.0);
      if (t <= 0) return;
      h(x, y) = static_cast<float>(std::max<double>(h(x, y), t * strength));
      e(x, y) = static_cast<float>(e(x, y) * (1.0 - t));
    });
  }

  RgbImage compose(Rng& rng, double stain_h, double stain_e) const {
    RgbImage out(w_, h_);
    for (std::int64_t y = 0; y < h_; ++y)
      for (std::int64_t x = 0; x < w_; ++x) {
        const std::size_t i = index(x, y);
        if (!tissue_.pixels[i]) continue;
        const double ch = std::max(0.0, ch_[i] * (1.0 + 0.08 * rng.normal())) * stain_h;
        const double ce = std::max(0.0, ce_[i] * (1.0 + 0.08 * rng.normal())) * stain_e;
        const std::size_t o = out.offset(x, y);
        for (int c = 0; c < 3; ++c) out.pixels[o + c] = od_to_intensity(ch * kHematoxylinOd[c] + ce * kEosinOd[c]);
      }
    return out;
  }

 private:
  std::size_t index(std::int64_t x, std::int64_t y) const { return static_cast<std::size_t>(y * w_ + x); }

  std::int64_t w_, h_;
  GrayImage tissue_;
  std::vector<float> ch_, ce_;
};

constexpr float kBaseEosin = 0.55f;

void paint_motif(Canvas& canvas, const MotifPlacement& m, Rng& rng) {
  const Box b = motif_box(m);
  if (m.motif == Motif::B) {
    // Diagonal eosin bands.
    const double period = 24.0 * m.scale / 0.75;
    canvas.for_box(b, [&](std::int64_t x, std::int64_t y) {
      const double phase = std::fmod(static_cast<double>((x - b.x0) + (y - b.y0)), period);
      canvas.e(x, y) = phase < period * 0.5 ? 1.25f : 0.85f;
      canvas.h(x, y) = 0.0f;
    });
    return;
  }
  // Dense grid of large nuclei on pale stroma.
  canvas.for_box(b, [&](std::int64_t x, std::int64_t y) {
    canvas.e(x, y) = 0.3f;
    canvas.h(x, y) = 0.0f;
  });
  const double spacing = 24.0 * m.scale / 0.75;
  for (double cy = static_cast<double>(b.y0) + spacing / 2; cy < static_cast<double>(b.y1); cy += spacing)
    for (double cx = static_cast<double>(b.x0) + spacing / 2; cx < static_cast<double>(b.x1); cx += spacing) {
      const double jx = rng.uniform(-1.5, 1.5), jy = rng.uniform(-1.5, 1.5);
      const double r = rng.uniform(6.5, 8.0) * m.scale / 0.75;
      canvas.nucleus(cx + jx, cy + jy, r, rng.uniform(1.0, 1.2));
    }
}

json polygon_json(const Polygon& poly) {
  json out = json::array();
  for (const auto& p : poly) out.push_back({p.x, p.y});
  return out;
}

}  // namespace

RgbImage render_synthetic_slide(const SyntheticSlideSpec& spec, std::uint64_t seed) {
  validate(spec);
  GrayImage tissue = rasterize_tissue(spec.tissue, spec.width, spec.height);
  std::int64_t tissue_pixels = std::count(tissue.pixels.begin(), tissue.pixels.end(), std::uint8_t{1});
  Canvas canvas(spec.width, spec.height, std::move(tissue));
  Rng rng(mix_seed(seed, 0x51de));

  canvas.for_box({0, 0, spec.width, spec.height}, [&](std::int64_t x, std::int64_t y) { canvas.e(x, y) = kBaseEosin; });

  std::vector<Box> boxes;
  for (const auto& m : spec.motifs) {
    paint_motif(canvas, m, rng);
    boxes.push_back(motif_box(m));
  }

  // Sparse background nuclei, kept clear of motif boxes.
  const std::int64_t nuclei = tissue_pixels / 1200;
  for (std::int64_t k = 0; k < nuclei; ++k) {
    const double cx = rng.uniform(0.0, static_cast<double>(spec.width));
    const double cy = rng.uniform(0.0, static_cast<double>(spec.height));
    const double r = rng.uniform(3.0, 5.0);
    const double strength = rng.uniform(0.7, 1.0);
    const bool near_motif = std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) {
      return cx > static_cast<double>(b.x0) - r - 2 && cx < static_cast<double>(b.x1) + r + 2 &&
             cy > static_cast<double>(b.y0) - r - 2 && cy < static_cast<double>(b.y1) + r + 2;
    });
    if (near_motif || !inside_any(spec.tissue, {cx, cy})) continue;
    canvas.nucleus(cx, cy, r, strength);
  }
  return canvas.compose(rng, spec.stain_h, spec.stain_e);
}

SyntheticTruth truth_of(const SyntheticSlideSpec& spec) {
  SyntheticTruth truth;
  truth.tissue = spec.tissue;
  truth.label = spec.label;
  truth.rule = spec.rule;
  for (const auto& m : spec.motifs) {
    const Box b = motif_box(m);
    truth.motifs.push_back({m.motif, b.x0, b.y0, b.x1 - b.x0, b.y1 - b.y0});
  }
  return truth;
}

SyntheticTruth read_truth(const fs::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::MissingMetadata, "cannot open " + path.string());
  try {
    const json j = json::parse(is);
    SyntheticTruth truth;
    for (const auto& poly : j.at("tissue")) {
      Polygon p;
      for (const auto& v : poly) p.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
      truth.tissue.push_back(std::move(p));
    }
    for (const auto& m : j.at("motifs")) {
      const auto& box = m.at("box");
      truth.motifs.push_back({motif_from_string(m.at("motif").get<std::string>()), box.at(0).get<std::int64_t>(),
                              box.at(1).get<std::int64_t>(), box.at(2).get<std::int64_t>(),
                              box.at(3).get<std::int64_t>()});
    }
    truth.label = j.at("label").get<int>();
    truth.rule = label_rule_from_string(j.at("rule").get<std::string>());
    return truth;
  } catch (const json::exception& e) {
    fail(ErrorCode::MissingMetadata, path.string() + ": " + e.what());
  }
}

void generate_synthetic_slide(const SyntheticSlideSpec& spec, std::uint64_t seed, const fs::path& dir,
                              int tile_size) {
  const RgbImage image = render_synthetic_slide(spec, seed);
  write_pyramid(image, spec.mpp, dir, tile_size);
  const SyntheticTruth truth = truth_of(spec);
  json j;
  j["width"] = spec.width;
  j["height"] = spec.height;
  j["seed"] = seed;
  j["label"] = truth.label;
  j["rule"] = to_string(truth.rule);
  j["stain"] = {{"h", spec.stain_h}, {"e", spec.stain_e}};
  j["tissue"] = json::array();
  for (const auto& poly : truth.tissue) j["tissue"].push_back(polygon_json(poly));
  j["motifs"] = json::array();
  for (const auto& b : truth.motifs) j["motifs"].push_back({{"motif", to_string(b.motif)}, {"box", {b.x, b.y, b.w, b.h}}});
  std::ofstream os(dir / "truth.json");
  os << j.dump(2) << '\n';
}

RgbImage render_motif_patch(const Motif* motif, std::uint64_t seed, double stain_h, double stain_e) {
  SyntheticSlideSpec spec;
  spec.width = spec.height = 256;
  spec.tissue = {{{0, 0}, {256, 0}, {256, 256}, {0, 256}}};
  if (motif) spec.motifs.push_back({*motif, {128, 128}, 0.75});
  spec.stain_h = stain_h;
  spec.stain_e = stain_e;
  return render_synthetic_slide(spec, seed);
}

namespace {

/// Rectangle with vertices pushed inward by up to `inset` pixels, so the
/// polygon always contains [inset, w - inset] x [inset, h - inset].
Polygon jittered_outline(std::int64_t w, std::int64_t h, double inset, Rng& rng) {
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  Polygon poly;
  const int per_edge = 4;
  for (int k = 0; k < per_edge; ++k) poly.push_back({W * k / per_edge, rng.uniform(0, inset)});
  for (int k = 0; k < per_edge; ++k) poly.push_back({W - rng.uniform(0, inset), H * k / per_edge});
  for (int k = 0; k < per_edge; ++k) poly.push_back({W - W * k / per_edge, H - rng.uniform(0, inset)});
  for (int k = 0; k < per_edge; ++k) poly.push_back({rng.uniform(0, inset), H - H * k / per_edge});
  // Corner vertices move along both axes.
  for (int c = 0; c < 4; ++c) {
    Point& p = poly[static_cast<std::size_t>(c * per_edge)];
    if (c == 0) p.x = rng.uniform(0, inset);
    if (c == 1) p.y = rng.uniform(0, inset);
    if (c == 2) p.x = W - rng.uniform(0, inset);
    if (c == 3) p.y = H - rng.uniform(0, inset);
  }
  return poly;
}

}  // namespace

std::vector<SyntheticSlideSpec> plan_dataset(const DatasetPlan& plan, std::uint64_t seed) {
  if (plan.slides < 2) fail(ErrorCode::SpecInvalid, "dataset needs at least 2 slides");
  if (plan.width % 256 || plan.height % 256 || plan.width < 512)
    fail(ErrorCode::SpecInvalid, "dataset slides need width >= 512 and dims multiple of 256");
  const std::int64_t gw = plan.width / 256, gh = plan.height / 256;
  const std::int64_t limit =
      plan.rule == LabelRule::LocalPresence ? gw * gh : (gw / 2 - 1) * gh;
  if (plan.motifs_per_kind < 1 || plan.motifs_per_kind > limit)
    fail(ErrorCode::SpecInvalid, "motif count does not fit the slide grid");

  std::vector<SyntheticSlideSpec> specs;
  for (int i = 0; i < plan.slides; ++i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    SyntheticSlideSpec spec;
    spec.width = plan.width;
    spec.height = plan.height;
    spec.rule = plan.rule;
    spec.label = i % 2;
    spec.stain_h = rng.uniform(1.0 - plan.stain_jitter, 1.0 + plan.stain_jitter);
    spec.stain_e = rng.uniform(1.0 - plan.stain_jitter, 1.0 + plan.stain_jitter);
    spec.tissue = {jittered_outline(plan.width, plan.height, plan.tissue_margin, rng)};

    auto cell_center = [](std::int64_t cell, std::int64_t cols) {
      return Point{static_cast<double>((cell % cols) * 256 + 128), static_cast<double>((cell / cols) * 256 + 128)};
    };
    auto place = [&](Motif motif, Point center) { spec.motifs.push_back({motif, center, plan.motif_scale}); };

    if (plan.rule == LabelRule::LocalPresence) {
      std::vector<std::int64_t> cells(static_cast<std::size_t>(gw * gh));
      for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = static_cast<std::int64_t>(c);
      rng.shuffle(cells);
      for (int k = 0; k < plan.motifs_per_kind; ++k)
        place(spec.label == 1 ? Motif::A : Motif::B, cell_center(cells[static_cast<std::size_t>(k)], gw));
    } else {
      // Motif cells skip the outermost column on each side: a border tile
      // shows the tissue edge, which would tell the halves apart.
      const std::int64_t cols = gw / 2 - 1;
      std::vector<std::int64_t> left(static_cast<std::size_t>(cols * gh)), right(left.size());
      for (std::size_t c = 0; c < left.size(); ++c) left[c] = right[c] = static_cast<std::int64_t>(c);
      rng.shuffle(left);
      rng.shuffle(right);
      const Motif left_motif = spec.label == 1 ? Motif::A : Motif::B;
      const Motif right_motif = spec.label == 1 ? Motif::B : Motif::A;
      auto center = [&](std::int64_t col, std::int64_t row) {
        return Point{static_cast<double>(col * 256 + 128), static_cast<double>(row * 256 + 128)};
      };
      for (int k = 0; k < plan.motifs_per_kind; ++k) {
        const std::int64_t l = left[static_cast<std::size_t>(k)], r = right[static_cast<std::size_t>(k)];
        place(left_motif, center(1 + l % cols, l / cols));
        place(right_motif, center(gw / 2 + r % cols, r / cols));
      }
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

}  // namespace wsi::slide

#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "wsi/ssl_pretrain/distill.hpp"

using namespace wsi;
using namespace wsi::ssl;
using wsi::testing::code_of;

namespace {

constexpr auto f64 = nn::DType::f64;

DistillConfig small_config() {
  DistillConfig c;
  c.encoder = {8, 12, 1, 3, 2};
  c.head_hidden = 16;
  c.proj_dim = 10;
  return c;
}

std::vector<ViewPair> batch_of(const std::vector<features::RegionGrid>& corpus, std::size_t start, std::size_t n,
                               const DistillConfig& cfg, Rng& rng) {
  std::vector<ViewPair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_view_pair(corpus[start + i], cfg, rng, f64));
  return out;
}

std::vector<std::vector<double>> values_of(const ParameterList& ps) {
  std::vector<std::vector<double>> out;
  for (const auto& p : ps) out.push_back(p.tensor.to_vector());
  return out;
}

}  // namespace

TEST_CASE("distillation state") {
  auto cfg = small_config();
  auto state = make_distill_state(cfg, 1, f64);
  CHECK(values_of(state.teacher.parameters()) == values_of(state.student.parameters()));
  for (double c : state.center) CHECK(c == 0.0);
  auto bad = cfg;
  bad.teacher_temp = 0.2;
  CHECK(code_of([&] { make_distill_state(bad, 1, f64); }) == ErrorCode::InvalidConfig);
  CHECK(code_of([&] { dino_step(state, {}, 1e-3); }) == ErrorCode::EmptyBatch);
}

TEST_CASE("views") {
  auto corpus = wsi::testing::toy_region_corpus(20, 8, 2);
  auto cfg = small_config();
  Rng rng(3);
  for (const auto& region : corpus) {
    auto pair = make_view_pair(region, cfg, rng, f64);
    for (const auto* v : {&pair.a, &pair.b}) {
      REQUIRE(v->slots.size() >= 1);
      CHECK(v->tokens.rows() == v->slots.size());
      for (std::size_t i = 0; i < v->slots.size(); ++i) {
        CHECK(region.present[v->slots[i]] == 1);
        CHECK(v->tokens.at(i * 8) == doctest::Approx(region.token(static_cast<int>(v->slots[i]))[0]));
      }
    }
  }
  features::RegionGrid single = features::empty_region(0, 0, 8);
  single.present[255] = 1;
  auto v = augment(single, cfg, rng, f64);
  CHECK(v.slots == std::vector<std::size_t>{255});
}

TEST_CASE("teacher EMA") {
  auto corpus = wsi::testing::toy_region_corpus(12, 8, 4);
  SUBCASE("momentum 1 leaves the teacher untouched") {
    auto cfg = small_config();
    cfg.teacher_momentum = 1.0;
    auto state = make_distill_state(cfg, 5, f64);
    const auto before = values_of(state.teacher.parameters());
    Rng rng(1);
    dino_step(state, batch_of(corpus, 0, 4, cfg, rng), 1e-2);
    CHECK(values_of(state.teacher.parameters()) == before);
    CHECK(values_of(state.student.parameters()) != before);
  }
  SUBCASE("momentum 0 copies the student") {
    auto cfg = small_config();
    cfg.teacher_momentum = 0.0;
    auto state = make_distill_state(cfg, 5, f64);
    Rng rng(1);
    dino_step(state, batch_of(corpus, 0, 4, cfg, rng), 1e-2);
    CHECK(values_of(state.teacher.parameters()) == values_of(state.student.parameters()));
  }
  SUBCASE("each step is the convex combination and never grads the teacher") {
    auto cfg = small_config();
    cfg.teacher_momentum = 0.9;
    auto state = make_distill_state(cfg, 6, f64);
    Rng rng(2);
    for (int s = 0; s < 3; ++s) {
      const auto prev = values_of(state.teacher.parameters());
      auto r = dino_step(state, batch_of(corpus, 4 * static_cast<std::size_t>(s), 4, cfg, rng), 1e-2);
      CHECK(r.loss >= 0);
      const auto now = values_of(state.teacher.parameters());
      const auto student = values_of(state.student.parameters());
      for (std::size_t i = 0; i < now.size(); ++i)
        for (std::size_t k = 0; k < now[i].size(); ++k)
          CHECK(std::abs(now[i][k] - (0.9 * prev[i][k] + 0.1 * student[i][k])) <= 1e-6);
      for (const auto& p : state.teacher.parameters()) {
        CHECK_FALSE(p.tensor.has_grad());
        CHECK_FALSE(p.tensor.requires_grad());
        CHECK_FALSE(state.optimizer->tracks(p.tensor));
      }
    }
  }
}

TEST_CASE("center recurrence over five batches") {
  auto corpus = wsi::testing::toy_region_corpus(15, 8, 7);
  auto cfg = small_config();
  auto state = make_distill_state(cfg, 8, f64);
  std::vector<double> c(cfg.proj_dim, 0.0);
  Rng rng(3);
  for (int s = 0; s < 5; ++s) {
    auto batch = batch_of(corpus, 3 * static_cast<std::size_t>(s), 3, cfg, rng);
    std::vector<double> mean(cfg.proj_dim, 0.0);
    {
      nn::NoGradGuard guard;
      for (const auto& pair : batch)
        for (const auto* v : {&pair.a, &pair.b}) {
          auto t = state.teacher(*v).to_vector();
          for (std::size_t k = 0; k < t.size(); ++k) mean[k] += t[k] / static_cast<double>(2 * batch.size());
        }
    }
    dino_step(state, batch, 1e-2);
    for (std::size_t k = 0; k < c.size(); ++k) {
      c[k] = 0.9 * c[k] + 0.1 * mean[k];
      CHECK(std::abs(state.center[k] - c[k]) <= 1e-12);
    }
  }
}

TEST_CASE("identical views with equal temperatures give the entropy") {
  auto corpus = wsi::testing::toy_region_corpus(4, 8, 9);
  auto cfg = small_config();
  auto state = make_distill_state(cfg, 10, f64);
  state.config.teacher_temp = state.config.student_temp;
  std::vector<ViewPair> batch;
  double entropy = 0;
  for (const auto& region : corpus) {
    auto v = full_view(region, f64);
    batch.push_back({v, v});
    auto z = state.student(v).to_vector();
    double mx = -1e300, sum = 0;
    for (double& x : z) mx = std::max(mx, x /= cfg.student_temp);
    for (double x : z) sum += std::exp(x - mx);
    for (double x : z) {
      const double p = std::exp(x - mx) / sum;
      entropy -= p * std::log(p) / static_cast<double>(corpus.size());
    }
  }
  auto r = dino_step(state, batch, 0.0);
  CHECK(std::abs(r.loss - entropy) <= 1e-5);
  CHECK(std::abs(r.teacher_entropy - entropy) <= 1e-5);
}

TEST_CASE("collapse is reported") {
  auto corpus = wsi::testing::toy_region_corpus(4, 8, 11);
  auto cfg = small_config();
  cfg.collapse_patience = 1;
  cfg.collapse_entropy = 1e9;
  auto state = make_distill_state(cfg, 12, f64);
  Rng rng(4);
  CHECK(code_of([&] { dino_step(state, batch_of(corpus, 0, 2, cfg, rng), 1e-3); }) == ErrorCode::CollapseDetected);
}

TEST_CASE("pre-training") {
  auto corpus = wsi::testing::toy_region_corpus(40, 8, 13);
  auto cfg = small_config();
  PretrainOptions opt;
  opt.epochs = 2;
  opt.batch_size = 16;
  opt.warmup_epochs = 1;
  opt.seed = 3;
  CHECK(code_of([&] { pretrain_l2({corpus.begin(), corpus.begin() + 31}, cfg, opt); }) == ErrorCode::CorpusTooSmall);
  opt.log_path = wsi::testing::scratch_dir("pretrain") / "log.csv";
  auto a = pretrain_l2(corpus, cfg, opt);
  opt.log_path.clear();
  auto b = pretrain_l2(corpus, cfg, opt);
  CHECK(values_of(a.checkpoint) == values_of(b.checkpoint));
  CHECK(a.epoch_loss.size() == 2);
  for (const auto& p : a.checkpoint) CHECK(p.name.rfind("l2.", 0) == 0);

  auto mc = agg::make_config(agg::Structure::Medium, agg::L2Mode::Frozen, 2, 0);
  mc.l1_dim = 8;
  mc.l2_dim = 12;
  mc.l2_layers = 1;
  mc.mlp_ratio = 2;
  CHECK_NOTHROW(agg::build_model(mc, a.checkpoint));
  mc.l2_layers = 2;
  CHECK(code_of([&] { agg::build_model(mc, a.checkpoint); }) == ErrorCode::CheckpointShapeMismatch);
}

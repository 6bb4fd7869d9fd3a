#include "harness_fixture.hpp"

#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "wsi/harness/synthetic_dataset.hpp"
#include "wsi/ssl_pretrain/distill.hpp"
#include "wsi/tensor_core/checkpoint.hpp"

namespace wsi::testing {

namespace fs = std::filesystem;

fs::path feature_dataset(const fs::path& dir, slide::LabelRule rule, int slides, std::uint64_t seed) {
  if (fs::exists(dir / "manifest.json")) return dir / "manifest.json";
  harness::SyntheticDatasetOptions o;
  o.write_slides = false;
  o.plan.rule = rule;
  o.plan.slides = slides;
  return harness::build_synthetic_dataset(o, seed, dir);
}

std::map<agg::Structure, fs::path> pretrain_checkpoints(const harness::Dataset& data,
                                                        const harness::ModelOverrides& model, const fs::path& dir,
                                                        int epochs, std::uint64_t seed) {
  std::vector<features::RegionGrid> corpus;
  for (const auto& s : data.slides) corpus.insert(corpus.end(), s.regions.begin(), s.regions.end());
  const std::size_t dim = data.slides.front().bag.dim;
  if (corpus.size() < 32) {
    auto extra = toy_region_corpus(32 - corpus.size(), dim, seed);
    corpus.insert(corpus.end(), extra.begin(), extra.end());
  }
  fs::create_directories(dir);
  std::map<agg::Structure, fs::path> out;
  for (auto structure : {agg::Structure::Medium, agg::Structure::Most}) {
    harness::ExperimentConfig probe;
    probe.model = model;
    const auto mc = harness::model_config(probe, {structure, agg::L2Mode::Frozen}, 2);
    ssl::DistillConfig cfg;
    cfg.encoder = mc.l2();
    cfg.encoder.l1_dim = dim;
    ssl::PretrainOptions opt;
    opt.epochs = epochs;
    opt.warmup_epochs = 1;
    opt.batch_size = 16;
    opt.seed = seed;
    const auto result = ssl::pretrain_l2(corpus, cfg, opt);
    const fs::path path = dir / ("l2_" + agg::to_string(structure) + ".sfw");
    nn::save_parameters(path, result.checkpoint);
    out[structure] = path;
  }
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace wsi::testing

// wsi: command-line front end for the slide pipeline and the experiment matrix.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsi/error.hpp"
#include "wsi/features/feature_bag.hpp"
#include "wsi/features/pipeline.hpp"
#include "wsi/harness/experiment.hpp"
#include "wsi/harness/report.hpp"
#include "wsi/harness/synthetic_dataset.hpp"
#include "wsi/preprocess/patches.hpp"
#include "wsi/preprocess/stain.hpp"
#include "wsi/preprocess/tissue_mask.hpp"
#include "wsi/slide_io/manifest.hpp"
#include "wsi/slide_io/slide.hpp"
#include "wsi/ssl_pretrain/distill.hpp"
#include "wsi/tensor_core/checkpoint.hpp"

namespace fs = std::filesystem;
using namespace wsi;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

/// Config file (if any) with the global flags applied on top.
harness::ExperimentConfig experiment_config(const Globals& g) {
  harness::ExperimentConfig c;
  if (!g.config.empty()) c = harness::load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.out) c.out = *g.out;
  if (g.threads) c.threads = *g.threads;
  return c;
}

fs::path out_dir(const Globals& g, const char* fallback) { return g.out ? fs::path(*g.out) : fs::path(fallback); }
std::uint64_t seed_of(const Globals& g) { return g.seed.value_or(0); }
int threads_of(const Globals& g) { return g.threads.value_or(1); }

preprocess::StainMatrix reference_or_default(const std::string& path) {
  return path.empty() ? harness::reference_stain() : preprocess::load_stain_matrix(path);
}

// ---- synth

struct SynthArgs {
  std::string rule = "local";
  int slides = 64;
  int motifs = 2;
  bool features_only = false;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  harness::SyntheticDatasetOptions o;
  o.plan.rule = a.rule == "arrangement" ? slide::LabelRule::SpatialArrangement : slide::LabelRule::LocalPresence;
  o.plan.slides = a.slides;
  o.plan.motifs_per_kind = a.motifs;
  o.write_slides = !a.features_only;
  o.embed.threads = threads_of(g);
  const fs::path manifest = harness::build_synthetic_dataset(o, seed_of(g), out_dir(g, "dataset"));
  std::cout << manifest.string() << '\n';
  return 0;
}

// ---- tile

struct TileArgs {
  std::string slide;
  std::optional<double> mpp;
  double l1 = preprocess::kL1Threshold;
  double l2 = preprocess::kL2Threshold;
};

int cmd_tile(const Globals& g, const TileArgs& a) {
  const auto slide = slide::rescale_to_mpp(slide::open_pyramid(a.slide, a.mpp), 0.5);
  const auto mask = preprocess::compute_tissue_mask(*slide);
  auto records = preprocess::extract_patches(mask, preprocess::PatchLevel::L2, a.l2);
  const auto nested = preprocess::extract_nested(mask, a.l2, a.l1);
  records.insert(records.end(), nested.begin(), nested.end());
  const fs::path dir = out_dir(g, "tiles");
  fs::create_directories(dir);
  preprocess::write_mask(dir / "mask.pgm", mask);
  preprocess::write_patch_index(dir / "patches.csv", records);
  std::size_t l1 = 0, l2 = 0;
  for (const auto& r : records) (r.level == preprocess::PatchLevel::L1 ? l1 : l2) += 1;
  std::cout << "level-2 regions " << l2 << ", level-1 patches " << l1 << " -> " << (dir / "patches.csv").string()
            << '\n';
  return 0;
}

// ---- normalize

struct NormalizeArgs {
  std::string input;
  std::string reference;
  bool write_reference = false;
};

int cmd_normalize(const Globals& g, const NormalizeArgs& a) {
  const fs::path dir = out_dir(g, ".");
  fs::create_directories(dir);
  const auto reference = reference_or_default(a.reference);
  if (a.write_reference) preprocess::save_stain_matrix(dir / "reference_stain.json", reference);
  if (a.input.empty()) return 0;
  const auto image = slide::read_ppm(a.input);
  bool fallback = false;
  const auto fitted = preprocess::fit_or_reference(image, reference, &fallback);
  const std::string stem = fs::path(a.input).stem().string();
  slide::write_ppm(dir / (stem + "_normalized.ppm"), preprocess::macenko_normalize(image, fitted, reference));
  preprocess::save_stain_matrix(dir / (stem + "_stain.json"), fitted);
  if (fallback) std::cerr << "stain fit failed; used the reference basis\n";
  std::cout << (dir / (stem + "_normalized.ppm")).string() << '\n';
  return 0;
}

// ---- embed

struct EmbedArgs {
  std::string manifest;
  std::optional<double> mpp;
  double l1 = preprocess::kL1Threshold;
  double l2 = preprocess::kL2Threshold;
  std::string reference;
  bool no_normalize = false;
};

int cmd_embed(const Globals& g, const EmbedArgs& a) {
  const auto manifest = slide::read_manifest(a.manifest);
  features::EmbedOptions o;
  o.l1_threshold = a.l1;
  o.l2_threshold = a.l2;
  if (!a.no_normalize) o.reference = reference_or_default(a.reference);
  o.threads = threads_of(g);
  const fs::path dir = out_dir(g, "embedded");
  fs::create_directories(dir / "features");
  std::vector<slide::SlideManifestEntry> entries;
  for (auto e : manifest.entries) {
    const fs::path slide_path = manifest.resolve(e.path);
    const auto result = features::embed_slide(slide::open_pyramid(slide_path, a.mpp), e.slide_id, o);
    const std::string rel = "features/" + e.slide_id + ".wsif";
    features::export_embeddings(result.bag, dir / rel);
    std::cerr << e.slide_id << ": " << result.bag.entries.size() << " patches"
              << (result.stain_fallback ? " (reference stain)" : "") << '\n';
    e.path = fs::absolute(slide_path).generic_string();
    e.features = rel;
    entries.push_back(std::move(e));
  }
  slide::write_manifest(dir / "manifest.json", entries);
  std::cout << (dir / "manifest.json").string() << '\n';
  return 0;
}

// ---- pretrain-l2

struct PretrainArgs {
  std::string manifest;
  std::string structure = "medium";
  int epochs = 100;
  std::size_t batch = 32;
  double lr = 5e-4;
  int warmup = 10;
};

int cmd_pretrain(const Globals& g, const PretrainArgs& a) {
  harness::ExperimentConfig c = experiment_config(g);
  const harness::Cell cell{agg::structure_from_string(a.structure), agg::L2Mode::Frozen};
  if (cell.structure == agg::Structure::None) fail(ErrorCode::InvalidConfig, "structure none has no level-2 encoder");
  const std::string manifest_path = a.manifest.empty() ? c.dataset.string() : a.manifest;
  if (manifest_path.empty()) fail(ErrorCode::InvalidConfig, "pretrain-l2 needs --manifest or a config dataset");
  const auto data = harness::load_dataset(manifest_path);
  std::vector<features::RegionGrid> corpus;
  for (const auto& s : data.slides) corpus.insert(corpus.end(), s.regions.begin(), s.regions.end());

  ssl::DistillConfig dc;
  dc.encoder = harness::model_config(c, cell, 2).l2();
  ssl::PretrainOptions po;
  po.epochs = a.epochs;
  po.batch_size = a.batch;
  po.base_lr = a.lr;
  po.warmup_epochs = a.warmup;
  po.seed = c.seed;
  const fs::path dir = out_dir(g, "pretrain");
  fs::create_directories(dir);
  po.log_path = dir / "pretrain_log.csv";
  const auto result = ssl::pretrain_l2(corpus, dc, po);
  const fs::path ckpt = dir / ("l2_" + a.structure + ".sfw");
  nn::save_parameters(ckpt, result.checkpoint);
  std::cerr << corpus.size() << " regions, loss " << result.epoch_loss.front() << " -> " << result.epoch_loss.back()
            << '\n';
  std::cout << ckpt.string() << '\n';
  return 0;
}

// ---- train / eval

struct TrainArgs {
  std::string cell = "medium/random_init";
  std::string model_out;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  harness::ExperimentConfig c = experiment_config(g);
  const harness::Cell cell = harness::cell_from_string(a.cell);
  c.cells = {cell};
  harness::validate(c);
  const auto data = harness::load_dataset(c.dataset, c.dtype);
  std::vector<std::string> ids;
  for (const auto& e : data.manifest.entries) ids.push_back(e.slide_id);
  std::optional<nn::ParameterList> checkpoint;
  if (cell.mode == agg::L2Mode::Frozen || cell.mode == agg::L2Mode::Finetune) {
    const auto it = c.l2_checkpoints.find(cell.structure);
    if (it == c.l2_checkpoints.end())
      fail(ErrorCode::MissingCheckpoint, "cell " + a.cell + " needs l2_checkpoints." + agg::to_string(cell.structure));
    checkpoint = nn::load_parameters(it->second);
  }
  std::vector<double> loss;
  const auto model = harness::train_model(c, cell, data, ids, c.seed, checkpoint, &loss);
  fs::create_directories(c.out);
  const fs::path path = a.model_out.empty() ? c.out / "model.sfw" : fs::path(a.model_out);
  agg::save_model(path, model);
  for (std::size_t e = 0; e < loss.size(); ++e) std::cerr << "epoch " << e + 1 << " loss " << loss[e] << '\n';
  std::cout << path.string() << '\n';
  return 0;
}

struct EvalArgs {
  std::string model;
  std::string manifest;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  harness::ExperimentConfig c = experiment_config(g);
  if (!a.manifest.empty()) c.dataset = a.manifest;
  const auto model = agg::load_model(a.model);
  c.task = model.config().task;
  const auto data = harness::load_dataset(c.dataset, model.dtype());
  std::vector<std::string> ids;
  for (const auto& e : data.manifest.entries) ids.push_back(e.slide_id);
  const double value = harness::score_model(model, data, ids);
  std::printf("%s %.6f\n", harness::metric_name(c, data).c_str(), value);
  return 0;
}

// ---- matrix / report

struct MatrixArgs {
  std::optional<std::size_t> stop_after;
  int cell_threads = 1;
  bool quiet = false;
};

int cmd_matrix(const Globals& g, const MatrixArgs& a) {
  const harness::ExperimentConfig c = experiment_config(g);
  harness::MatrixOptions o;
  o.stop_after_cells = a.stop_after;
  o.cell_threads = a.cell_threads;
  o.quiet = a.quiet;
  const auto result = harness::run_matrix(c, o);
  std::cerr << result.computed << " cells computed, " << result.resumed << " loaded\n";
  if (!result.complete) {
    std::cerr << "stopped early; rerun to finish\n";
    return 0;
  }
  std::cout << harness::grid_text(result.records);
  return 0;
}

int cmd_report(const Globals& g) {
  const harness::ExperimentConfig c = experiment_config(g);
  const auto records = harness::stored_records(c);
  harness::emit_report(records, c.out);
  std::cout << harness::grid_text(records);
  return 0;
}

int exit_code(ErrorCode code) {
  switch (category_of(code)) {
    case ErrorCategory::Config: return kExitConfig;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Numeric: return kExitNumeric;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-slide image MIL workbench"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON, comments allowed)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic dataset with a planted signal");
  s->add_option("--rule", synth.rule, "local | arrangement")->check(CLI::IsMember({"local", "arrangement"}));
  s->add_option("--slides", synth.slides, "Slide count")->check(CLI::PositiveNumber);
  s->add_option("--motifs", synth.motifs, "Motifs of each kind per slide")->check(CLI::PositiveNumber);
  s->add_flag("--features-only", synth.features_only, "Skip writing slide pyramids");

  TileArgs tile;
  auto* t = app.add_subcommand("tile", "Tissue mask and nested patch index of one slide");
  t->add_option("slide", tile.slide, "Pyramid directory or PPM raster")->required();
  t->add_option("--mpp", tile.mpp, "Resolution of a raster without sidecar");
  t->add_option("--l1-threshold", tile.l1, "Level-1 foreground threshold");
  t->add_option("--l2-threshold", tile.l2, "Level-2 foreground threshold");

  NormalizeArgs norm;
  auto* n = app.add_subcommand("normalize", "Macenko-normalize a PPM image");
  n->add_option("input", norm.input, "PPM image");
  n->add_option("--reference", norm.reference, "Reference stain JSON (default: built-in reference tile)");
  n->add_flag("--write-reference", norm.write_reference, "Also write the reference stain JSON");

  EmbedArgs embed;
  auto* e = app.add_subcommand("embed", "Embed every slide of a manifest with the toy encoder");
  e->add_option("manifest", embed.manifest, "Slide manifest")->required()->check(CLI::ExistingFile);
  e->add_option("--mpp", embed.mpp, "Resolution of rasters without sidecar");
  e->add_option("--l1-threshold", embed.l1, "Level-1 foreground threshold");
  e->add_option("--l2-threshold", embed.l2, "Level-2 foreground threshold");
  e->add_option("--reference", embed.reference, "Reference stain JSON");
  e->add_flag("--no-normalize", embed.no_normalize, "Skip stain normalization");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain-l2", "Self-distillation pre-training of a level-2 encoder");
  p->add_option("--manifest", pre.manifest, "Manifest with features (default: config dataset)");
  p->add_option("--structure", pre.structure, "most | medium")->check(CLI::IsMember({"most", "medium"}));
  p->add_option("--epochs", pre.epochs)->check(CLI::PositiveNumber);
  p->add_option("--batch", pre.batch)->check(CLI::PositiveNumber);
  p->add_option("--lr", pre.lr, "Peak learning rate");
  p->add_option("--warmup", pre.warmup, "Warm-up epochs");

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train one cell on every slide of the dataset");
  tr->add_option("--cell", train.cell, "e.g. none, medium/random_init, most/frozen");
  tr->add_option("--model-out", train.model_out, "Model path (default <out>/model.sfw)");

  EvalArgs ev;
  auto* evc = app.add_subcommand("eval", "Score a saved model on a manifest");
  evc->add_option("model", ev.model, "Saved model")->required()->check(CLI::ExistingFile);
  evc->add_option("--manifest", ev.manifest, "Manifest with features (default: config dataset)");

  MatrixArgs matrix;
  auto* m = app.add_subcommand("matrix", "Run the structure x level-2 regime grid");
  m->add_option("--stop-after", matrix.stop_after, "Stop after computing this many cells");
  m->add_option("--cell-threads", matrix.cell_threads, "Cells trained concurrently")->check(CLI::PositiveNumber);
  m->add_flag("--quiet", matrix.quiet);

  auto* r = app.add_subcommand("report", "Rebuild report files from stored cells");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*s) return cmd_synth(g, synth);
    if (*t) return cmd_tile(g, tile);
    if (*n) return cmd_normalize(g, norm);
    if (*e) return cmd_embed(g, embed);
    if (*p) return cmd_pretrain(g, pre);
    if (*tr) return cmd_train(g, train);
    if (*evc) return cmd_eval(g, ev);
    if (*m) return cmd_matrix(g, matrix);
    if (*r) return cmd_report(g);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code(err.code());
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitData;
  }
  return 0;
}

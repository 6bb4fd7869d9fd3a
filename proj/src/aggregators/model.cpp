#include "wsi/aggregators/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "wsi/error.hpp"
#include "wsi/tensor_core/checkpoint.hpp"

namespace wsi::agg {

using nlohmann::json;

std::string to_string(Structure s) {
  switch (s) {
    case Structure::None: return "none";
    case Structure::Medium: return "medium";
    case Structure::Most: return "most";
  }
  return "?";
}

std::string to_string(L2Mode m) {
  switch (m) {
    case L2Mode::Unset: return "unset";
    case L2Mode::Frozen: return "frozen";
    case L2Mode::Finetune: return "finetune";
    case L2Mode::RandomInit: return "random_init";
  }
  return "?";
}

std::string to_string(Task t) { return t == Task::Survival ? "survival" : "classification"; }

Structure structure_from_string(const std::string& s) {
  if (s == "none") return Structure::None;
  if (s == "medium") return Structure::Medium;
  if (s == "most") return Structure::Most;
  fail(ErrorCode::InvalidConfig, "unknown structure '" + s + "'");
}

L2Mode l2_mode_from_string(const std::string& s) {
  if (s == "unset" || s.empty()) return L2Mode::Unset;
  if (s == "frozen") return L2Mode::Frozen;
  if (s == "finetune") return L2Mode::Finetune;
  if (s == "random_init") return L2Mode::RandomInit;
  fail(ErrorCode::InvalidConfig, "unknown l2 mode '" + s + "'");
}

Task task_from_string(const std::string& s) {
  if (s == "classification") return Task::Classification;
  if (s == "survival") return Task::Survival;
  fail(ErrorCode::InvalidConfig, "unknown task '" + s + "'");
}

ModelConfig make_config(Structure structure, L2Mode mode, std::size_t classes, std::uint64_t seed, Task task) {
  ModelConfig c;
  c.structure = structure;
  c.l2_mode = mode;
  c.classes = classes;
  c.seed = seed;
  c.task = task;
  if (structure == Structure::Most) {
    c.l2_layers = 6;
    c.l2_heads = 6;
  } else {
    c.l2_layers = 2;
    c.l2_heads = 3;
  }
  return c;
}

void validate(const ModelConfig& c) {
  if (c.structure == Structure::None && c.l2_mode != L2Mode::Unset)
    fail(ErrorCode::InvalidConfig, "structure none has no level-2 encoder; l2_mode must be unset");
  if (c.structure != Structure::None && c.l2_mode == L2Mode::Unset)
    fail(ErrorCode::InvalidConfig, "transformer structures need an l2_mode");
  if (c.l1_dim == 0 || c.l2_dim == 0 || c.instance_hidden == 0 || c.mlp_ratio == 0)
    fail(ErrorCode::InvalidConfig, "model dimensions must be positive");
  if (c.task == Task::Classification && c.classes < 2) fail(ErrorCode::InvalidConfig, "need at least 2 classes");
  if (c.structure != Structure::None) {
    if (c.l2_layers == 0 || c.l3_layers == 0) fail(ErrorCode::InvalidConfig, "transformer depth must be positive");
    if (c.l2_heads == 0 || c.l2_dim % c.l2_heads)
      fail(ErrorCode::DimNotDivisibleByHeads, "l2_dim " + std::to_string(c.l2_dim) + " heads " +
                                                  std::to_string(c.l2_heads));
    if (c.l3_heads == 0 || c.l2_dim % c.l3_heads)
      fail(ErrorCode::DimNotDivisibleByHeads, "l2_dim " + std::to_string(c.l2_dim) + " l3 heads " +
                                                  std::to_string(c.l3_heads));
  }
}

json to_json(const ModelConfig& c) {
  return {{"structure", to_string(c.structure)},
          {"l2_mode", to_string(c.l2_mode)},
          {"task", to_string(c.task)},
          {"l1_dim", c.l1_dim},
          {"l2_dim", c.l2_dim},
          {"classes", c.classes},
          {"l2_layers", c.l2_layers},
          {"l2_heads", c.l2_heads},
          {"l3_layers", c.l3_layers},
          {"l3_heads", c.l3_heads},
          {"mlp_ratio", c.mlp_ratio},
          {"instance_hidden", c.instance_hidden},
          {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  try {
    ModelConfig c = make_config(structure_from_string(j.at("structure").get<std::string>()),
                                l2_mode_from_string(j.value("l2_mode", std::string("unset"))),
                                j.value("classes", std::size_t{2}), j.value("seed", std::uint64_t{0}),
                                task_from_string(j.value("task", std::string("classification"))));
    c.l1_dim = j.value("l1_dim", c.l1_dim);
    c.l2_dim = j.value("l2_dim", c.l2_dim);
    c.l2_layers = j.value("l2_layers", c.l2_layers);
    c.l2_heads = j.value("l2_heads", c.l2_heads);
    c.l3_layers = j.value("l3_layers", c.l3_layers);
    c.l3_heads = j.value("l3_heads", c.l3_heads);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.instance_hidden = j.value("instance_hidden", c.instance_hidden);
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("model config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Level-2 encoder

L2Encoder::L2Encoder(const L2EncoderConfig& c, Rng& rng, DType dtype)
    : config(c),
      proj(c.l1_dim, c.dim, rng, dtype),
      pos(nn::normal_parameter({features::kRegionSlots, c.dim}, 0.02, rng, dtype)),
      cls(nn::normal_parameter({1, c.dim}, 0.02, rng, dtype)),
      encoder(c.dim, c.layers, c.heads, c.mlp_ratio, rng, dtype) {}

Tensor L2Encoder::encode(const Tensor& tokens, const std::vector<std::size_t>& slots, Rng* train_rng,
                         nn::AttentionMaps* maps) const {
  if (slots.empty()) fail(ErrorCode::EmptyRegion, "region without present tokens");
  if (tokens.rows() != slots.size()) fail(ErrorCode::ShapeMismatch, "token count does not match slot count");
  const Tensor x = nn::add(proj(tokens), nn::gather_rows(pos, slots));
  const Tensor out = encoder(nn::concat_rows({cls, x}), nullptr, train_rng, maps);
  return nn::slice_rows(out, 0, 1);
}

Tensor L2Encoder::operator()(const features::RegionGrid& region, DType dtype, Rng* train_rng) const {
  std::vector<std::size_t> slots;
  std::vector<double> values;
  for (int s = 0; s < features::kRegionSlots; ++s) {
    if (!region.present[s]) continue;
    slots.push_back(static_cast<std::size_t>(s));
    values.insert(values.end(), region.token(s), region.token(s) + region.dim);
  }
  if (slots.empty()) fail(ErrorCode::EmptyRegion, "region without present tokens");
  return encode(Tensor::from_values({slots.size(), region.dim}, values, dtype), slots, train_rng);
}

void L2Encoder::collect(ParameterList& out) const {
  proj.collect("l2.proj", out);
  out.push_back({"l2.pos", pos});
  out.push_back({"l2.cls", cls});
  encoder.collect("l2.encoder", out);
}

ParameterList L2Encoder::parameters() const {
  ParameterList out;
  collect(out);
  return out;
}

L2Encoder L2Encoder::deep_copy() const {
  Rng scratch(0);
  L2Encoder copy(config, scratch, proj.weight.dtype());
  nn::copy_values(copy.parameters(), parameters());
  return copy;
}

// ---------------------------------------------------------------------------
// Level-3 classifier

L3Classifier::L3Classifier(std::size_t dim, std::size_t layers, std::size_t heads, std::size_t mlp_ratio,
                           std::size_t outputs, Rng& rng, DType dtype)
    : cls(nn::normal_parameter({1, dim}, 0.02, rng, dtype)),
      encoder(dim, layers, heads, mlp_ratio, rng, dtype),
      head(dim, outputs, rng, dtype) {}

Tensor L3Classifier::operator()(const Tensor& regions, Rng* train_rng, nn::AttentionMaps* maps) const {
  if (regions.rank() != 2 || regions.rows() == 0) fail(ErrorCode::EmptyInput, "no region embeddings");
  std::vector<std::uint8_t> key_mask(regions.rows() + 1, 1);
  key_mask[0] = 0;
  const Tensor out = encoder(nn::concat_rows({cls, regions}), &key_mask, train_rng, maps);
  return head(nn::slice_rows(out, 0, 1));
}

void L3Classifier::collect(ParameterList& out) const {
  out.push_back({"l3.cls", cls});
  encoder.collect("l3.encoder", out);
  head.collect("l3.head", out);
}

// ---------------------------------------------------------------------------
// Max-MIL

MaxMilHead::MaxMilHead(std::size_t in, std::size_t hidden, std::size_t outputs, Rng& rng, DType dtype)
    : mlp(in, hidden, outputs, rng, dtype) {}

void MaxMilHead::collect(ParameterList& out) const { mlp.collect("mil.mlp", out); }

std::size_t select_instance(const std::vector<double>& logits, std::size_t rows, std::size_t cols) {
  if (rows == 0) fail(ErrorCode::EmptyBag, "no instances to select from");
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = logits.data() + r * cols;
    double score;
    if (cols == 1) {
      score = row[0];
    } else if (cols == 2) {
      // Positive-class probability is monotone in l1 - l0.
      score = row[1] - row[0];
    } else {
      // Largest class probability = 1 / sum_j exp(l_j - max l).
      const double mx = *std::max_element(row, row + cols);
      double z = 0;
      for (std::size_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
      score = 1.0 / z;
    }
    if (score > best_score) {
      best_score = score;
      best = r;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Slide model

SlideData prepare_slide(features::FeatureBag bag, DType dtype) {
  if (bag.entries.empty()) fail(ErrorCode::EmptyBag, "slide " + bag.slide_id + " has no patches");
  features::validate(bag);
  features::sort_entries(bag);
  SlideData d;
  d.slide_id = bag.slide_id;
  std::vector<double> values;
  values.reserve(bag.entries.size() * bag.dim);
  for (const auto& e : bag.entries) values.insert(values.end(), e.vector.begin(), e.vector.end());
  d.instances = Tensor::from_values({bag.entries.size(), bag.dim}, values, dtype);
  d.regions = features::group_into_regions(bag);
  for (const auto& r : d.regions) {
    std::vector<std::size_t> slots;
    std::vector<double> tok;
    for (int s = 0; s < features::kRegionSlots; ++s) {
      if (!r.present[s]) continue;
      slots.push_back(static_cast<std::size_t>(s));
      tok.insert(tok.end(), r.token(s), r.token(s) + r.dim);
    }
    d.region_tokens.push_back(Tensor::from_values({slots.size(), r.dim}, tok, dtype));
    d.region_slots.push_back(std::move(slots));
  }
  d.bag = std::move(bag);
  return d;
}

SlideModel::SlideModel(const ModelConfig& config, DType dtype) : config_(config), dtype_(dtype) {
  validate(config_);
  if (config_.structure == Structure::None) {
    Rng rng(mix_seed(config_.seed, 1));
    mil_ = MaxMilHead(config_.l1_dim, config_.instance_hidden, config_.outputs(), rng, dtype);
  } else {
    Rng rng2(mix_seed(config_.seed, 2));
    l2_ = L2Encoder(config_.l2(), rng2, dtype);
    Rng rng3(mix_seed(config_.seed, 3));
    l3_ = L3Classifier(config_.l2_dim, config_.l3_layers, config_.l3_heads, config_.mlp_ratio, config_.outputs(), rng3,
                       dtype);
  }
}

Tensor SlideModel::encode_regions(const SlideData& slide, Rng* train_rng) const {
  if (!has_l2()) fail(ErrorCode::InvalidConfig, "model has no level-2 encoder");
  std::vector<Tensor> rows;
  rows.reserve(slide.region_tokens.size());
  for (std::size_t r = 0; r < slide.region_tokens.size(); ++r)
    rows.push_back(l2_.encode(slide.region_tokens[r], slide.region_slots[r], train_rng));
  if (rows.empty()) fail(ErrorCode::EmptyInput, "slide " + slide.slide_id + " has no regions");
  return nn::concat_rows(rows);
}

ForwardOutput SlideModel::forward(const SlideData& slide, Rng* train_rng, const Tensor* region_cache,
                                  bool want_attention) const {
  ForwardOutput out;
  if (!has_l2()) {
    const Tensor all = mil_.mlp(slide.instances);
    const std::size_t sel = select_instance(all.to_vector(), all.rows(), all.cols());
    out.logits = nn::gather_rows(all, {sel});
    out.selected = sel;
    return out;
  }
  const Tensor regions = region_cache ? *region_cache : encode_regions(slide, train_rng);
  nn::AttentionMaps maps;
  out.logits = l3_(regions, train_rng, want_attention ? &maps : nullptr);
  if (want_attention) {
    const std::size_t n = maps.tokens;
    out.region_attention.assign(n - 1, 0.0);
    for (const auto& head : maps.per_head)
      for (std::size_t r = 1; r < n; ++r) out.region_attention[r - 1] += head[r] / maps.per_head.size();
  }
  return out;
}

SlidePrediction SlideModel::predict(const SlideData& slide) const {
  nn::NoGradGuard guard;
  const ForwardOutput f = forward(slide, nullptr, nullptr, true);
  SlidePrediction p;
  p.logits = f.logits.to_vector();
  const double mx = *std::max_element(p.logits.begin(), p.logits.end());
  double z = 0;
  for (double l : p.logits) z += std::exp(l - mx);
  for (double l : p.logits) p.probabilities.push_back(std::exp(l - mx) / z);
  if (f.selected) {
    const auto& e = slide.bag.entries[*f.selected];
    p.selected_instance = std::make_pair(e.grid_x, e.grid_y);
  }
  p.region_attention = f.region_attention;
  return p;
}

SurvivalPrediction SlideModel::predict_risk(const SlideData& slide) const {
  nn::NoGradGuard guard;
  return {forward(slide).logits.item()};
}

ParameterList SlideModel::parameters() const {
  ParameterList out;
  if (has_l2()) {
    l2_.collect(out);
    l3_.collect(out);
  } else {
    mil_.collect(out);
  }
  return out;
}

std::vector<Tensor> SlideModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& p : parameters())
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

ParameterList SlideModel::l2_parameters() const {
  if (!has_l2()) return {};
  return l2_.parameters();
}

SlideModel build_model(const ModelConfig& config, const std::optional<ParameterList>& l2_checkpoint, DType dtype) {
  SlideModel model(config, dtype);
  if (config.l2_mode == L2Mode::Frozen || config.l2_mode == L2Mode::Finetune) {
    if (!l2_checkpoint)
      fail(ErrorCode::MissingCheckpoint, to_string(config.l2_mode) + " mode needs a pre-trained level-2 checkpoint");
    nn::assign_parameters(model.l2_.parameters(), *l2_checkpoint);
    if (config.l2_mode == L2Mode::Frozen)
      for (auto& p : model.l2_.parameters()) p.tensor.set_requires_grad(false);
  }
  return model;
}

SlideModel build_model(const ModelConfig& config, const std::filesystem::path& l2_checkpoint, DType dtype) {
  const bool needs = config.l2_mode == L2Mode::Frozen || config.l2_mode == L2Mode::Finetune;
  if (!needs || l2_checkpoint.empty()) return build_model(config, std::optional<ParameterList>{}, dtype);
  return build_model(config, std::optional<ParameterList>{nn::load_parameters(l2_checkpoint)}, dtype);
}

void save_model(const std::filesystem::path& path, const SlideModel& model) {
  nn::save_parameters(path, model.parameters());
  std::ofstream os(path.string() + ".json");
  if (!os) fail(ErrorCode::Io, "cannot write " + path.string() + ".json");
  os << to_json(model.config()).dump(2) << '\n';
}

SlideModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path.string() + ".json");
  if (!is) fail(ErrorCode::MissingCheckpoint, "no config sidecar for " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidConfig, path.string() + ".json: " + e.what());
  }
  SlideModel model(config_from_json(j), DType::f32);
  nn::assign_parameters(model.parameters(), nn::load_parameters(path));
  if (model.config().l2_mode == L2Mode::Frozen)
    for (auto& p : model.l2_.parameters()) p.tensor.set_requires_grad(false);
  return model;
}

Tensor cox_loss(const Tensor& risks, const std::vector<double>& times, const std::vector<bool>& events) {
  const std::size_t n = risks.rows();
  if (risks.cols() != 1 || times.size() != n || events.size() != n)
    fail(ErrorCode::ShapeMismatch, "cox_loss needs risks [n,1] with n times and events");
  std::vector<std::size_t> event_rows;
  for (std::size_t i = 0; i < n; ++i)
    if (events[i]) event_rows.push_back(i);
  if (event_rows.empty()) fail(ErrorCode::NoEventsInBatch, "batch has no observed events");

  const auto values = risks.to_vector();
  const double shift = *std::max_element(values.begin(), values.end());
  // Risk set of event i: every sample still at risk at t_i (Breslow).
  std::vector<double> at_risk(event_rows.size() * n, 0.0);
  for (std::size_t k = 0; k < event_rows.size(); ++k)
    for (std::size_t j = 0; j < n; ++j) at_risk[k * n + j] = times[j] >= times[event_rows[k]] ? 1.0 : 0.0;
  const Tensor risk_set = Tensor::from_values({event_rows.size(), n}, at_risk, risks.dtype());

  const Tensor denom = nn::matmul(risk_set, nn::exp(nn::add_scalar(risks, -shift)));
  const Tensor log_denom = nn::add_scalar(nn::log(denom), shift);
  return nn::mean(nn::sub(log_denom, nn::gather_rows(risks, event_rows)));
}

}  // namespace wsi::agg

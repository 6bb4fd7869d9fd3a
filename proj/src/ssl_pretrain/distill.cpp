#include "wsi/ssl_pretrain/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "wsi/error.hpp"
#include "wsi/tensor_core/checkpoint.hpp"

namespace wsi::ssl {

using features::kRegionSide;
using features::kRegionSlots;
using features::RegionGrid;

ProjectionHead::ProjectionHead(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, nn::DType dtype)
    : fc1(in, hidden, rng, dtype), fc2(hidden, hidden, rng, dtype), fc3(hidden, out, rng, dtype) {}

void ProjectionHead::collect(const std::string& prefix, ParameterList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
  fc3.collect(prefix + ".fc3", out);
}

namespace {

RegionView view_of(const RegionGrid& region, const std::vector<std::size_t>& slots, nn::DType dtype) {
  std::vector<double> values;
  values.reserve(slots.size() * region.dim);
  for (std::size_t s : slots) values.insert(values.end(), region.token(static_cast<int>(s)), region.token(static_cast<int>(s)) + region.dim);
  return {Tensor::from_values({slots.size(), region.dim}, values, dtype), slots};
}

}  // namespace

RegionView full_view(const RegionGrid& region, nn::DType dtype) {
  std::vector<std::size_t> slots;
  for (int s = 0; s < kRegionSlots; ++s)
    if (region.present[s]) slots.push_back(static_cast<std::size_t>(s));
  if (slots.empty()) fail(ErrorCode::EmptyRegion, "region without present tokens");
  return view_of(region, slots, dtype);
}

RegionView augment(const RegionGrid& region, const DistillConfig& config, Rng& rng, nn::DType dtype) {
  if (region.present_count() == 0) fail(ErrorCode::EmptyRegion, "region without present tokens");
  const int min_side = std::clamp(config.min_crop, 1, kRegionSide);
  std::vector<std::size_t> slots;
  for (int attempt = 0; attempt < 32 && slots.empty(); ++attempt) {
    const int w = min_side + static_cast<int>(rng.below(static_cast<std::uint64_t>(kRegionSide - min_side + 1)));
    const int h = min_side + static_cast<int>(rng.below(static_cast<std::uint64_t>(kRegionSide - min_side + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(kRegionSide - w + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(kRegionSide - h + 1)));
    for (int j = y0; j < y0 + h; ++j)
      for (int i = x0; i < x0 + w; ++i)
        if (region.present[j * kRegionSide + i]) slots.push_back(static_cast<std::size_t>(j * kRegionSide + i));
  }
  if (slots.empty())
    for (int s = 0; s < kRegionSlots; ++s)
      if (region.present[s]) slots.push_back(static_cast<std::size_t>(s));

  const auto drop = static_cast<std::size_t>(std::floor(config.max_token_drop * rng.uniform() *
                                                        static_cast<double>(slots.size())));
  if (drop > 0 && drop < slots.size()) {
    std::vector<std::size_t> order(slots.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::uint8_t> keep(slots.size(), 1);
    for (std::size_t k = 0; k < drop; ++k) keep[order[k]] = 0;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (keep[i]) kept.push_back(slots[i]);
    slots = std::move(kept);
  }
  return view_of(region, slots, dtype);
}

ViewPair make_view_pair(const RegionGrid& region, const DistillConfig& config, Rng& rng, nn::DType dtype) {
  ViewPair pair;
  pair.a = augment(region, config, rng, dtype);
  pair.b = augment(region, config, rng, dtype);
  return pair;
}

Tensor DistillNetwork::operator()(const RegionView& view) const { return head(encoder.encode(view.tokens, view.slots)); }

ParameterList DistillNetwork::parameters() const {
  ParameterList out;
  encoder.collect(out);
  head.collect("head", out);
  return out;
}

DistillState make_distill_state(const DistillConfig& config, std::uint64_t seed, nn::DType dtype) {
  if (!(config.teacher_temp < config.student_temp))
    fail(ErrorCode::InvalidConfig, "teacher temperature must be below the student temperature");
  if (config.teacher_momentum < 0 || config.teacher_momentum > 1 || config.center_momentum < 0 ||
      config.center_momentum > 1)
    fail(ErrorCode::InvalidConfig, "momenta must lie in [0, 1]");
  if (config.encoder.heads == 0 || config.encoder.dim % config.encoder.heads)
    fail(ErrorCode::DimNotDivisibleByHeads, "encoder dim not divisible by heads");
  DistillState state;
  state.config = config;
  Rng rng(mix_seed(seed, 0xd1));
  state.student.encoder = agg::L2Encoder(config.encoder, rng, dtype);
  state.student.head = ProjectionHead(config.encoder.dim, config.head_hidden, config.proj_dim, rng, dtype);
  Rng scratch(0);
  state.teacher.encoder = agg::L2Encoder(config.encoder, scratch, dtype);
  state.teacher.head = ProjectionHead(config.encoder.dim, config.head_hidden, config.proj_dim, scratch, dtype);
  nn::copy_values(state.teacher.parameters(), state.student.parameters());
  for (auto& p : state.teacher.parameters()) p.tensor.set_requires_grad(false);
  state.center.assign(config.proj_dim, 0.0);

  std::vector<Tensor> params;
  for (const auto& p : state.student.parameters()) params.push_back(p.tensor);
  nn::AdamWOptions opt;
  opt.weight_decay = config.weight_decay;
  state.optimizer = std::make_unique<nn::AdamW>(std::move(params), opt);
  return state;
}

StepResult dino_step(DistillState& state, const std::vector<ViewPair>& batch, double lr) {
  if (batch.empty()) fail(ErrorCode::EmptyBatch, "distillation step without views");
  const DistillConfig& cfg = state.config;
  const std::size_t P = cfg.proj_dim;
  const std::size_t rows = 2 * batch.size();

  // Teacher projections in view order a0, b0, a1, b1, ...
  std::vector<double> teacher_raw(rows * P);
  {
    nn::NoGradGuard guard;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto ta = state.teacher(batch[i].a).to_vector();
      const auto tb = state.teacher(batch[i].b).to_vector();
      std::copy(ta.begin(), ta.end(), teacher_raw.begin() + static_cast<std::ptrdiff_t>((2 * i) * P));
      std::copy(tb.begin(), tb.end(), teacher_raw.begin() + static_cast<std::ptrdiff_t>((2 * i + 1) * P));
    }
  }

  // Sharpened, centred teacher distributions; each student row is matched to
  // the teacher distribution of the other view.
  std::vector<double> targets(rows * P);
  double entropy = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* t = teacher_raw.data() + r * P;
    std::vector<double> z(P);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < P; ++k) {
      z[k] = (t[k] - state.center[k]) / cfg.teacher_temp;
      mx = std::max(mx, z[k]);
    }
    double sum = 0;
    for (auto& v : z) sum += (v = std::exp(v - mx));
    const std::size_t partner = r ^ 1;
    for (std::size_t k = 0; k < P; ++k) {
      const double p = z[k] / sum;
      targets[partner * P + k] = p;
      if (p > 0) entropy -= p * std::log(p);
    }
  }
  entropy /= static_cast<double>(rows);

  std::vector<Tensor> student_rows;
  student_rows.reserve(rows);
  for (const auto& pair : batch) {
    student_rows.push_back(state.student(pair.a));
    student_rows.push_back(state.student(pair.b));
  }
  const nn::DType dtype = student_rows.front().dtype();
  const Tensor log_q = nn::log_softmax_rows(nn::scale(nn::concat_rows(student_rows), 1.0 / cfg.student_temp));
  const Tensor target = Tensor::from_values({rows, P}, targets, dtype);
  const Tensor loss = nn::scale(nn::sum(nn::mul(target, log_q)), -1.0 / static_cast<double>(rows));

  state.optimizer->zero_grad();
  nn::backward(loss);
  state.optimizer->step(lr);

  // teacher <- m * teacher + (1 - m) * student
  const double m = cfg.teacher_momentum;
  const auto teacher_params = state.teacher.parameters();
  const auto student_params = state.student.parameters();
  for (std::size_t i = 0; i < teacher_params.size(); ++i) {
    Tensor t = teacher_params[i].tensor;
    const nn::Buffer& s = student_params[i].tensor.data();
    nn::Buffer& tb = t.mutable_data();
    for (std::size_t k = 0; k < tb.size(); ++k) tb.set(k, m * tb.get(k) + (1.0 - m) * s.get(k));
  }

  for (std::size_t k = 0; k < P; ++k) {
    double mean = 0;
    for (std::size_t r = 0; r < rows; ++r) mean += teacher_raw[r * P + k];
    mean /= static_cast<double>(rows);
    state.center[k] = cfg.center_momentum * state.center[k] + (1.0 - cfg.center_momentum) * mean;
  }

  ++state.steps;
  if (entropy < cfg.collapse_entropy)
    ++state.low_entropy_streak;
  else
    state.low_entropy_streak = 0;
  if (cfg.collapse_patience > 0 && state.low_entropy_streak >= cfg.collapse_patience)
    fail(ErrorCode::CollapseDetected, "teacher entropy below " + std::to_string(cfg.collapse_entropy) + " for " +
                                          std::to_string(state.low_entropy_streak) + " steps");
  return {loss.item(), entropy};
}

PretrainResult pretrain_l2(const std::vector<RegionGrid>& corpus, const DistillConfig& config,
                           const PretrainOptions& options) {
  if (corpus.size() < 32)
    fail(ErrorCode::CorpusTooSmall, "pre-training needs at least 32 regions, got " + std::to_string(corpus.size()));
  if (options.epochs <= 0 || options.batch_size == 0) fail(ErrorCode::InvalidConfig, "epochs and batch size must be positive");

  DistillState state = make_distill_state(config, options.seed);
  Rng rng(mix_seed(options.seed, 0xa9));
  const std::size_t per_epoch = (corpus.size() + options.batch_size - 1) / options.batch_size;
  nn::LrSchedule schedule;
  schedule.base_lr = options.base_lr;
  schedule.min_lr = std::min(options.min_lr, options.base_lr);
  schedule.total_steps = per_epoch * static_cast<std::size_t>(options.epochs);
  schedule.warmup_steps = per_epoch * static_cast<std::size_t>(std::clamp(options.warmup_epochs, 0, options.epochs));

  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path);
    if (!log) fail(ErrorCode::Io, "cannot write " + options.log_path.string());
    log << "step,loss,teacher_entropy,lr\n";
    log.precision(9);
  }

  PretrainResult result;
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      std::vector<ViewPair> batch;
      for (std::size_t k = b * options.batch_size; k < std::min(corpus.size(), (b + 1) * options.batch_size); ++k)
        batch.push_back(make_view_pair(corpus[order[k]], config, rng, nn::DType::f32));
      const double lr = nn::warmup_cosine_lr(std::min<std::uint64_t>(step, schedule.total_steps), schedule);
      const StepResult r = dino_step(state, batch, lr);
      ++step;
      epoch_loss += r.loss;
      if (log) log << step << ',' << r.loss << ',' << r.teacher_entropy << ',' << lr << '\n';
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(per_epoch));
  }

  // Export a detached copy so later training cannot alias the teacher.
  const agg::L2Encoder exported = state.teacher.encoder.deep_copy();
  result.checkpoint = exported.parameters();
  return result;
}

}  // namespace wsi::ssl

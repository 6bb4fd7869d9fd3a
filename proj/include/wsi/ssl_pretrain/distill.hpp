#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "wsi/aggregators/model.hpp"
#include "wsi/tensor_core/optim.hpp"

namespace wsi::ssl {

using agg::L2EncoderConfig;
using nn::ParameterList;
using nn::Tensor;

struct DistillConfig {
  L2EncoderConfig encoder;
  std::size_t head_hidden = 384;
  std::size_t proj_dim = 256;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double teacher_momentum = 0.996;
  double center_momentum = 0.9;
  double weight_decay = 0.04;
  /// Smallest crop side in region slots.
  int min_crop = 8;
  /// Upper bound on the share of cropped tokens dropped.
  double max_token_drop = 0.2;
  /// Consecutive low-entropy steps that count as collapse; 0 disables.
  int collapse_patience = 100;
  double collapse_entropy = 0.1;
};

/// Three-layer GELU projection head on the encoder output.
struct ProjectionHead {
  nn::Linear fc1, fc2, fc3;

  ProjectionHead() = default;
  ProjectionHead(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, nn::DType dtype);
  Tensor operator()(const Tensor& x) const { return fc3(nn::gelu(fc2(nn::gelu(fc1(x))))); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Augmented view of a region: present tokens and their original slots.
struct RegionView {
  Tensor tokens;  // [n, l1_dim]
  std::vector<std::size_t> slots;
};

struct ViewPair {
  RegionView a;
  RegionView b;
};

/// Full view of all present tokens.
RegionView full_view(const features::RegionGrid& region, nn::DType dtype);

/// Random contiguous sub-grid crop (side >= min_crop) followed by dropping up
/// to max_token_drop of the remaining tokens; slots keep their positions.
/// Crops without present tokens are redrawn; at least one token survives.
RegionView augment(const features::RegionGrid& region, const DistillConfig& config, Rng& rng, nn::DType dtype);
ViewPair make_view_pair(const features::RegionGrid& region, const DistillConfig& config, Rng& rng, nn::DType dtype);

struct DistillNetwork {
  agg::L2Encoder encoder;
  ProjectionHead head;

  Tensor operator()(const RegionView& view) const;
  ParameterList parameters() const;
};

struct DistillState {
  DistillConfig config;
  DistillNetwork student;
  DistillNetwork teacher;
  std::vector<double> center;
  std::unique_ptr<nn::AdamW> optimizer;
  std::uint64_t steps = 0;
  int low_entropy_streak = 0;
};

/// Student initialized from `seed`; teacher starts as an exact copy.
DistillState make_distill_state(const DistillConfig& config, std::uint64_t seed, nn::DType dtype = nn::DType::f32);

struct StepResult {
  double loss = 0;
  /// Mean entropy (nats) of the teacher's output distributions.
  double teacher_entropy = 0;
};

/// One self-distillation update: cross-view teacher/student cross-entropy,
/// AdamW on the student, then EMA of the teacher and the center.
/// Throws EmptyBatch or CollapseDetected.
StepResult dino_step(DistillState& state, const std::vector<ViewPair>& batch, double lr);

struct PretrainOptions {
  int epochs = 800;
  std::size_t batch_size = 32;
  double base_lr = 5e-4;
  double min_lr = 1e-6;
  int warmup_epochs = 10;
  std::uint64_t seed = 0;
  /// CSV `step,loss,teacher_entropy,lr`; empty skips the log.
  std::filesystem::path log_path;
};

struct PretrainResult {
  /// Teacher encoder parameters named "l2.*".
  ParameterList checkpoint;
  std::vector<double> epoch_loss;
};

/// Throws CorpusTooSmall below 32 regions.
PretrainResult pretrain_l2(const std::vector<features::RegionGrid>& corpus, const DistillConfig& config,
                           const PretrainOptions& options);

}  // namespace wsi::ssl

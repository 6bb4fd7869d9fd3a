#pragma once

#include <cstdint>
#include <vector>

#include "wsi/tensor_core/tensor.hpp"

namespace wsi::nn {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Decoupled decay coefficient; 0 gives plain Adam.
  double weight_decay = 0.0;
};

struct OptimizerState {
  std::vector<Buffer> m;
  std::vector<Buffer> v;
  std::uint64_t t = 0;
  AdamWOptions options;
};

OptimizerState make_optimizer_state(const std::vector<Tensor>& params, const AdamWOptions& options);

/// One AdamW update. `grads[i]` pairs with `params[i]`; a null entry counts as
/// a zero gradient.
void adamw_step(std::vector<Tensor>& params, const std::vector<const Buffer*>& grads, OptimizerState& state,
                double lr);

/// AdamW bound to a fixed parameter set, reading gradients from the tensors.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWOptions options = {});

  void step(double lr);
  void zero_grad();

  const std::vector<Tensor>& parameters() const { return params_; }
  const OptimizerState& state() const { return state_; }
  /// True if `tensor` shares storage with a tracked parameter.
  bool tracks(const Tensor& tensor) const;

 private:
  std::vector<Tensor> params_;
  OptimizerState state_;
};

struct LrSchedule {
  double base_lr = 5e-4;
  std::uint64_t warmup_steps = 0;
  std::uint64_t total_steps = 1;
  double min_lr = 1e-6;
};

/// Linear warmup from 0 to base_lr, then cosine decay to min_lr at total_steps.
double warmup_cosine_lr(std::uint64_t step, const LrSchedule& schedule);

}  // namespace wsi::nn

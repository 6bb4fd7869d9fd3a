#include "wsi/tensor_core/optim.hpp"

#include <cmath>
#include <numbers>

#include "wsi/error.hpp"

namespace wsi::nn {

OptimizerState make_optimizer_state(const std::vector<Tensor>& params, const AdamWOptions& options) {
  OptimizerState state;
  state.options = options;
  for (const auto& p : params) {
    state.m.emplace_back(p.dtype(), p.numel());
    state.v.emplace_back(p.dtype(), p.numel());
  }
  return state;
}

void adamw_step(std::vector<Tensor>& params, const std::vector<const Buffer*>& grads, OptimizerState& state,
                double lr) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "adamw_step: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || (grads[i] && grads[i]->size() != params[i].numel()))
      fail(ErrorCode::ShapeMismatch, "adamw_step: shape mismatch for parameter " + std::to_string(i));
  }
  if (lr < 0) fail(ErrorCode::InvalidConfig, "adamw_step: negative learning rate");

  state.t += 1;
  const auto& opt = state.options;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  const double decay = 1.0 - lr * opt.weight_decay;

  for (std::size_t i = 0; i < params.size(); ++i) {
    dispatch(params[i].dtype(), [&]<typename T>() {
      auto p = params[i].mutable_data().span<T>();
      auto m = state.m[i].span<T>();
      auto v = state.v[i].span<T>();
      const T* g = grads[i] ? grads[i]->span<T>().data() : nullptr;
      const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
      const T step = static_cast<T>(lr / bc1), inv_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
      const T eps = static_cast<T>(opt.eps), keep = static_cast<T>(decay);
      const std::size_t n = p.size();
      T* pp = p.data();
      T* mp = m.data();
      T* vp = v.data();
      if (g) {
        for (std::size_t k = 0; k < n; ++k) {
          const T mk = b1 * mp[k] + (T(1) - b1) * g[k];
          const T vk = b2 * vp[k] + (T(1) - b2) * g[k] * g[k];
          mp[k] = mk;
          vp[k] = vk;
          pp[k] = pp[k] * keep - step * mk / (std::sqrt(vk) * inv_bc2 + eps);
        }
      } else {
        for (std::size_t k = 0; k < n; ++k) {
          mp[k] *= b1;
          vp[k] *= b2;
          pp[k] = pp[k] * keep - step * mp[k] / (std::sqrt(vp[k]) * inv_bc2 + eps);
        }
      }
    });
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWOptions options)
    : params_(std::move(params)), state_(make_optimizer_state(params_, options)) {}

void AdamW::step(double lr) {
  std::vector<const Buffer*> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.push_back(p.has_grad() ? &p.grad() : nullptr);
  adamw_step(params_, grads, state_, lr);
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.clear_grad();
}

bool AdamW::tracks(const Tensor& tensor) const {
  for (const auto& p : params_)
    if (&p.data() == &tensor.data()) return true;
  return false;
}

double warmup_cosine_lr(std::uint64_t step, const LrSchedule& s) {
  if (s.warmup_steps > s.total_steps) fail(ErrorCode::InvalidConfig, "warmup_steps exceeds total_steps");
  if (step > s.total_steps)
    fail(ErrorCode::StepOutOfRange, "step " + std::to_string(step) + " > " + std::to_string(s.total_steps));
  if (step < s.warmup_steps) return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  const std::uint64_t decay_steps = s.total_steps - s.warmup_steps;
  if (decay_steps == 0) return s.base_lr;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(decay_steps);
  return s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace wsi::nn

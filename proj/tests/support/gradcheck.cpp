#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace wsi::testing {

GradCheckResult check_gradients(const std::function<nn::Tensor()>& loss, const std::vector<nn::Tensor>& inputs,
                                std::size_t per_tensor, std::uint64_t sample_seed, double step) {
  std::vector<nn::Tensor> params = inputs;
  for (auto& p : params) p.clear_grad();
  nn::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params)
    analytic.push_back(p.has_grad() ? p.grad_vector() : std::vector<double>(p.numel(), 0.0));

  GradCheckResult result;
  Rng rng(sample_seed);
  for (std::size_t t = 0; t < params.size(); ++t) {
    nn::Tensor p = params[t];
    std::vector<std::size_t> coords(p.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (per_tensor && coords.size() > per_tensor) {
      rng.shuffle(coords);
      coords.resize(per_tensor);
    }
    for (std::size_t i : coords) {
      const double orig = p.at(i);
      auto at = [&](double offset) {
        p.mutable_data().set(i, orig + offset);
        return loss().item();
      };
      // Five-point stencil: O(h^4) truncation lets h stay large enough that
      // rounding noise on exactly-zero gradients stays far below the floor.
      const double numeric = (at(-2 * step) - 8 * at(-step) + 8 * at(step) - at(2 * step)) / (12 * step);
      p.mutable_data().set(i, orig);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = t;
        result.worst_index = i;
      }
    }
  }
  for (auto& p : params) p.clear_grad();
  return result;
}

nn::Tensor random_leaf(nn::Shape shape, Rng& rng, double stddev) {
  std::vector<double> v(nn::numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return nn::Tensor::from_values(std::move(shape), v, nn::DType::f64, true);
}

}  // namespace wsi::testing

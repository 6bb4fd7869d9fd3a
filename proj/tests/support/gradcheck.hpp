#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "wsi/rng.hpp"
#include "wsi/tensor_core/tensor.hpp"

namespace wsi::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  /// Tensor index and flat offset of the worst coordinate.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
};

/// Compare backward() against central differences of `loss` for every
/// coordinate of `inputs` (or `per_tensor` random coordinates of each when
/// nonzero). Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult check_gradients(const std::function<nn::Tensor()>& loss, const std::vector<nn::Tensor>& inputs,
                                std::size_t per_tensor = 0, std::uint64_t sample_seed = 0, double step = 1e-4);

/// f64 leaf with N(0, 1) entries that requires grad.
nn::Tensor random_leaf(nn::Shape shape, Rng& rng, double stddev = 1.0);

}  // namespace wsi::testing

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace wsi::testing {

struct GradCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

/// One finite-difference case per differentiable op plus the three slide
/// models at toy width, all in f64.
std::vector<GradCase> gradient_cases();

}  // namespace wsi::testing

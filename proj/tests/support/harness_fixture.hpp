#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "wsi/harness/experiment.hpp"
#include "wsi/slide_io/synthetic.hpp"

namespace wsi::testing {

/// Features-only synthetic dataset under `dir` (reused when its manifest
/// already exists). Returns the manifest path.
std::filesystem::path feature_dataset(const std::filesystem::path& dir, slide::LabelRule rule, int slides,
                                      std::uint64_t seed);

/// Pre-train level-2 checkpoints for medium and most under `model`, written
/// as `<dir>/l2_<structure>.sfw`. The corpus is the dataset's regions, topped
/// up with toy regions when it holds fewer than 32.
std::map<agg::Structure, std::filesystem::path> pretrain_checkpoints(const harness::Dataset& data,
                                                                      const harness::ModelOverrides& model,
                                                                      const std::filesystem::path& dir, int epochs,
                                                                      std::uint64_t seed);

/// Whole file as a string ("" when missing).
std::string slurp(const std::filesystem::path& path);

}  // namespace wsi::testing

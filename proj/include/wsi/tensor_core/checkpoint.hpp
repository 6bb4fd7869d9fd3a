#pragma once

#include <filesystem>
#include <iosfwd>

#include "wsi/tensor_core/nn.hpp"

namespace wsi::nn {

/// Parameter checkpoint layout (all integers little-endian):
///   "SFW1" | version u32 | count u64 |
///   per parameter: name_len u16, name bytes, rank u8, dims u32[rank], f32[numel]
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_parameters(std::ostream& os, const ParameterList& params);
ParameterList read_parameters(std::istream& is);

void save_parameters(const std::filesystem::path& path, const ParameterList& params);
ParameterList load_parameters(const std::filesystem::path& path);

/// Copy values from `source` into the matching tensors of `target` (converting
/// dtype as needed). Names and shapes must match one-to-one, otherwise
/// CheckpointShapeMismatch.
void assign_parameters(const ParameterList& target, const ParameterList& source);

/// Copy values tensor-by-tensor between two structurally identical lists.
void copy_values(const ParameterList& target, const ParameterList& source);

}  // namespace wsi::nn

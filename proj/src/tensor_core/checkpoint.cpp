#include "wsi/tensor_core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "wsi/binary_io.hpp"
#include "wsi/error.hpp"

namespace wsi::nn {

void write_parameters(std::ostream& os, const ParameterList& params) {
  os.write("SFW1", 4);
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    if (p.name.size() > 0xffff) fail(ErrorCode::BadCheckpoint, "parameter name too long");
    io::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.tensor.shape();
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    const Buffer& data = p.tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) io::write_le<float>(os, static_cast<float>(data.get(i)));
  }
  if (!os) fail(ErrorCode::Io, "failed writing checkpoint");
}

ParameterList read_parameters(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SFW1", 4) != 0) fail(ErrorCode::BadCheckpoint, "bad magic");
  const auto version = io::read_le<std::uint32_t>(is, ErrorCode::BadCheckpoint);
  if (version != kCheckpointVersion) fail(ErrorCode::BadCheckpoint, "unsupported version " + std::to_string(version));
  const auto count = io::read_le<std::uint64_t>(is, ErrorCode::BadCheckpoint);
  ParameterList params;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = io::read_le<std::uint16_t>(is, ErrorCode::BadCheckpoint);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) fail(ErrorCode::BadCheckpoint, "truncated name");
    const auto rank = io::read_le<std::uint8_t>(is, ErrorCode::BadCheckpoint);
    Shape shape(rank);
    for (auto& d : shape) d = io::read_le<std::uint32_t>(is, ErrorCode::BadCheckpoint);
    std::vector<float> values(numel(shape));
    for (auto& v : values) v = io::read_le<float>(is, ErrorCode::BadCheckpoint);
    params.push_back({std::move(name), Tensor::from_buffer(std::move(shape), Buffer(std::move(values)))});
  }
  return params;
}

void save_parameters(const std::filesystem::path& path, const ParameterList& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot open " + path.string());
  write_parameters(os, params);
}

ParameterList load_parameters(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::MissingCheckpoint, "cannot open " + path.string());
  return read_parameters(is);
}

void assign_parameters(const ParameterList& target, const ParameterList& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name[p.name] = &p.tensor;
  if (by_name.size() != target.size())
    fail(ErrorCode::CheckpointShapeMismatch, "checkpoint holds " + std::to_string(by_name.size()) +
                                                 " tensors, model expects " + std::to_string(target.size()));
  for (const auto& p : target) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) fail(ErrorCode::CheckpointShapeMismatch, "checkpoint lacks " + p.name);
    if (it->second->shape() != p.tensor.shape())
      fail(ErrorCode::CheckpointShapeMismatch, p.name + ": checkpoint " + to_string(it->second->shape()) +
                                                   " vs model " + to_string(p.tensor.shape()));
  }
  for (const auto& p : target) {
    Tensor dst = p.tensor;
    dst.mutable_data() = by_name.at(p.name)->data().cast(p.tensor.dtype());
  }
}

void copy_values(const ParameterList& target, const ParameterList& source) {
  if (target.size() != source.size()) fail(ErrorCode::ShapeMismatch, "copy_values: list size mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].tensor.shape() != source[i].tensor.shape())
      fail(ErrorCode::ShapeMismatch, "copy_values: " + target[i].name);
    Tensor dst = target[i].tensor;
    dst.mutable_data() = source[i].tensor.data().cast(dst.dtype());
  }
}

}  // namespace wsi::nn

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wsi/rng.hpp"
#include "wsi/tensor_core/ops.hpp"
#include "wsi/tensor_core/tensor.hpp"

namespace wsi::nn {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedParameter>;

/// Fresh leaf parameter drawn from N(0, stddev^2).
Tensor normal_parameter(Shape shape, double stddev, Rng& rng, DType dtype);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, DType dtype, bool with_bias = true);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(std::size_t dim, DType dtype, double eps = 1e-5);

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Two-layer GELU MLP.
struct FeedForward {
  Linear fc1;
  Linear fc2;

  FeedForward() = default;
  FeedForward(std::size_t dim, std::size_t hidden, std::size_t out, Rng& rng, DType dtype);

  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct MultiHeadAttention {
  Linear qkv;   // [d, 3d]
  Linear proj;  // [d, d]
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng, DType dtype);

  Tensor operator()(const Tensor& tokens, const std::vector<std::uint8_t>* key_mask = nullptr,
                    AttentionMaps* maps = nullptr) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

/// Softmax attention over `tokens[n,d]` with `heads` heads: packed q/k/v
/// projection, per-head scaled dot products, concatenation, output projection.
Tensor multi_head_attention(const Tensor& tokens, const MultiHeadAttention& weights,
                            const std::vector<std::uint8_t>* key_mask = nullptr);

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
struct TransformerBlock {
  LayerNorm norm1;
  MultiHeadAttention attn;
  LayerNorm norm2;
  FeedForward mlp;
  double dropout = 0.0;

  TransformerBlock() = default;
  TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng, DType dtype);

  /// `train_rng` enables dropout; pass null for evaluation.
  Tensor operator()(const Tensor& x, const std::vector<std::uint8_t>* key_mask, Rng* train_rng,
                    AttentionMaps* maps = nullptr) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct TransformerEncoder {
  std::vector<TransformerBlock> blocks;
  LayerNorm norm;

  TransformerEncoder() = default;
  TransformerEncoder(std::size_t dim, std::size_t depth, std::size_t heads, std::size_t mlp_ratio, Rng& rng,
                     DType dtype);

  /// Attention maps, when requested, are taken from the last block.
  Tensor operator()(const Tensor& x, const std::vector<std::uint8_t>* key_mask, Rng* train_rng,
                    AttentionMaps* last_maps = nullptr) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

}  // namespace wsi::nn

#include "wsi/tensor_core/nn.hpp"

#include <cmath>

#include "wsi/error.hpp"

namespace wsi::nn {

Tensor normal_parameter(Shape shape, double stddev, Rng& rng, DType dtype) {
  Tensor t = Tensor::zeros(std::move(shape), dtype, true);
  Buffer& data = t.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) data.set(i, rng.normal(0.0, stddev));
  return t;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, DType dtype, bool with_bias) {
  // Xavier-uniform weights, zero bias.
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  weight = Tensor::zeros({in, out}, dtype, true);
  Buffer& w = weight.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) w.set(i, rng.uniform(-limit, limit));
  if (with_bias) bias = Tensor::zeros({out}, dtype, true);
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim, DType dtype, double eps_)
    : gamma(Tensor::full({dim}, 1.0, dtype)), beta(Tensor::zeros({dim}, dtype)), eps(eps_) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

FeedForward::FeedForward(std::size_t dim, std::size_t hidden, std::size_t out, Rng& rng, DType dtype)
    : fc1(dim, hidden, rng, dtype), fc2(hidden, out, rng, dtype) {}

void FeedForward::collect(const std::string& prefix, ParameterList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads_, Rng& rng, DType dtype)
    : qkv(dim, 3 * dim, rng, dtype), proj(dim, dim, rng, dtype), heads(heads_) {
  if (heads == 0 || dim % heads != 0)
    fail(ErrorCode::DimNotDivisibleByHeads, "dim " + std::to_string(dim) + " heads " + std::to_string(heads));
}

Tensor MultiHeadAttention::operator()(const Tensor& tokens, const std::vector<std::uint8_t>* key_mask,
                                      AttentionMaps* maps) const {
  return proj(attention(qkv(tokens), heads, key_mask, maps));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  qkv.collect(prefix + ".qkv", out);
  proj.collect(prefix + ".proj", out);
}

Tensor multi_head_attention(const Tensor& tokens, const MultiHeadAttention& weights,
                            const std::vector<std::uint8_t>* key_mask) {
  return weights(tokens, key_mask);
}

TransformerBlock::TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng, DType dtype)
    : norm1(dim, dtype), attn(dim, heads, rng, dtype), norm2(dim, dtype), mlp(dim, dim * mlp_ratio, dim, rng, dtype) {}

Tensor TransformerBlock::operator()(const Tensor& x, const std::vector<std::uint8_t>* key_mask, Rng* train_rng,
                                    AttentionMaps* maps) const {
  Tensor a = attn(norm1(x), key_mask, maps);
  if (train_rng) a = nn::dropout(a, dropout, *train_rng);
  Tensor h = add(x, a);
  Tensor f = mlp(norm2(h));
  if (train_rng) f = nn::dropout(f, dropout, *train_rng);
  return add(h, f);
}

void TransformerBlock::collect(const std::string& prefix, ParameterList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attn.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  mlp.collect(prefix + ".mlp", out);
}

TransformerEncoder::TransformerEncoder(std::size_t dim, std::size_t depth, std::size_t heads, std::size_t mlp_ratio,
                                       Rng& rng, DType dtype)
    : norm(dim, dtype) {
  blocks.reserve(depth);
  for (std::size_t i = 0; i < depth; ++i) blocks.emplace_back(dim, heads, mlp_ratio, rng, dtype);
}

Tensor TransformerEncoder::operator()(const Tensor& x, const std::vector<std::uint8_t>* key_mask, Rng* train_rng,
                                      AttentionMaps* last_maps) const {
  Tensor h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    h = blocks[i](h, key_mask, train_rng, i + 1 == blocks.size() ? last_maps : nullptr);
  return norm(h);
}

void TransformerEncoder::collect(const std::string& prefix, ParameterList& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
  norm.collect(prefix + ".norm", out);
}

}  // namespace wsi::nn

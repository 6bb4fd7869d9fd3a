#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "wsi/rng.hpp"
#include "wsi/tensor_core/tensor.hpp"

namespace wsi::nn {

// Row-wise ops treat the last axis as columns and flatten the rest into rows.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// x[n,in] * weight[in,out] + bias[out]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a[rows,n] + row[n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

/// Per-row softmax. Columns whose key flag is 0 get weight exactly 0.
Tensor softmax_rows(const Tensor& a, const std::vector<std::uint8_t>* key_mask = nullptr);
Tensor log_softmax_rows(const Tensor& a);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means over rows: [rows,n] -> [1,n].
Tensor mean_rows(const Tensor& a);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets);

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& a, double p, Rng& rng);

/// Attention weights captured for inspection, one n x n map per head.
struct AttentionMaps {
  std::vector<std::vector<double>> per_head;
  std::size_t tokens = 0;
};

/// Fused scaled-dot-product attention over packed projections qkv[n, 3d]
/// (q | k | v). Keys flagged 0 in `key_mask` receive zero weight; a query
/// whose keys are all masked yields zeros.
Tensor attention(const Tensor& qkv, std::size_t heads, const std::vector<std::uint8_t>* key_mask = nullptr,
                 AttentionMaps* maps = nullptr);

}  // namespace wsi::nn

#include "wsi/tensor_core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "kernels.hpp"
#include "wsi/error.hpp"

namespace wsi::nn {

namespace {

template <typename T>
std::span<const T> input(const Node& node, std::size_t i) {
  return node.inputs[i]->data->span<T>();
}

template <typename T>
std::span<const T> output(const Node& node) {
  return node.output->span<T>();
}

void check_dtypes(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) fail(ErrorCode::ShapeMismatch, std::string(op) + ": dtype mismatch");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check_dtypes(a, b, op);
  if (a.shape() != b.shape())
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void check_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected rank 2, got " + to_string(a.shape()));
}

template <typename T>
void gelu_forward(std::span<const T> x, std::span<T> y) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    y[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  check_dtypes(a, b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    fail(ErrorCode::ShapeMismatch, "matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Buffer c(a.dtype(), m * n);
  dispatch(a.dtype(), [&]<typename T>() {
    kernels::gemm_nn(a.values<T>().data(), b.values<T>().data(), c.span<T>().data(), m, k, n);
  });
  return make_result(
      {m, n}, std::move(c), {a, b},
      [m, k, n](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          const T* go = g.span<T>().data();
          if (gin[0]) kernels::gemm_nt(go, input<T>(node, 1).data(), gin[0]->span<T>().data(), m, n, k);
          if (gin[1]) kernels::gemm_tn(input<T>(node, 0).data(), go, gin[1]->span<T>().data(), m, k, n);
        });
      },
      "matmul");
}

Tensor transpose(const Tensor& a) {
  check_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Buffer out(a.dtype(), m * n);
  dispatch(a.dtype(), [&]<typename T>() {
    auto src = a.values<T>();
    auto dst = out.span<T>();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  });
  return make_result(
      {n, m}, std::move(out), {a},
      [m, n](const Node&, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j * m + i];
        });
      },
      "transpose");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_rank2(weight, "linear");
  check_dtypes(x, weight, "linear");
  const std::size_t in = weight.dim(0), out_dim = weight.dim(1);
  if (x.cols() != in)
    fail(ErrorCode::ShapeMismatch, "linear: input " + to_string(x.shape()) + " weight " + to_string(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) {
    check_dtypes(x, bias, "linear");
    if (bias.numel() != out_dim) fail(ErrorCode::ShapeMismatch, "linear: bias " + to_string(bias.shape()));
  }
  const std::size_t r = x.rows();
  Shape shape = x.shape();
  shape.back() = out_dim;
  Buffer y(x.dtype(), r * out_dim);
  dispatch(x.dtype(), [&]<typename T>() {
    T* yp = y.span<T>().data();
    if (has_bias) {
      auto b = bias.values<T>();
      for (std::size_t i = 0; i < r; ++i) std::copy(b.begin(), b.end(), yp + i * out_dim);
    }
    kernels::gemm_nn(x.values<T>().data(), weight.values<T>().data(), yp, r, in, out_dim);
  });
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(
      std::move(shape), std::move(y), inputs,
      [r, in, out_dim, has_bias](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          const T* go = g.span<T>().data();
          if (gin[0]) kernels::gemm_nt(go, input<T>(node, 1).data(), gin[0]->span<T>().data(), r, out_dim, in);
          if (gin[1]) kernels::gemm_tn(input<T>(node, 0).data(), go, gin[1]->span<T>().data(), r, in, out_dim);
          if (has_bias && gin[2]) {
            T* gb = gin[2]->span<T>().data();
            for (std::size_t i = 0; i < r; ++i) kernels::axpy(T(1), go + i * out_dim, gb, out_dim);
          }
        });
      },
      "linear");
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Buffer out = a.data();
  out.add_(b.data());
  return make_result(
      a.shape(), std::move(out), {a, b},
      [](const Node&, const Buffer& g, GradTargets gin) {
        if (gin[0]) gin[0]->add_(g);
        if (gin[1]) gin[1]->add_(g);
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Buffer out = a.data();
  dispatch(a.dtype(), [&]<typename T>() {
    auto o = out.span<T>();
    auto bv = b.values<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  });
  return make_result(
      a.shape(), std::move(out), {a, b},
      [](const Node&, const Buffer& g, GradTargets gin) {
        if (gin[0]) gin[0]->add_(g);
        if (gin[1]) {
          dispatch(g.dtype(), [&]<typename T>() {
            auto gb = gin[1]->span<T>();
            auto go = g.span<T>();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
          });
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Buffer out = a.data();
  dispatch(a.dtype(), [&]<typename T>() {
    auto o = out.span<T>();
    auto bv = b.values<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  });
  return make_result(
      a.shape(), std::move(out), {a, b},
      [](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          auto av = input<T>(node, 0);
          auto bv = input<T>(node, 1);
          if (gin[0]) {
            auto ga = gin[0]->span<T>();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * bv[i];
          }
          if (gin[1]) {
            auto gb = gin[1]->span<T>();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * av[i];
          }
        });
      },
      "mul");
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  check_dtypes(a, row, "add_row");
  const std::size_t n = a.cols(), r = a.rows();
  if (row.numel() != n) fail(ErrorCode::ShapeMismatch, "add_row: " + to_string(a.shape()) + " + " + to_string(row.shape()));
  Buffer out = a.data();
  dispatch(a.dtype(), [&]<typename T>() {
    auto o = out.span<T>();
    auto rv = row.values<T>();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] += rv[j];
  });
  return make_result(
      a.shape(), std::move(out), {a, row},
      [r, n](const Node&, const Buffer& g, GradTargets gin) {
        if (gin[0]) gin[0]->add_(g);
        if (gin[1]) {
          dispatch(g.dtype(), [&]<typename T>() {
            auto go = g.span<T>();
            auto gr = gin[1]->span<T>();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < n; ++j) gr[j] += go[i * n + j];
          });
        }
      },
      "add_row");
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out = a.data();
  dispatch(a.dtype(), [&]<typename T>() {
    for (auto& v : out.span<T>()) v *= static_cast<T>(factor);
  });
  return make_result(
      a.shape(), std::move(out), {a},
      [factor](const Node&, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<T>(factor) * go[i];
        });
      },
      "scale");
}

Tensor add_scalar(const Tensor& a, double value) {
  Buffer out = a.data();
  dispatch(a.dtype(), [&]<typename T>() {
    for (auto& v : out.span<T>()) v += static_cast<T>(value);
  });
  return make_result(
      a.shape(), std::move(out), {a},
      [](const Node&, const Buffer& g, GradTargets gin) { gin[0]->add_(g); }, "add_scalar");
}

Tensor gelu(const Tensor& a) {
  Buffer out(a.dtype(), a.numel());
  dispatch(a.dtype(), [&]<typename T>() { gelu_forward<T>(a.values<T>(), out.span<T>()); });
  return make_result(
      a.shape(), std::move(out), {a},
      [](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          constexpr double inv_sqrt2 = 0.70710678118654752440;
          const double inv_sqrt2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
          auto x = input<T>(node, 0);
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < ga.size(); ++i) {
            const double v = x[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            ga[i] += static_cast<T>(go[i] * (cdf + v * pdf));
          }
        });
      },
      "gelu");
}

Tensor exp(const Tensor& a) {
  Buffer out = a.data();
  dispatch(a.dtype(), [&]<typename T>() {
    for (auto& v : out.span<T>()) v = std::exp(v);
  });
  return make_result(
      a.shape(), std::move(out), {a},
      [](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto y = output<T>(node);
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * y[i];
        });
      },
      "exp");
}

Tensor log(const Tensor& a) {
  Buffer out = a.data();
  dispatch(a.dtype(), [&]<typename T>() {
    for (auto& v : out.span<T>()) v = std::log(v);
  });
  return make_result(
      a.shape(), std::move(out), {a},
      [](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto x = input<T>(node, 0);
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] / x[i];
        });
      },
      "log");
}

Tensor softmax_rows(const Tensor& a, const std::vector<std::uint8_t>* key_mask) {
  const std::size_t n = a.cols(), r = a.rows();
  if (key_mask && key_mask->size() != n)
    fail(ErrorCode::ShapeMismatch, "softmax_rows: mask length " + std::to_string(key_mask->size()));
  Buffer out(a.dtype(), a.numel());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto y = out.span<T>();
    for (std::size_t i = 0; i < r; ++i) {
      const T* xi = x.data() + i * n;
      T* yi = y.data() + i * n;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        if (!key_mask || (*key_mask)[j]) mx = std::max(mx, xi[j]);
      if (mx == -std::numeric_limits<T>::infinity()) continue;
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (key_mask && !(*key_mask)[j]) continue;
        yi[j] = std::exp(xi[j] - mx);
        total += yi[j];
      }
      for (std::size_t j = 0; j < n; ++j) yi[j] /= total;
    }
  });
  return make_result(
      a.shape(), std::move(out), {a},
      [r, n](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto y = output<T>(node);
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < r; ++i) {
            const T dotp = kernels::dot(go.data() + i * n, y.data() + i * n, n);
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (go[i * n + j] - dotp);
          }
        });
      },
      "softmax_rows");
}

Tensor log_softmax_rows(const Tensor& a) {
  const std::size_t n = a.cols(), r = a.rows();
  Buffer out(a.dtype(), a.numel());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.values<T>();
    auto y = out.span<T>();
    for (std::size_t i = 0; i < r; ++i) {
      const T* xi = x.data() + i * n;
      const T mx = *std::max_element(xi, xi + n);
      T total = 0;
      for (std::size_t j = 0; j < n; ++j) total += std::exp(xi[j] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t j = 0; j < n; ++j) y[i * n + j] = xi[j] - lse;
    }
  });
  return make_result(
      a.shape(), std::move(out), {a},
      [r, n](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto y = output<T>(node);
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < r; ++i) {
            T total = 0;
            for (std::size_t j = 0; j < n; ++j) total += go[i * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[i * n + j] - std::exp(y[i * n + j]) * total;
          }
        });
      },
      "log_softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_dtypes(x, gamma, "layer_norm");
  check_dtypes(x, beta, "layer_norm");
  const std::size_t d = x.cols(), r = x.rows();
  if (d < 2) fail(ErrorCode::ShapeMismatch, "layer_norm: feature dim must be >= 2");
  if (gamma.numel() != d || beta.numel() != d) fail(ErrorCode::ShapeMismatch, "layer_norm: affine size");
  Buffer out(x.dtype(), x.numel());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xv = x.values<T>();
    auto gv = gamma.values<T>();
    auto bv = beta.values<T>();
    auto y = out.span<T>();
    for (std::size_t i = 0; i < r; ++i) {
      const T* xi = xv.data() + i * d;
      double mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += xi[j];
      mu /= static_cast<double>(d);
      double var = 0;
      for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
      var /= static_cast<double>(d);
      const double rstd = 1.0 / std::sqrt(var + eps);
      for (std::size_t j = 0; j < d; ++j) y[i * d + j] = static_cast<T>((xi[j] - mu) * rstd * gv[j] + bv[j]);
    }
  });
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [r, d, eps](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto xv = input<T>(node, 0);
          auto gv = input<T>(node, 1);
          auto go = g.span<T>();
          std::vector<double> xhat(d), dxhat(d);
          for (std::size_t i = 0; i < r; ++i) {
            const T* xi = xv.data() + i * d;
            const T* gi = go.data() + i * d;
            double mu = 0;
            for (std::size_t j = 0; j < d; ++j) mu += xi[j];
            mu /= static_cast<double>(d);
            double var = 0;
            for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
            var /= static_cast<double>(d);
            const double rstd = 1.0 / std::sqrt(var + eps);
            double mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (std::size_t j = 0; j < d; ++j) {
              xhat[j] = (xi[j] - mu) * rstd;
              dxhat[j] = static_cast<double>(gi[j]) * gv[j];
              mean_dxhat += dxhat[j];
              mean_dxhat_xhat += dxhat[j] * xhat[j];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            if (gin[0]) {
              auto gx = gin[0]->span<T>();
              for (std::size_t j = 0; j < d; ++j)
                gx[i * d + j] += static_cast<T>(rstd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat));
            }
            if (gin[1]) {
              auto gg = gin[1]->span<T>();
              for (std::size_t j = 0; j < d; ++j) gg[j] += static_cast<T>(gi[j] * xhat[j]);
            }
            if (gin[2]) {
              auto gb = gin[2]->span<T>();
              for (std::size_t j = 0; j < d; ++j) gb[j] += gi[j];
            }
          }
        });
      },
      "layer_norm");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    check_dtypes(parts.front(), p, "concat_rows");
    if (p.cols() != n) fail(ErrorCode::ShapeMismatch, "concat_rows: column mismatch " + to_string(p.shape()));
    offsets.push_back(total);
    total += p.rows();
  }
  Buffer out(parts.front().dtype(), total * n);
  dispatch(out.dtype(), [&]<typename T>() {
    auto o = out.span<T>();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto v = parts[k].values<T>();
      std::copy(v.begin(), v.end(), o.begin() + static_cast<std::ptrdiff_t>(offsets[k] * n));
    }
  });
  return make_result(
      {total, n}, std::move(out), parts,
      [offsets, n](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          for (std::size_t k = 0; k < gin.size(); ++k) {
            if (!gin[k]) continue;
            auto gp = gin[k]->span<T>();
            const std::size_t start = offsets[k] * n;
            for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[start + i];
          }
        });
        (void)node;
      },
      "concat_rows");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets, widths;
  for (const auto& p : parts) {
    check_dtypes(parts.front(), p, "concat_cols");
    if (p.rows() != r) fail(ErrorCode::ShapeMismatch, "concat_cols: row mismatch " + to_string(p.shape()));
    offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  Buffer out(parts.front().dtype(), r * total);
  dispatch(out.dtype(), [&]<typename T>() {
    auto o = out.span<T>();
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto v = parts[k].values<T>();
      for (std::size_t i = 0; i < r; ++i)
        std::copy_n(v.data() + i * widths[k], widths[k], o.data() + i * total + offsets[k]);
    }
  });
  return make_result(
      {r, total}, std::move(out), parts,
      [offsets, widths, r, total](const Node&, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          for (std::size_t k = 0; k < gin.size(); ++k) {
            if (!gin[k]) continue;
            auto gp = gin[k]->span<T>();
            for (std::size_t i = 0; i < r; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += go[i * total + offsets[k] + j];
          }
        });
      },
      "concat_cols");
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  const std::size_t n = a.cols();
  if (start + count > a.rows()) fail(ErrorCode::ShapeMismatch, "slice_rows out of range");
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = start + i;
  (void)n;
  return gather_rows(a, rows);
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  const std::size_t n = a.cols(), r = a.rows();
  if (start + count > n) fail(ErrorCode::ShapeMismatch, "slice_cols out of range");
  Buffer out(a.dtype(), r * count);
  dispatch(a.dtype(), [&]<typename T>() {
    auto v = a.values<T>();
    auto o = out.span<T>();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * n + start, count, o.data() + i * count);
  });
  return make_result(
      {r, count}, std::move(out), {a},
      [r, n, start, count](const Node&, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < count; ++j) ga[i * n + start + j] += go[i * count + j];
        });
      },
      "slice_cols");
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  const std::size_t n = a.cols(), r = a.rows();
  for (std::size_t idx : rows)
    if (idx >= r) fail(ErrorCode::ShapeMismatch, "gather_rows: index " + std::to_string(idx) + " >= " + std::to_string(r));
  Buffer out(a.dtype(), rows.size() * n);
  dispatch(a.dtype(), [&]<typename T>() {
    auto v = a.values<T>();
    auto o = out.span<T>();
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(v.data() + rows[i] * n, n, o.data() + i * n);
  });
  return make_result(
      {rows.size(), n}, std::move(out), {a},
      [rows, n](const Node&, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          for (std::size_t i = 0; i < rows.size(); ++i)
            kernels::axpy(T(1), go.data() + i * n, ga.data() + rows[i] * n, n);
        });
      },
      "gather_rows");
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel())
    fail(ErrorCode::ShapeMismatch, "reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  return make_result(
      std::move(shape), a.data(), {a}, [](const Node&, const Buffer& g, GradTargets gin) { gin[0]->add_(g); },
      "reshape");
}

Tensor sum(const Tensor& a) {
  Buffer out(a.dtype(), 1);
  dispatch(a.dtype(), [&]<typename T>() {
    double s = 0;
    for (T v : a.values<T>()) s += v;
    out.span<T>()[0] = static_cast<T>(s);
  });
  return make_result(
      {}, std::move(out), {a},
      [](const Node&, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          const T go = g.span<T>()[0];
          for (auto& v : gin[0]->span<T>()) v += go;
        });
      },
      "sum");
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor& a) {
  const std::size_t n = a.cols(), r = a.rows();
  if (r == 0) fail(ErrorCode::ShapeMismatch, "mean_rows on empty tensor");
  Buffer out(a.dtype(), n);
  dispatch(a.dtype(), [&]<typename T>() {
    auto v = a.values<T>();
    auto o = out.span<T>();
    for (std::size_t i = 0; i < r; ++i) kernels::axpy(T(1), v.data() + i * n, o.data(), n);
    for (auto& x : o) x /= static_cast<T>(r);
  });
  return make_result(
      {1, n}, std::move(out), {a},
      [r, n](const Node&, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto go = g.span<T>();
          auto ga = gin[0]->span<T>();
          const T inv = T(1) / static_cast<T>(r);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += go[j] * inv;
        });
      },
      "mean_rows");
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  const std::size_t c = logits.cols(), r = logits.rows();
  if (targets.size() != r) fail(ErrorCode::ShapeMismatch, "cross_entropy: target count");
  for (std::size_t t : targets)
    if (t >= c) fail(ErrorCode::ShapeMismatch, "cross_entropy: target out of range");
  Buffer out(logits.dtype(), 1);
  dispatch(logits.dtype(), [&]<typename T>() {
    auto x = logits.values<T>();
    double total = 0;
    for (std::size_t i = 0; i < r; ++i) {
      const T* xi = x.data() + i * c;
      const double mx = *std::max_element(xi, xi + c);
      double s = 0;
      for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
      total += mx + std::log(s) - xi[targets[i]];
    }
    out.span<T>()[0] = static_cast<T>(total / static_cast<double>(r));
  });
  return make_result(
      {}, std::move(out), {logits},
      [targets, r, c](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto x = input<T>(node, 0);
          auto ga = gin[0]->span<T>();
          const double go = g.span<T>()[0] / static_cast<double>(r);
          for (std::size_t i = 0; i < r; ++i) {
            const T* xi = x.data() + i * c;
            const double mx = *std::max_element(xi, xi + c);
            double s = 0;
            for (std::size_t j = 0; j < c; ++j) s += std::exp(xi[j] - mx);
            for (std::size_t j = 0; j < c; ++j) {
              const double p = std::exp(xi[j] - mx) / s;
              ga[i * c + j] += static_cast<T>(go * (p - (j == targets[i] ? 1.0 : 0.0)));
            }
          }
        });
      },
      "cross_entropy");
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) fail(ErrorCode::ShapeMismatch, "dropout probability must be < 1");
  Buffer keep(a.dtype(), a.numel());
  dispatch(a.dtype(), [&]<typename T>() {
    for (auto& k : keep.span<T>()) k = rng.uniform() < p ? T(0) : static_cast<T>(1.0 / (1.0 - p));
  });
  return mul(a, Tensor::from_buffer(a.shape(), std::move(keep)));
}

Tensor attention(const Tensor& qkv, std::size_t heads, const std::vector<std::uint8_t>* key_mask,
                 AttentionMaps* maps) {
  check_rank2(qkv, "attention");
  const std::size_t n = qkv.dim(0), width = qkv.dim(1);
  if (width % 3 != 0) fail(ErrorCode::ShapeMismatch, "attention: packed width must be 3*d");
  const std::size_t d = width / 3;
  if (heads == 0 || d % heads != 0)
    fail(ErrorCode::DimNotDivisibleByHeads, "dim " + std::to_string(d) + " heads " + std::to_string(heads));
  if (key_mask && key_mask->size() != n) fail(ErrorCode::ShapeMismatch, "attention: mask length");
  const std::size_t dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  Buffer out(qkv.dtype(), n * d);
  auto probs = std::make_shared<Buffer>(qkv.dtype(), heads * n * n);
  dispatch(qkv.dtype(), [&]<typename T>() {
    auto x = qkv.values<T>();
    auto o = out.span<T>();
    auto pr = probs->span<T>();
    const T sc = static_cast<T>(scale_factor);
    for (std::size_t h = 0; h < heads; ++h) {
      T* ph = pr.data() + h * n * n;
      for (std::size_t i = 0; i < n; ++i) {
        const T* qi = x.data() + i * width + h * dh;
        T* pi = ph + i * n;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
          if (key_mask && !(*key_mask)[j]) continue;
          pi[j] = sc * kernels::dot(qi, x.data() + j * width + d + h * dh, dh);
          mx = std::max(mx, pi[j]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;
        T total = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (key_mask && !(*key_mask)[j]) {
            pi[j] = 0;
            continue;
          }
          pi[j] = std::exp(pi[j] - mx);
          total += pi[j];
        }
        T* oi = o.data() + i * d + h * dh;
        for (std::size_t j = 0; j < n; ++j) {
          pi[j] /= total;
          if (pi[j] != T(0)) kernels::axpy(pi[j], x.data() + j * width + 2 * d + h * dh, oi, dh);
        }
      }
    }
  });
  if (maps) {
    maps->tokens = n;
    maps->per_head.assign(heads, std::vector<double>(n * n));
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < n * n; ++i) maps->per_head[h][i] = probs->get(h * n * n + i);
  }
  return make_result(
      {n, d}, std::move(out), {qkv},
      [probs, n, d, dh, heads, width, scale_factor](const Node& node, const Buffer& g, GradTargets gin) {
        dispatch(g.dtype(), [&]<typename T>() {
          auto x = input<T>(node, 0);
          auto go = g.span<T>();
          auto gx = gin[0]->span<T>();
          auto pr = probs->span<T>();
          const T sc = static_cast<T>(scale_factor);
          std::vector<T> dp(n);
          for (std::size_t h = 0; h < heads; ++h) {
            const T* ph = pr.data() + h * n * n;
            for (std::size_t i = 0; i < n; ++i) {
              const T* pi = ph + i * n;
              const T* goi = go.data() + i * d + h * dh;
              T weighted = 0;
              for (std::size_t j = 0; j < n; ++j) {
                if (pi[j] == T(0)) {
                  dp[j] = 0;
                  continue;
                }
                dp[j] = kernels::dot(goi, x.data() + j * width + 2 * d + h * dh, dh);
                weighted += pi[j] * dp[j];
                // dV_j += p_ij * dO_i
                kernels::axpy(pi[j], goi, gx.data() + j * width + 2 * d + h * dh, dh);
              }
              const T* qi = x.data() + i * width + h * dh;
              T* gqi = gx.data() + i * width + h * dh;
              for (std::size_t j = 0; j < n; ++j) {
                if (pi[j] == T(0)) continue;
                const T ds = pi[j] * (dp[j] - weighted) * sc;
                kernels::axpy(ds, x.data() + j * width + d + h * dh, gqi, dh);
                kernels::axpy(ds, qi, gx.data() + j * width + d + h * dh, dh);
              }
            }
          }
        });
      },
      "attention");
}

}  // namespace wsi::nn

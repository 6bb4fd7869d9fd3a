#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace wsi::nn {

/// Element type. Training runs in f32; f64 exists so gradient checks can use
/// tight finite-difference tolerances.
enum class DType : std::uint8_t { f32, f64 };

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Invoke `f.template operator()<T>()` with T = float or double.
template <typename F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f.template operator()<float>();
  return f.template operator()<double>();
}

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Contiguous, typed storage. Zero-initialized on construction.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dtype, std::size_t size);
  explicit Buffer(std::vector<float> values) : data_(std::move(values)) {}
  explicit Buffer(std::vector<double> values) : data_(std::move(values)) {}

  DType dtype() const { return data_.index() == 0 ? DType::f32 : DType::f64; }
  std::size_t size() const;

  template <typename T>
  std::span<T> span() {
    return std::get<std::vector<T>>(data_);
  }
  template <typename T>
  std::span<const T> span() const {
    return std::get<std::vector<T>>(data_);
  }

  double get(std::size_t i) const;
  void set(std::size_t i, double value);
  void fill(double value);
  bool all_finite() const;
  /// this += other (same dtype and size).
  void add_(const Buffer& other);
  std::vector<double> to_vector() const;
  Buffer cast(DType dtype) const;

 private:
  std::variant<std::vector<float>, std::vector<double>> data_;
};

struct Node;

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Buffer> data;
  bool requires_grad = false;
  std::unique_ptr<Buffer> grad;
  std::shared_ptr<Node> grad_fn;
};

/// Shared handle to an n-dimensional array that may participate in automatic
/// differentiation. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::f32, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, const std::vector<double>& values,
                            DType dtype = DType::f32, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, Buffer buffer, bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data->size(); }
  /// Size of the last axis; 1 for scalars.
  std::size_t cols() const;
  /// Product of all axes except the last.
  std::size_t rows() const;
  DType dtype() const { return impl_->data->dtype(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }

  const Buffer& data() const { return *impl_->data; }
  /// In-place access, reserved for optimizers and initializers.
  Buffer& mutable_data() { return *impl_->data; }
  template <typename T>
  std::span<const T> values() const {
    return impl_->data->span<T>();
  }

  double item() const;
  double at(std::size_t flat_index) const { return impl_->data->get(flat_index); }
  std::vector<double> to_vector() const { return impl_->data->to_vector(); }

  bool has_grad() const { return impl_->grad != nullptr; }
  const Buffer& grad() const;
  std::vector<double> grad_vector() const;
  void zero_grad();
  /// Drop the gradient buffer entirely.
  void clear_grad() { impl_->grad.reset(); }

  /// Same storage, cut from the graph.
  Tensor detach() const;
  /// Deep copy of the values as a fresh leaf.
  Tensor clone() const;
  Tensor to(DType dtype) const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared_impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Per-input gradient targets handed to a backward function. Null entries
/// belong to inputs that do not require gradients.
using GradTargets = std::span<Buffer* const>;

using BackwardFn = std::function<void(const Node& node, const Buffer& grad_out, GradTargets grad_in)>;

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<const Buffer> output;
  BackwardFn backward;
  std::string name;
};

/// Wrap a freshly computed value as an op result, recording a graph node when
/// gradients are enabled and any input requires them.
Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs, BackwardFn backward,
                   const char* name);

/// Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad.
void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace wsi::nn

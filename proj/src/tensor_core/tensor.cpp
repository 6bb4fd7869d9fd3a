#include "wsi/tensor_core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "wsi/error.hpp"

namespace wsi::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Buffer

Buffer::Buffer(DType dtype, std::size_t size) {
  if (dtype == DType::f32)
    data_ = std::vector<float>(size, 0.0f);
  else
    data_ = std::vector<double>(size, 0.0);
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, data_);
}

double Buffer::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data_);
}

void Buffer::set(std::size_t i, double value) {
  std::visit([&](auto& v) { v[i] = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
             data_);
}

void Buffer::fill(double value) {
  std::visit(
      [&](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::fill(v.begin(), v.end(), static_cast<T>(value));
      },
      data_);
}

bool Buffer::all_finite() const {
  return std::visit(
      [](const auto& v) { return std::all_of(v.begin(), v.end(), [](auto x) { return std::isfinite(x); }); },
      data_);
}

void Buffer::add_(const Buffer& other) {
  if (other.dtype() != dtype() || other.size() != size())
    fail(ErrorCode::ShapeMismatch, "buffer accumulate with mismatched dtype or size");
  dispatch(dtype(), [&]<typename T>() {
    auto dst = span<T>();
    auto src = other.span<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

std::vector<double> Buffer::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

Buffer Buffer::cast(DType target) const {
  return std::visit(
      [&](const auto& v) {
        if (target == DType::f32) return Buffer(std::vector<float>(v.begin(), v.end()));
        return Buffer(std::vector<double>(v.begin(), v.end()));
      },
      data_);
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  const std::size_t n = nn::numel(shape);
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Buffer>(dtype, n);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  t.mutable_data().fill(value);
  return t;
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values, DType dtype, bool requires_grad) {
  if (nn::numel(shape) != values.size())
    fail(ErrorCode::ShapeMismatch, "from_values: " + to_string(shape) + " vs " + std::to_string(values.size()));
  Buffer buffer = dtype == DType::f32 ? Buffer(std::vector<float>(values.begin(), values.end()))
                                      : Buffer(std::vector<double>(values));
  return from_buffer(std::move(shape), std::move(buffer), requires_grad);
}

Tensor Tensor::from_buffer(Shape shape, Buffer buffer, bool requires_grad) {
  if (nn::numel(shape) != buffer.size())
    fail(ErrorCode::ShapeMismatch, "from_buffer: " + to_string(shape) + " vs " + std::to_string(buffer.size()));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Buffer>(std::move(buffer));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, DType dtype) { return from_values({}, {value}, dtype); }

std::size_t Tensor::cols() const { return impl_->shape.empty() ? 1 : impl_->shape.back(); }

std::size_t Tensor::rows() const {
  const std::size_t c = cols();
  return c == 0 ? 0 : numel() / c;
}

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) fail(ErrorCode::ShapeMismatch, "requires_grad can only be toggled on leaf tensors");
  impl_->requires_grad = flag;
}

double Tensor::item() const {
  if (numel() != 1) fail(ErrorCode::NonScalarLoss, "item() on tensor of shape " + to_string(shape()));
  return impl_->data->get(0);
}

const Buffer& Tensor::grad() const {
  if (!impl_->grad) fail(ErrorCode::ShapeMismatch, "tensor has no gradient");
  return *impl_->grad;
}

std::vector<double> Tensor::grad_vector() const {
  if (!impl_->grad) return std::vector<double>(numel(), 0.0);
  return impl_->grad->to_vector();
}

void Tensor::zero_grad() {
  if (impl_->grad) impl_->grad->fill(0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return from_buffer(impl_->shape, *impl_->data, impl_->requires_grad && is_leaf()); }

Tensor Tensor::to(DType target) const { return from_buffer(impl_->shape, impl_->data->cast(target)); }

// ---------------------------------------------------------------------------
// Graph

Tensor make_result(Shape shape, Buffer value, const std::vector<Tensor>& inputs, BackwardFn backward,
                   const char* name) {
  Tensor out = Tensor::from_buffer(std::move(shape), std::move(value));
  if (!g_grad_enabled) return out;
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return out;

  auto node = std::make_shared<Node>();
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.shared_impl());
  node->output = out.impl()->data;
  node->backward = std::move(backward);
  node->name = name;
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) fail(ErrorCode::NonScalarLoss, "loss has shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  TensorImpl* root = loss.impl();
  if (!root->grad_fn) {
    if (!root->grad) root->grad = std::make_unique<Buffer>(loss.dtype(), 1);
    root->grad->set(0, root->grad->get(0) + 1.0);
    return;
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root->grad_fn.get(), 0);
  visited.insert(root->grad_fn.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next]->grad_fn.get();
      ++next;
      if (child && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* node : order) {
    if (!node->output->all_finite()) fail(ErrorCode::NaNInGraph, "non-finite forward value in " + node->name);
  }

  std::unordered_map<Node*, Buffer> grads;
  grads.emplace(root->grad_fn.get(), Buffer(loss.dtype(), 1)).first->second.fill(1.0);

  std::vector<Buffer*> targets;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    const Buffer grad_out = std::move(found->second);
    grads.erase(found);

    targets.assign(node->inputs.size(), nullptr);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      TensorImpl* input = node->inputs[i].get();
      if (!input->requires_grad) continue;
      if (input->grad_fn) {
        auto [slot, inserted] = grads.try_emplace(input->grad_fn.get());
        if (inserted) slot->second = Buffer(input->data->dtype(), input->data->size());
        targets[i] = &slot->second;
      } else {
        if (!input->grad) input->grad = std::make_unique<Buffer>(input->data->dtype(), input->data->size());
        targets[i] = input->grad.get();
      }
    }
    node->backward(*node, grad_out, targets);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace wsi::nn

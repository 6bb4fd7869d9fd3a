#include "grad_suite.hpp"

#include <cmath>

#include "wsi/aggregators/model.hpp"
#include "wsi/tensor_core/nn.hpp"
#include "wsi/tensor_core/ops.hpp"

namespace wsi::testing {

using nn::Tensor;

namespace {

constexpr auto f64 = nn::DType::f64;

// Random fixed weights turn any tensor into a scalar with a generic gradient.
Tensor probe(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed ^ 0xabcdef);
  std::vector<double> w(t.numel());
  for (auto& x : w) x = rng.normal();
  return nn::sum(nn::mul(t, Tensor::from_values(t.shape(), w, f64)));
}

Tensor positive_leaf(nn::Shape shape, Rng& rng) {
  std::vector<double> v(nn::numel(shape));
  for (auto& x : v) x = 0.5 + rng.uniform();
  return Tensor::from_values(std::move(shape), v, f64, true);
}

std::vector<std::uint8_t> random_mask(std::size_t n, Rng& rng) {
  std::vector<std::uint8_t> m(n);
  for (auto& x : m) x = rng.uniform() < 0.7 ? 1 : 0;
  m[rng.below(n)] = 1;
  return m;
}

std::vector<Tensor> tensors_of(const nn::ParameterList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params)
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  return out;
}

// Unary elementwise/shape ops on a single random leaf.
GradCase unary(std::string name, nn::Shape shape, std::function<Tensor(const Tensor&)> op, bool positive = false) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            Tensor x = positive ? positive_leaf(shape, rng) : random_leaf(shape, rng);
            return check_gradients([&] { return probe(op(x), seed); }, {x});
          }};
}

GradCase binary(std::string name, nn::Shape sa, nn::Shape sb, std::function<Tensor(const Tensor&, const Tensor&)> op) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            Tensor a = random_leaf(sa, rng);
            Tensor b = random_leaf(sb, rng);
            return check_gradients([&] { return probe(op(a, b), seed); }, {a, b});
          }};
}

features::FeatureBag toy_bag(std::size_t dim, Rng& rng) {
  features::FeatureBag bag;
  bag.slide_id = "toy";
  bag.dim = dim;
  // Two regions, a handful of tokens in each.
  for (int region = 0; region < 2; ++region)
    for (int k = 0; k < 3 + region; ++k) {
      features::FeatureEntry e;
      e.grid_x = region * features::kRegionSide + static_cast<int>(rng.below(features::kRegionSide));
      e.grid_y = static_cast<int>(rng.below(features::kRegionSide));
      bool taken = false;
      for (const auto& o : bag.entries) taken |= o.grid_x == e.grid_x && o.grid_y == e.grid_y;
      if (taken) continue;
      e.vector.resize(dim);
      for (auto& v : e.vector) v = static_cast<float>(rng.normal());
      bag.entries.push_back(std::move(e));
    }
  features::sort_entries(bag);
  return bag;
}

GradCase model_case(std::string name, agg::Structure structure, agg::L2Mode mode, agg::Task task) {
  return {name, [=](std::uint64_t seed) {
            Rng rng(seed);
            agg::ModelConfig mc = agg::make_config(structure, mode, 2, seed, task);
            mc.l1_dim = 8;
            mc.l2_dim = 6;
            mc.l3_heads = 3;
            mc.instance_hidden = 5;
            mc.mlp_ratio = 2;
            const agg::SlideModel model = agg::build_model(mc, std::nullopt, f64);
            // Zero-initialized tokens put layer norm at zero variance, where
            // it bends on the scale of sqrt(eps); check at a generic point.
            for (auto& p : model.parameters()) {
              nn::Buffer& b = p.tensor.mutable_data();
              for (std::size_t i = 0; i < b.size(); ++i) b.set(i, b.get(i) + rng.normal(0.0, 0.2));
            }
            if (task == agg::Task::Survival) {
              std::vector<agg::SlideData> slides;
              for (int i = 0; i < 4; ++i) slides.push_back(agg::prepare_slide(toy_bag(8, rng), f64));
              const std::vector<double> times{5, 3, 3, 8};
              const std::vector<bool> events{true, true, false, true};
              return check_gradients(
                  [&] {
                    std::vector<Tensor> risks;
                    for (const auto& s : slides) risks.push_back(model.forward(s).logits);
                    return agg::cox_loss(nn::concat_rows(risks), times, events);
                  },
                  tensors_of(model.parameters()), 4, seed);
            }
            const agg::SlideData slide = agg::prepare_slide(toy_bag(8, rng), f64);
            const std::size_t target = rng.below(2);
            return check_gradients([&] { return nn::cross_entropy(model.forward(slide).logits, {target}); },
                                   tensors_of(model.parameters()), 4, seed);
          }};
}

}  // namespace

std::vector<GradCase> gradient_cases() {
  std::vector<GradCase> cases;
  cases.push_back(binary("matmul", {3, 4}, {4, 2}, nn::matmul));
  cases.push_back(unary("transpose", {3, 5}, nn::transpose));
  cases.push_back({"linear", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_leaf({4, 3}, rng), w = random_leaf({3, 5}, rng), b = random_leaf({5}, rng);
                     return check_gradients([&] { return probe(nn::linear(x, w, b), seed); }, {x, w, b});
                   }});
  cases.push_back(binary("add", {3, 4}, {3, 4}, nn::add));
  cases.push_back(binary("sub", {3, 4}, {3, 4}, nn::sub));
  cases.push_back(binary("mul", {3, 4}, {3, 4}, nn::mul));
  cases.push_back(binary("add_row", {3, 4}, {4}, nn::add_row));
  cases.push_back(unary("scale", {3, 4}, [](const Tensor& x) { return nn::scale(x, -1.7); }));
  cases.push_back(unary("add_scalar", {3, 4}, [](const Tensor& x) { return nn::add_scalar(x, 0.3); }));
  cases.push_back(unary("gelu", {4, 5}, nn::gelu));
  cases.push_back(unary("exp", {3, 4}, nn::exp));
  cases.push_back(unary("log", {3, 4}, nn::log, true));
  cases.push_back({"softmax_rows", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_leaf({4, 6}, rng);
                     const auto mask = random_mask(6, rng);
                     return check_gradients([&] { return probe(nn::softmax_rows(x, &mask), seed); }, {x});
                   }});
  cases.push_back(unary("log_softmax_rows", {4, 6}, [](const Tensor& x) { return nn::log_softmax_rows(x); }));
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_leaf({4, 6}, rng), g = random_leaf({6}, rng), b = random_leaf({6}, rng);
                     return check_gradients([&] { return probe(nn::layer_norm(x, g, b), seed); }, {x, g, b});
                   }});
  cases.push_back(binary("concat_rows", {2, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) {
    return nn::concat_rows({a, b});
  }));
  cases.push_back(binary("concat_cols", {3, 2}, {3, 4}, [](const Tensor& a, const Tensor& b) {
    return nn::concat_cols({a, b});
  }));
  cases.push_back(unary("slice_rows", {5, 3}, [](const Tensor& x) { return nn::slice_rows(x, 1, 3); }));
  cases.push_back(unary("slice_cols", {3, 5}, [](const Tensor& x) { return nn::slice_cols(x, 2, 2); }));
  cases.push_back(unary("gather_rows", {4, 3}, [](const Tensor& x) { return nn::gather_rows(x, {2, 0, 2, 3}); }));
  cases.push_back(unary("reshape", {4, 3}, [](const Tensor& x) { return nn::reshape(x, {2, 6}); }));
  cases.push_back(unary("sum", {3, 4}, [](const Tensor& x) { return nn::mul(nn::sum(x), nn::sum(x)); }));
  cases.push_back(unary("mean", {3, 4}, [](const Tensor& x) { return nn::mul(nn::mean(x), nn::mean(x)); }));
  cases.push_back(unary("mean_rows", {3, 4}, nn::mean_rows));
  cases.push_back({"cross_entropy", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_leaf({3, 4}, rng);
                     const std::vector<std::size_t> targets{rng.below(4), rng.below(4), rng.below(4)};
                     return check_gradients([&] { return nn::cross_entropy(x, targets); }, {x});
                   }});
  cases.push_back({"dropout", [](std::uint64_t seed) {
                     Rng init(seed);
                     Tensor x = random_leaf({4, 5}, init);
                     return check_gradients(
                         [&] {
                           Rng rng(seed + 1);
                           return probe(nn::dropout(x, 0.3, rng), seed);
                         },
                         {x});
                   }});
  cases.push_back({"attention", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor qkv = random_leaf({5, 3 * 6}, rng);
                     const auto mask = random_mask(5, rng);
                     return check_gradients([&] { return probe(nn::attention(qkv, 2, &mask), seed); }, {qkv});
                   }});
  cases.push_back({"multi_head_attention", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_leaf({4, 6}, rng);
                     const nn::MultiHeadAttention mha(6, 3, rng, f64);
                     nn::ParameterList params;
                     mha.collect("mha", params);
                     auto inputs = tensors_of(params);
                     inputs.push_back(x);
                     return check_gradients([&] { return probe(nn::multi_head_attention(x, mha), seed); }, inputs);
                   }});
  cases.push_back({"transformer_block", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor x = random_leaf({4, 6}, rng);
                     const nn::TransformerBlock block(6, 2, 2, rng, f64);
                     const auto mask = random_mask(4, rng);
                     nn::ParameterList params;
                     block.collect("block", params);
                     auto inputs = tensors_of(params);
                     inputs.push_back(x);
                     return check_gradients([&] { return probe(block(x, &mask, nullptr), seed); }, inputs);
                   }});
  cases.push_back({"cox_loss", [](std::uint64_t seed) {
                     Rng rng(seed);
                     Tensor r = random_leaf({6, 1}, rng);
                     const std::vector<double> times{4, 2, 2, 7, 1, 4};
                     std::vector<bool> events{true, false, true, true, false, false};
                     events[rng.below(6)] = true;
                     return check_gradients([&] { return agg::cox_loss(r, times, events); }, {r});
                   }});
  cases.push_back(model_case("model_max_mil", agg::Structure::None, agg::L2Mode::Unset, agg::Task::Classification));
  cases.push_back(
      model_case("model_hiptle", agg::Structure::Medium, agg::L2Mode::RandomInit, agg::Task::Classification));
  cases.push_back(model_case("model_deep", agg::Structure::Most, agg::L2Mode::RandomInit, agg::Task::Classification));
  cases.push_back(model_case("model_hiptle_survival", agg::Structure::Medium, agg::L2Mode::RandomInit,
                             agg::Task::Survival));
  return cases;
}

}  // namespace wsi::testing

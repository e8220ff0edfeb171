#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "speednet/model.hpp"
#include "speednet/ops.hpp"
#include "speednet/rng.hpp"
#include "speednet/tensor.hpp"

namespace speednet {

inline real max_rel_err(const std::vector<real>& analytic,
                        const std::vector<real>& fd) {
  real worst = 0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    const real denom = std::max<real>({real(1), std::abs(analytic[i]), std::abs(fd[i])});
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / denom);
  }
  return worst;
}

namespace gradcheck_detail {

inline Tensor random_tensor(const Shape& shape, Rng& rng, bool rg = true,
                            real scl = real(1)) {
  std::vector<real> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<real>(rng.normal(0.0, scl));
  return Tensor::create(shape, v, rg);
}

// Probes the full Jacobian of op through a random linear functional:
// loss = sum(op(inputs) * w). Returns the worst relative error over inputs.
inline real check(const std::function<Tensor(const std::vector<Tensor>&)>& op,
                  std::vector<Tensor> inputs, Rng& rng, real eps,
                  bool negate_analytic = false) {
  for (auto& in : inputs) in.clear_grad();
  Tensor out = op(inputs);
  Tensor w = random_tensor(out.shape(), rng, false);
  Tensor loss = sum(mul(out, w));
  backward(loss);
  real worst = 0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    if (!inputs[k].requires_grad()) continue;
    auto f = [&](const Tensor& probe) {
      std::vector<Tensor> alt = inputs;
      alt[k] = probe;
      return sum(mul(op(alt), w)).at(0);
    };
    Tensor fd = finite_difference_gradient(f, inputs[k], eps);
    std::vector<real> analytic = inputs[k].grad();
    if (negate_analytic)
      for (auto& g : analytic) g = -g;
    worst = std::max(worst, max_rel_err(analytic, fd.values()));
  }
  return worst;
}

}  // namespace gradcheck_detail

// One finite-difference check of a named op for one seed; returns worst
// relative error. Unknown names throw.
inline real gradcheck_op(const std::string& name, uint64_t seed,
                         real eps = real(1e-5), bool negate = false) {
  using gradcheck_detail::check;
  using gradcheck_detail::random_tensor;
  Rng rng(seed ^ 0x5eed);
  if (name == "elementwise") {
    auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    real e = check([](const std::vector<Tensor>& in) { return add(in[0], in[1]); },
                   {a, b}, rng, eps, negate);
    e = std::max(e, check([](const std::vector<Tensor>& in) { return sub(in[0], in[1]); },
                          {a, b}, rng, eps, negate));
    return std::max(e, check([](const std::vector<Tensor>& in) { return mul(in[0], in[1]); },
                             {a, b}, rng, eps, negate));
  }
  if (name == "matmul") {
    auto a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
    return check([](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); },
                 {a, b}, rng, eps, negate);
  }
  if (name == "relu") {
    auto a = random_tensor({7, 3}, rng);
    return check([](const std::vector<Tensor>& in) { return relu(in[0]); }, {a}, rng,
                 eps, negate);
  }
  if (name == "softmax") {
    auto a = random_tensor({4, 6}, rng);
    return check([](const std::vector<Tensor>& in) { return softmax(in[0]); }, {a},
                 rng, eps, negate);
  }
  if (name == "linear") {
    auto x = random_tensor({5, 4}, rng), w = random_tensor({4, 3}, rng),
         b = random_tensor({3}, rng);
    return check(
        [](const std::vector<Tensor>& in) { return linear(in[0], in[1], in[2]); },
        {x, w, b}, rng, eps, negate);
  }
  if (name == "layer_norm") {
    auto x = random_tensor({4, 8}, rng), g = random_tensor({8}, rng),
         s = random_tensor({8}, rng);
    return check(
        [](const std::vector<Tensor>& in) { return layer_norm(in[0], in[1], in[2]); },
        {x, g, s}, rng, eps, negate);
  }
  if (name == "conv2d") {
    auto x = random_tensor({2, 6, 7}, rng), k = random_tensor({3, 2, 3, 3}, rng),
         b = random_tensor({3}, rng);
    return check(
        [](const std::vector<Tensor>& in) {
          return conv2d(in[0], Conv2dParams{in[1], in[2], {1, 1}, {1, 1}});
        },
        {x, k, b}, rng, eps, negate);
  }
  if (name == "conv3d") {
    auto x = random_tensor({2, 4, 5, 5}, rng), k = random_tensor({3, 2, 3, 3, 3}, rng),
         b = random_tensor({3}, rng);
    return check(
        [](const std::vector<Tensor>& in) {
          return conv3d(in[0], Conv3dParams{in[1], in[2], {1, 1, 1}, {1, 1, 1}});
        },
        {x, k, b}, rng, eps, negate);
  }
  if (name == "maxpool3d") {
    auto x = random_tensor({2, 4, 6, 6}, rng);
    return check(
        [](const std::vector<Tensor>& in) {
          return maxpool3d(in[0], Pool3dSpec{{2, 2, 2}});
        },
        {x}, rng, eps, negate);
  }
  if (name == "attention") {
    const int64_t dim = 8;
    auto tok = random_tensor({4, dim}, rng);
    std::vector<Tensor> in{tok};
    for (int i = 0; i < 4; ++i) in.push_back(random_tensor({dim, dim}, rng, true, real(0.3)));
    for (int i = 0; i < 4; ++i) in.push_back(random_tensor({dim}, rng));
    return check(
        [dim](const std::vector<Tensor>& in) {
          AttentionParams p{2,     dim,   in[1], in[2], in[3],
                            in[4], in[5], in[6], in[7], in[8]};
          return multi_head_self_attention(in[0], p);
        },
        in, rng, eps, negate);
  }
  if (name == "tubelet") {
    auto clip = random_tensor({1, 5, 8, 8}, rng);
    auto proj = random_tensor({1 * 2 * 4 * 4, 6}, rng);
    auto b = random_tensor({6}, rng);
    return check(
        [](const std::vector<Tensor>& in) {
          return tubelet_embed(in[0], 2, 4, 4, 6, in[1], in[2]);
        },
        {clip, proj, b}, rng, eps, negate);
  }
  throw std::invalid_argument("gradcheck: unknown op " + name);
}

inline std::vector<std::string> gradcheck_op_names() {
  return {"elementwise", "matmul", "relu",      "softmax",  "linear", "layer_norm",
          "conv2d",      "conv3d", "maxpool3d", "attention", "tubelet"};
}

// Finite-difference check of d(forward)/d(params) on a random sample of
// parameter entries; returns the worst relative error.
inline real gradcheck_model(Model& model, const Tensor& clip, int64_t n_samples,
                            uint64_t seed, real eps = real(1e-5)) {
  zero_grads(model);
  Tensor out = forward(model, clip);
  backward(out);
  // flat index space over all parameter entries
  int64_t total = param_count(model);
  Rng rng(seed);
  real worst = 0;
  for (int64_t s = 0; s < n_samples; ++s) {
    int64_t flat = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(total)));
    size_t pi = 0;
    while (flat >= model.parameters[pi].second.numel()) {
      flat -= model.parameters[pi].second.numel();
      ++pi;
    }
    Tensor& p = model.parameters[pi].second;
    const real orig = p.values()[static_cast<size_t>(flat)];
    p.mutable_values()[static_cast<size_t>(flat)] = orig + eps;
    const real fp = forward(model, clip).at(0);
    p.mutable_values()[static_cast<size_t>(flat)] = orig - eps;
    const real fm = forward(model, clip).at(0);
    p.mutable_values()[static_cast<size_t>(flat)] = orig;
    const real fd = (fp - fm) / (2 * eps);
    const real an = p.grad()[static_cast<size_t>(flat)];
    const real denom = std::max<real>({real(1), std::abs(an), std::abs(fd)});
    worst = std::max(worst, std::abs(an - fd) / denom);
  }
  return worst;
}

}  // namespace speednet

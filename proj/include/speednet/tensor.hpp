#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace speednet {

#ifdef SPEEDNET_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One recorded value in the computation graph. Leaf nodes have no parents;
// interior nodes carry the local backward rule of the op that produced them.
struct TensorNode {
  Shape shape;
  std::vector<real> value;
  bool requires_grad = false;
  std::vector<real> grad;
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), real(0));
  }

  void accumulate(const real* g) {
    ensure_grad();
    for (size_t i = 0; i < value.size(); ++i) grad[i] += g[i];
  }
};

// Value-semantics handle over a graph node. Values are immutable once created
// (only grad buffers mutate); copying a Tensor aliases the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor create(const Shape& shape, real fill = real(0),
                       bool requires_grad = false) {
    check_shape(shape);
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->value.assign(static_cast<size_t>(shape_numel(shape)), fill);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor create(const Shape& shape, const std::vector<real>& values,
                       bool requires_grad = false) {
    check_shape(shape);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      throw std::invalid_argument("tensor create: " +
                                  std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->value = values;
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  const std::vector<real>& values() const { return node_->value; }
  std::vector<real>& mutable_values() { return node_->value; }
  real at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  const std::vector<real>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), real(0)); }
  void clear_grad() { node_->grad.clear(); }

  NodePtr node() const { return node_; }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty())
      throw std::invalid_argument("tensor create: empty shape");
    for (int64_t e : shape)
      if (e < 1)
        throw std::invalid_argument("tensor create: non-positive extent in " +
                                    shape_str(shape));
  }

  NodePtr node_;
};

// Topologically ordered record of the graph reachable from a root. Replaying
// the backward rules in reverse order accumulates gradients into every
// requires_grad leaf.
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor& root) {
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<NodePtr, size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        NodePtr p = node->parents[idx++];
        if (seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
      } else {
        nodes_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<NodePtr>& nodes() const { return nodes_; }

  // Seeds the root with d(root)/d(root) = 1 and replays backward rules.
  // Gradients accumulate; callers reset between passes if they want fresh ones.
  void backward() {
    NodePtr root = nodes_.back();
    root->ensure_grad();
    for (auto& g : root->grad) g += real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      TensorNode& n = **it;
      if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
    }
  }

 private:
  std::vector<NodePtr> nodes_;  // topological order, root last
};

inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: expected scalar, got shape " +
                                shape_str(loss.shape()));
  ComputationTape tape(loss);
  tape.backward();
}

namespace detail {

inline bool any_requires_grad(std::initializer_list<Tensor> ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

inline NodePtr make_node(Shape shape, std::vector<real> value,
                         std::vector<NodePtr> parents,
                         std::function<void(TensorNode&)> backward_fn) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = false;
  for (const auto& p : parents) n->requires_grad |= p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

}  // namespace detail

enum class EwOp { Add, Sub, Mul };

inline Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("elementwise: shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const size_t n = a.values().size();
  std::vector<real> out(n);
  const real* pa = a.values().data();
  const real* pb = b.values().data();
  switch (op) {
    case EwOp::Add: for (size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i]; break;
    case EwOp::Sub: for (size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i]; break;
    case EwOp::Mul: for (size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i]; break;
  }
  NodePtr an = a.node(), bn = b.node();
  auto node = detail::make_node(
      a.shape(), std::move(out), {an, bn}, [op, an, bn](TensorNode& self) {
        const size_t n = self.grad.size();
        const real* g = self.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          real* ga = an->grad.data();
          if (op == EwOp::Mul) {
            const real* vb = bn->value.data();
            for (size_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
          } else {
            for (size_t i = 0; i < n; ++i) ga[i] += g[i];
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          real* gb = bn->grad.data();
          if (op == EwOp::Mul) {
            const real* va = an->value.data();
            for (size_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
          } else if (op == EwOp::Sub) {
            for (size_t i = 0; i < n; ++i) gb[i] -= g[i];
          } else {
            for (size_t i = 0; i < n; ++i) gb[i] += g[i];
          }
        }
      });
  return Tensor(std::move(node));
}

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwOp::Mul, a, b); }

inline Tensor scale(const Tensor& a, real c) {
  std::vector<real> out(a.values().size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  NodePtr an = a.node();
  auto node = detail::make_node(a.shape(), std::move(out), {an},
                                [an, c](TensorNode& self) {
                                  an->ensure_grad();
                                  for (size_t i = 0; i < self.grad.size(); ++i)
                                    an->grad[i] += self.grad[i] * c;
                                });
  return Tensor(std::move(node));
}

inline Tensor sum(const Tensor& a) {
  real s = 0;
  for (real v : a.values()) s += v;
  NodePtr an = a.node();
  auto node = detail::make_node(Shape{1}, {s}, {an}, [an](TensorNode& self) {
    an->ensure_grad();
    const real g = self.grad[0];
    for (auto& v : an->grad) v += g;
  });
  return Tensor(std::move(node));
}

inline Tensor mean(const Tensor& a) {
  return scale(sum(a), real(1) / static_cast<real>(a.numel()));
}

// Copy-reshape; the result is a fresh value with the same flat contents.
inline Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel())
    throw std::invalid_argument("reshape: numel mismatch " +
                                shape_str(a.shape()) + " -> " + shape_str(shape));
  NodePtr an = a.node();
  auto node = detail::make_node(shape, a.values(), {an}, [an](TensorNode& self) {
    an->accumulate(self.grad.data());
  });
  return Tensor(std::move(node));
}

// Stacks b scalar tensors into a [b] vector; used to batch per-clip outputs.
inline Tensor stack_scalars(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_scalars: empty input");
  std::vector<real> out;
  std::vector<NodePtr> parents;
  out.reserve(parts.size());
  parents.reserve(parts.size());
  for (const auto& p : parts) {
    if (p.numel() != 1)
      throw std::invalid_argument("stack_scalars: non-scalar part " +
                                  shape_str(p.shape()));
    out.push_back(p.at(0));
    parents.push_back(p.node());
  }
  auto ps = parents;
  auto node = detail::make_node(
      Shape{static_cast<int64_t>(parts.size())}, std::move(out), std::move(parents),
      [ps](TensorNode& self) {
        for (size_t i = 0; i < ps.size(); ++i) {
          if (!ps[i]->requires_grad) continue;
          ps[i]->ensure_grad();
          ps[i]->grad[0] += self.grad[i];
        }
      });
  return Tensor(std::move(node));
}

// Central-difference gradient estimate of a scalar-valued function. This is
// the verification oracle for every analytic backward rule; it never touches
// the tape machinery beyond calling f.
inline Tensor finite_difference_gradient(
    const std::function<real(const Tensor&)>& f, const Tensor& x,
    real eps = real(1e-5)) {
  if (eps <= 0) throw std::invalid_argument("finite_difference_gradient: eps <= 0");
  Tensor probe = Tensor::create(x.shape(), x.values());
  std::vector<real> g(probe.values().size());
  for (size_t i = 0; i < g.size(); ++i) {
    const real orig = probe.values()[i];
    probe.mutable_values()[i] = orig + eps;
    const real fp = f(probe);
    probe.mutable_values()[i] = orig - eps;
    const real fm = f(probe);
    probe.mutable_values()[i] = orig;
    g[i] = (fp - fm) / (2 * eps);
  }
  return Tensor::create(x.shape(), g);
}

}  // namespace speednet

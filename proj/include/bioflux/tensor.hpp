#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace bioflux {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Thread-local switch: while disabled, ops produce plain value nodes with no
// parents or backward closures (inference mode).
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

// Optional NaN/Inf tripwire, checked after every op when enabled.
inline std::atomic<bool>& finite_checks() {
  static std::atomic<bool> enabled{false};
  return enabled;
}

// Reverse-mode autodiff over dense row-major tensors. A Tensor is a shared
// handle to a graph node; ops never mutate their inputs. Nodes created while
// grad_mode() is on record parents and a backward closure; Tensor::backward()
// replays the recorded graph in reverse creation order (a valid topological
// order, since parents always predate children), visiting each node once and
// accumulating gradients additively across fan-out.
template <typename T>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::shared_ptr<std::vector<T>> val;  // may be shared with a reshape view
    std::vector<T> grad;                  // always owned; empty until needed
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::vector<T>& value() { return *val; }
    const std::vector<T>& value() const { return *val; }
    std::size_t numel() const { return val->size(); }
    void ensure_grad() {
      if (grad.size() != val->size()) grad.assign(val->size(), T(0));
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_data(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    return from_data(shape, std::vector<T>(shape_numel(shape), v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_data(Shape{}, std::vector<T>{v}, requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != shape_numel(shape)) {
      throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->val = std::make_shared<std::vector<T>>(std::move(data));
    t.n_->requires_grad = requires_grad;
    t.n_->id = next_id();
    return t;
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return n_->shape; }
  std::size_t numel() const { return n_->val->size(); }
  std::size_t dim(std::size_t i) const { return n_->shape.at(i); }

  const std::vector<T>& value() const { return *n_->val; }
  std::vector<T>& raw_value() { return *n_->val; }  // optimizer use only
  const T* data() const { return n_->val->data(); }

  bool requires_grad() const { return n_->requires_grad; }
  const std::vector<T>& grad() const {
    n_->ensure_grad();
    return n_->grad;
  }

  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::item: tensor has " + std::to_string(numel()) +
                                  " elements");
    }
    return (*n_->val)[0];
  }

  std::shared_ptr<Node> node() const { return n_; }

  // Backpropagates from a scalar root. Gradients of leaves accumulate across
  // calls until zero_grad().
  void backward() {
    if (numel() != 1) {
      throw std::invalid_argument("Tensor::backward: root must be scalar, shape " +
                                  shape_str(shape()));
    }
    if (!n_->requires_grad) return;

    std::vector<Node*> order;
    collect(n_.get(), order);
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (Node* node : order) {
      if (node->backward) node->backward(*node);
    }
  }

  // Builds an op node. `backward` receives the result node and is responsible
  // for scattering node.grad into node.parents[*]->grad.
  static Tensor make_op(const char* name, Shape shape, std::vector<T> value,
                        std::vector<Tensor> parents,
                        std::function<void(Node&)> backward) {
    Tensor out = from_data(std::move(shape), std::move(value), false);
    if (finite_checks().load(std::memory_order_relaxed)) {
      for (const T& v : *out.n_->val) {
        if (!std::isfinite(static_cast<double>(v))) {
          throw std::runtime_error(std::string("non-finite value produced by op '") + name +
                                   "'");
        }
      }
    }
    attach(out, std::move(parents), std::move(backward));
    return out;
  }

  // Like make_op but sharing the parent's value buffer (reshape-style views;
  // no data copy). The gradient buffer stays owned per node.
  static Tensor make_view(Shape shape, const Tensor& parent,
                          std::function<void(Node&)> backward) {
    Tensor out;
    out.n_ = std::make_shared<Node>();
    out.n_->shape = std::move(shape);
    out.n_->val = parent.n_->val;
    out.n_->id = next_id();
    attach(out, {parent}, std::move(backward));
    return out;
  }

 private:
  static void attach(Tensor& out, std::vector<Tensor> parents,
                     std::function<void(Node&)> backward) {
    if (!grad_mode()) return;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return;
    out.n_->requires_grad = true;
    out.n_->parents.reserve(parents.size());
    for (const auto& p : parents) out.n_->parents.push_back(p.n_);
    out.n_->backward = std::move(backward);
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  static void collect(Node* root, std::vector<Node*>& order) {
    std::unordered_set<const Node*> visited;
    std::vector<Node*> stack{root};
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad) continue;
      if (!visited.insert(n).second) continue;
      order.push_back(n);
      n->ensure_grad();
      for (auto& p : n->parents) stack.push_back(p.get());
    }
  }

  std::shared_ptr<Node> n_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace bioflux

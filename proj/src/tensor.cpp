#include "mpresnet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "tensor_internal.hpp"

namespace mpresnet {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

template <typename T>
void Node<T>::accumulate_grad(std::span<const T> g) {
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor handle

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) {
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("extent", "tensor extents must be positive, got " + to_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->data.assign(static_cast<size_t>(mpresnet::numel(shape)), fill);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) {
  for (int64_t e : shape) {
    if (e <= 0) throw ShapeError("extent", "tensor extents must be positive, got " + to_string(shape));
  }
  if (static_cast<int64_t>(values.size()) != mpresnet::numel(shape)) {
    throw ShapeError("numel", "value count " + std::to_string(values.size()) +
                                  " does not match shape " + to_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->data = std::move(values);
  node_->shape = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<detail::Node<T>> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  detail::require_defined(*this, "tensor");
  return node_->shape;
}

template <typename T>
int64_t Tensor<T>::dim(int64_t axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<int64_t>(s.size());
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw ShapeError("axis", "axis " + std::to_string(axis) + " out of range for " + to_string(s));
  }
  return s[static_cast<size_t>(axis)];
}

template <typename T>
int64_t Tensor<T>::numel() const {
  return static_cast<int64_t>(node_ ? node_->data.size() : 0);
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  detail::require_defined(*this, "tensor");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  detail::require_defined(*this, "tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
  const Shape& s = shape();
  detail::require_rank(s, 4, "tensor");
  return node_->data[static_cast<size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  detail::require_defined(*this, "tensor");
  if (!node_->parents.empty()) throw UsageError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!has_grad()) throw UsageError("tensor has no gradient");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  detail::require_defined(*this, "tensor");
  return Tensor(node_->shape, node_->data);
}

// ---------------------------------------------------------------------------
// Elementwise operators

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    size_t axis = 0;
    while (axis < std::min(a.shape().size(), b.shape().size()) && a.shape()[axis] == b.shape()[axis]) {
      ++axis;
    }
    throw ShapeError("dim" + std::to_string(axis), std::string(op) + ": shapes " +
                                                      to_string(a.shape()) + " and " +
                                                      to_string(b.shape()) + " differ at axis " +
                                                      std::to_string(axis));
  }
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  detail::require_defined(input, "relu input");
  auto out = detail::make_result<T>(input.shape(), {input.node()});
  const auto& x = input.node()->data;
  for (size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] > T(0) ? x[i] : T(0);
  if (out->requires_grad) {
    out->backward = [](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      std::vector<T> g(self.grad.size());
      for (size_t i = 0; i < g.size(); ++i) g[i] = self.data[i] > T(0) ? self.grad[i] : T(0);
      in.accumulate_grad(g);
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  for (size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] + y[i];
  if (out->requires_grad) {
    out->backward = [](detail::Node<T>& self) {
      for (auto& p : self.parents) {
        if (p->requires_grad) p->accumulate_grad(self.grad);
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  for (size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] - y[i];
  if (out->requires_grad) {
    out->backward = [](detail::Node<T>& self) {
      if (self.parents[0]->requires_grad) self.parents[0]->accumulate_grad(self.grad);
      if (self.parents[1]->requires_grad) {
        std::vector<T> g(self.grad.size());
        for (size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
        self.parents[1]->accumulate_grad(g);
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  for (size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * y[i];
  if (out->requires_grad) {
    out->backward = [](detail::Node<T>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      // Copies keep x*x correct when both parents are the same node.
      const std::vector<T> xa = pa.data;
      const std::vector<T> xb = pb.data;
      std::vector<T> g(self.grad.size());
      if (pa.requires_grad) {
        for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * xb[i];
        pa.accumulate_grad(g);
      }
      if (pb.requires_grad) {
        for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * xa[i];
        pb.accumulate_grad(g);
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  detail::require_defined(a, "scale input");
  auto out = detail::make_result<T>(a.shape(), {a.node()});
  const auto& x = a.node()->data;
  for (size_t i = 0; i < x.size(); ++i) out->data[i] = x[i] * factor;
  if (out->requires_grad) {
    out->backward = [factor](detail::Node<T>& self) {
      if (!self.parents[0]->requires_grad) return;
      std::vector<T> g(self.grad.size());
      for (size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * factor;
      self.parents[0]->accumulate_grad(g);
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  detail::require_defined(input, "sum input");
  auto out = detail::make_result<T>(Shape{1}, {input.node()});
  T acc = T(0);
  for (T v : input.node()->data) acc += v;
  out->data[0] = acc;
  if (out->requires_grad) {
    out->backward = [](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      std::vector<T> g(in.data.size(), self.grad[0]);
      in.accumulate_grad(g);
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw UsageError("concat_channels needs at least one input");
  const Shape& first = inputs[0].shape();
  detail::require_rank(first, 4, "concat input");
  int64_t channels = 0;
  std::vector<std::shared_ptr<detail::Node<T>>> parents;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    detail::require_rank(s, 4, "concat input");
    const char* names[] = {"N", "C", "H", "W"};
    for (size_t axis : {size_t{0}, size_t{2}, size_t{3}}) {
      if (s[axis] != first[axis]) {
        throw ShapeError(names[axis], "concat_channels: extent " + std::string(names[axis]) +
                                          " differs: " + to_string(s) + " vs " + to_string(first));
      }
    }
    channels += s[1];
    parents.push_back(t.node());
  }
  const int64_t n = first[0];
  const int64_t plane = first[2] * first[3];
  auto out = detail::make_result<T>(Shape{n, channels, first[2], first[3]}, parents);
  for (int64_t b = 0; b < n; ++b) {
    int64_t offset = 0;
    for (const auto& t : inputs) {
      const int64_t c = t.shape()[1];
      const T* src = t.node()->data.data() + b * c * plane;
      std::copy(src, src + c * plane, out->data.data() + (b * channels + offset) * plane);
      offset += c;
    }
  }
  if (out->requires_grad) {
    out->backward = [n, channels, plane](detail::Node<T>& self) {
      int64_t offset = 0;
      for (auto& p : self.parents) {
        const int64_t c = p->shape[1];
        if (p->requires_grad) {
          std::vector<T> g(p->data.size());
          for (int64_t b = 0; b < n; ++b) {
            const T* src = self.grad.data() + (b * channels + offset) * plane;
            std::copy(src, src + c * plane, g.data() + b * c * plane);
          }
          p->accumulate_grad(g);
        }
        offset += c;
      }
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "dot");
  long double acc = 0;
  auto x = a.data();
  auto y = b.data();
  for (size_t i = 0; i < x.size(); ++i) acc += static_cast<long double>(x[i]) * y[i];
  return static_cast<double>(acc);
}

// ---------------------------------------------------------------------------
// Reverse pass

template <typename T>
void backward(const Tensor<T>& loss) {
  detail::require_defined(loss, "loss");
  if (loss.numel() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  using NodePtr = std::shared_ptr<detail::Node<T>>;
  const NodePtr& root = loss.node();
  if (!root->requires_grad) throw UsageError("loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodePtr> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<NodePtr, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  for (auto& node : order) {
    if (!node->parents.empty() || node->backward) {
      node->parents.clear();
      node->backward = nullptr;
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

#define MPRESNET_INSTANTIATE_CORE(T)                                                     \
  template struct detail::Node<T>;                                                       \
  template class Tensor<T>;                                                              \
  template Tensor<T> relu<T>(const Tensor<T>&);                                          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                      \
  template Tensor<T> sum<T>(const Tensor<T>&);                                           \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                  \
  template double dot<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template void backward<T>(const Tensor<T>&);

MPRESNET_INSTANTIATE_FOR_REALS(MPRESNET_INSTANTIATE_CORE)

}  // namespace mpresnet

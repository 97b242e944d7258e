#include <cmath>

#include "mpresnet/tensor.hpp"
#include "tensor_internal.hpp"

namespace mpresnet {

namespace {

// Numerically stable softmax over the channel axis of one pixel column.
template <typename T>
void softmax_column(const T* x, T* y, int64_t channels, int64_t stride) {
  T m = x[0];
  for (int64_t c = 1; c < channels; ++c) m = std::max(m, x[c * stride]);
  T z = T(0);
  for (int64_t c = 0; c < channels; ++c) {
    y[c * stride] = std::exp(x[c * stride] - m);
    z += y[c * stride];
  }
  for (int64_t c = 0; c < channels; ++c) y[c * stride] /= z;
}

}  // namespace

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  detail::require_defined(logits, "softmax input");
  const Shape& xs = logits.shape();
  detail::require_rank(xs, 4, "logits");
  const int64_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
  auto out = detail::make_result<T>(xs, {logits.node()});
  const auto& x = logits.node()->data;
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t p = 0; p < plane; ++p) {
      const size_t base = static_cast<size_t>(b * c * plane + p);
      softmax_column(x.data() + base, out->data.data() + base, c, plane);
    }
  }
  if (out->requires_grad) {
    out->backward = [n, c, plane](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      std::vector<T> dx(in.data.size());
      for (int64_t b = 0; b < n; ++b) {
        for (int64_t p = 0; p < plane; ++p) {
          const size_t base = static_cast<size_t>(b * c * plane + p);
          T s = T(0);
          for (int64_t k = 0; k < c; ++k) s += self.data[base + k * plane] * self.grad[base + k * plane];
          for (int64_t k = 0; k < c; ++k) {
            const size_t i = base + static_cast<size_t>(k * plane);
            dx[i] = self.data[i] * (self.grad[i] - s);
          }
        }
      }
      in.accumulate_grad(dx);
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const uint8_t> labels, int ignore_index) {
  detail::require_defined(logits, "cross_entropy logits");
  const Shape& xs = logits.shape();
  detail::require_rank(xs, 4, "logits");
  const int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3], plane = h * w;
  if (static_cast<int64_t>(labels.size()) != n * plane) {
    throw ShapeError("labels", "label count " + std::to_string(labels.size()) +
                                   " does not match logits " + to_string(xs));
  }
  const auto& x = logits.node()->data;
  auto probs = std::make_shared<std::vector<T>>(x.size());
  int64_t scored = 0;
  double total = 0;
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t p = 0; p < plane; ++p) {
      const int label = labels[static_cast<size_t>(b * plane + p)];
      if (label == ignore_index) continue;
      if (label >= c) {
        throw DataError("label " + std::to_string(label) + " out of range [0," + std::to_string(c) +
                            ") at sample " + std::to_string(b) + ", pixel (" +
                            std::to_string(p / w) + "," + std::to_string(p % w) + ")",
                        p / w, p % w);
      }
      const size_t base = static_cast<size_t>(b * c * plane + p);
      softmax_column(x.data() + base, probs->data() + base, c, plane);
      // log softmax via log-sum-exp for accuracy at large margins
      T m = x[base];
      for (int64_t k = 1; k < c; ++k) m = std::max(m, x[base + k * plane]);
      double z = 0;
      for (int64_t k = 0; k < c; ++k) z += std::exp(static_cast<double>(x[base + k * plane] - m));
      total -= static_cast<double>(x[base + label * plane] - m) - std::log(z);
      ++scored;
    }
  }
  if (scored == 0) throw DataError("cross_entropy: every pixel is ignored");

  auto out = detail::make_result<T>(Shape{1}, {logits.node()});
  out->data[0] = static_cast<T>(total / static_cast<double>(scored));
  if (out->requires_grad) {
    std::vector<uint8_t> label_copy(labels.begin(), labels.end());
    out->backward = [probs, label_copy = std::move(label_copy), n, c, plane, scored,
                     ignore_index](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      std::vector<T> dx(in.data.size(), T(0));
      const T g = self.grad[0] / static_cast<T>(scored);
      for (int64_t b = 0; b < n; ++b) {
        for (int64_t p = 0; p < plane; ++p) {
          const int label = label_copy[static_cast<size_t>(b * plane + p)];
          if (label == ignore_index) continue;
          const size_t base = static_cast<size_t>(b * c * plane + p);
          for (int64_t k = 0; k < c; ++k) {
            const size_t i = base + static_cast<size_t>(k * plane);
            dx[i] = g * ((*probs)[i] - (k == label ? T(1) : T(0)));
          }
        }
      }
      in.accumulate_grad(dx);
    };
  }
  return Tensor<T>::from_node(out);
}

#define MPRESNET_INSTANTIATE_LOSS(T)                                                \
  template Tensor<T> softmax_channels<T>(const Tensor<T>&);                         \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const uint8_t>, int);

MPRESNET_INSTANTIATE_FOR_REALS(MPRESNET_INSTANTIATE_LOSS)

}  // namespace mpresnet

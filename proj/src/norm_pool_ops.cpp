#include <cmath>
#include <limits>

#include "mpresnet/tensor.hpp"
#include "tensor_internal.hpp"

namespace mpresnet {

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       BatchNormStats<T>& stats, BatchNormMode mode, double momentum,
                       double epsilon) {
  detail::require_defined(input, "batch_norm input");
  if (!(epsilon > 0)) throw ConfigError("batch_norm epsilon must be > 0");
  const Shape& xs = input.shape();
  detail::require_rank(xs, 4, "input");
  const int64_t n = xs[0], c = xs[1], plane = xs[2] * xs[3];
  const std::initializer_list<const Tensor<T>*> per_channel{&gamma, &beta, &stats.running_mean,
                                                            &stats.running_var};
  for (const Tensor<T>* t : per_channel) {
    detail::require_defined(*t, "batch_norm parameter");
    if (t->shape() != Shape{c}) {
      throw ShapeError("C", "batch_norm parameter shape " + to_string(t->shape()) +
                                " does not match channel count " + std::to_string(c));
    }
  }
  const int64_t count = n * plane;
  const bool train = mode == BatchNormMode::kTrain;
  if (train && count < 2) {
    throw ConfigError("degenerate batch for batch_norm: N*H*W = " + std::to_string(count) + " < 2");
  }

  const auto& x = input.node()->data;
  std::vector<T> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
  if (train) {
    auto rm = stats.running_mean.mutable_data();
    auto rv = stats.running_var.mutable_data();
    for (int64_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (int64_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0;
      for (int64_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[static_cast<size_t>(ch)] = static_cast<T>(mu);
      inv_std[static_cast<size_t>(ch)] = static_cast<T>(1.0 / std::sqrt(var + epsilon));
      const double unbiased = ss / static_cast<double>(count - 1);
      rm[static_cast<size_t>(ch)] = static_cast<T>((1 - momentum) * rm[static_cast<size_t>(ch)] + momentum * mu);
      rv[static_cast<size_t>(ch)] =
          static_cast<T>((1 - momentum) * rv[static_cast<size_t>(ch)] + momentum * unbiased);
    }
  } else {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = rm[static_cast<size_t>(ch)];
      inv_std[static_cast<size_t>(ch)] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[static_cast<size_t>(ch)]) + epsilon));
    }
  }

  auto out = detail::make_result<T>(xs, {input.node(), gamma.node(), beta.node()});
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  const auto& gv = gamma.node()->data;
  const auto& bv = beta.node()->data;
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const size_t base = static_cast<size_t>((b * c + ch) * plane);
      const T mu = mean[static_cast<size_t>(ch)], is = inv_std[static_cast<size_t>(ch)];
      const T ga = gv[static_cast<size_t>(ch)], be = bv[static_cast<size_t>(ch)];
      for (int64_t i = 0; i < plane; ++i) {
        const T h = (x[base + i] - mu) * is;
        (*xhat)[base + i] = h;
        out->data[base + i] = ga * h + be;
      }
    }
  }

  if (out->requires_grad) {
    out->backward = [xhat, inv_std, n, c, plane, count, train](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      auto& ga = *self.parents[1];
      auto& be = *self.parents[2];
      const auto& dy = self.grad;
      std::vector<T> dgamma(static_cast<size_t>(c), T(0)), dbeta(static_cast<size_t>(c), T(0));
      std::vector<T> dx(in.requires_grad ? in.data.size() : 0);
      for (int64_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0, sum_dy_xhat = 0;
        for (int64_t b = 0; b < n; ++b) {
          const size_t base = static_cast<size_t>((b * c + ch) * plane);
          for (int64_t i = 0; i < plane; ++i) {
            sum_dy += dy[base + i];
            sum_dy_xhat += static_cast<double>(dy[base + i]) * (*xhat)[base + i];
          }
        }
        dgamma[static_cast<size_t>(ch)] = static_cast<T>(sum_dy_xhat);
        dbeta[static_cast<size_t>(ch)] = static_cast<T>(sum_dy);
        if (!in.requires_grad) continue;
        const double g = ga.data[static_cast<size_t>(ch)];
        const double is = inv_std[static_cast<size_t>(ch)];
        const double m = static_cast<double>(count);
        for (int64_t b = 0; b < n; ++b) {
          const size_t base = static_cast<size_t>((b * c + ch) * plane);
          for (int64_t i = 0; i < plane; ++i) {
            if (train) {
              // dx = g*is/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
              dx[base + i] = static_cast<T>(g * is / m *
                                            (m * dy[base + i] - sum_dy - (*xhat)[base + i] * sum_dy_xhat));
            } else {
              dx[base + i] = static_cast<T>(g * is * dy[base + i]);
            }
          }
        }
      }
      if (in.requires_grad) in.accumulate_grad(dx);
      if (ga.requires_grad) ga.accumulate_grad(dgamma);
      if (be.requires_grad) be.accumulate_grad(dbeta);
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, int64_t kernel, int64_t stride, int64_t padding) {
  detail::require_defined(input, "max_pool input");
  const Shape& xs = input.shape();
  detail::require_rank(xs, 4, "input");
  if (kernel < 1 || stride < 1 || padding < 0 || 2 * padding > kernel) {
    throw ConfigError("invalid max_pool geometry: kernel " + std::to_string(kernel) + ", stride " +
                      std::to_string(stride) + ", padding " + std::to_string(padding));
  }
  const ConvSpec geometry = ConvSpec::square(1, 1, kernel, stride, padding);
  const int64_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const int64_t oh = geometry.conv_out_extent(h, kernel);
  const int64_t ow = geometry.conv_out_extent(w, kernel);
  auto out = detail::make_result<T>(Shape{n, c, oh, ow}, {input.node()});
  auto argmax = std::make_shared<std::vector<int64_t>>(out->data.size());
  const auto& x = input.node()->data;
  for (int64_t plane = 0; plane < n * c; ++plane) {
    const T* src = x.data() + plane * h * w;
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) {
        int64_t best = -1;
        T best_value = -std::numeric_limits<T>::infinity();
        // Row-major window scan; strict '>' keeps the first maximum.
        for (int64_t ki = 0; ki < kernel; ++ki) {
          const int64_t r = i * stride - padding + ki;
          if (r < 0 || r >= h) continue;
          for (int64_t kj = 0; kj < kernel; ++kj) {
            const int64_t col = j * stride - padding + kj;
            if (col < 0 || col >= w) continue;
            const T v = src[r * w + col];
            if (best < 0 || v > best_value) {
              best = r * w + col;
              best_value = v;
            }
          }
        }
        const size_t o = static_cast<size_t>((plane * oh + i) * ow + j);
        out->data[o] = best_value;
        (*argmax)[o] = plane * h * w + best;
      }
    }
  }
  if (out->requires_grad) {
    out->backward = [argmax](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      std::vector<T> dx(in.data.size(), T(0));
      for (size_t o = 0; o < argmax->size(); ++o) dx[static_cast<size_t>((*argmax)[o])] += self.grad[o];
      in.accumulate_grad(dx);
    };
  }
  return Tensor<T>::from_node(out);
}

namespace {

struct AxisTaps {
  std::vector<int64_t> lo, hi;
  std::vector<double> w_lo, w_hi;
};

AxisTaps bilinear_taps(int64_t in, int64_t out) {
  AxisTaps t;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    const double l1 = src - static_cast<double>(i0);
    t.lo.push_back(i0);
    t.hi.push_back(i1);
    t.w_lo.push_back(1.0 - l1);
    t.w_hi.push_back(l1);
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& input, int64_t out_h, int64_t out_w) {
  detail::require_defined(input, "upsample input");
  const Shape& xs = input.shape();
  detail::require_rank(xs, 4, "input");
  if (out_h < 1 || out_w < 1) throw ShapeError("out_hw", "upsample target extents must be >= 1");
  const int64_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const auto rows = std::make_shared<AxisTaps>(bilinear_taps(h, out_h));
  const auto cols = std::make_shared<AxisTaps>(bilinear_taps(w, out_w));
  auto out = detail::make_result<T>(Shape{xs[0], xs[1], out_h, out_w}, {input.node()});
  const auto& x = input.node()->data;
  for (int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * h * w;
    T* dst = out->data.data() + p * out_h * out_w;
    for (int64_t i = 0; i < out_h; ++i) {
      const T* r0 = src + rows->lo[i] * w;
      const T* r1 = src + rows->hi[i] * w;
      const T a1 = static_cast<T>(rows->w_hi[i]);
      for (int64_t j = 0; j < out_w; ++j) {
        const T b1 = static_cast<T>(cols->w_hi[j]);
        const int64_t c0 = cols->lo[j], c1 = cols->hi[j];
        // Lerp form: exact on constant inputs.
        const T top = r0[c0] + b1 * (r0[c1] - r0[c0]);
        const T bottom = r1[c0] + b1 * (r1[c1] - r1[c0]);
        dst[i * out_w + j] = top + a1 * (bottom - top);
      }
    }
  }
  if (out->requires_grad) {
    out->backward = [rows, cols, planes, h, w, out_h, out_w](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      if (!in.requires_grad) return;
      std::vector<T> dx(in.data.size(), T(0));
      for (int64_t p = 0; p < planes; ++p) {
        const T* g = self.grad.data() + p * out_h * out_w;
        T* d = dx.data() + p * h * w;
        for (int64_t i = 0; i < out_h; ++i) {
          const T a0 = static_cast<T>(rows->w_lo[i]), a1 = static_cast<T>(rows->w_hi[i]);
          T* r0 = d + rows->lo[i] * w;
          T* r1 = d + rows->hi[i] * w;
          for (int64_t j = 0; j < out_w; ++j) {
            const T b0 = static_cast<T>(cols->w_lo[j]), b1 = static_cast<T>(cols->w_hi[j]);
            const T v = g[i * out_w + j];
            r0[cols->lo[j]] += a0 * b0 * v;
            r0[cols->hi[j]] += a0 * b1 * v;
            r1[cols->lo[j]] += a1 * b0 * v;
            r1[cols->hi[j]] += a1 * b1 * v;
          }
        }
      }
      in.accumulate_grad(dx);
    };
  }
  return Tensor<T>::from_node(out);
}

#define MPRESNET_INSTANTIATE_NORM_POOL(T)                                                  \
  template Tensor<T> batch_norm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                     BatchNormStats<T>&, BatchNormMode, double, double);   \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, int64_t, int64_t, int64_t);           \
  template Tensor<T> upsample_bilinear<T>(const Tensor<T>&, int64_t, int64_t);

MPRESNET_INSTANTIATE_FOR_REALS(MPRESNET_INSTANTIATE_NORM_POOL)

}  // namespace mpresnet

#include <Eigen/Core>

#include <algorithm>

#include "mpresnet/tensor.hpp"
#include "tensor_internal.hpp"

namespace mpresnet {

int64_t ConvSpec::conv_out_extent(int64_t in, int64_t kernel) const {
  const int64_t span = in + 2 * padding - dilation * (kernel - 1) - 1;
  const int64_t out = span < 0 ? 0 : span / stride + 1;
  if (out < 1) {
    throw ConfigError("convolution output extent < 1 (input " + std::to_string(in) + ", kernel " +
                      std::to_string(kernel) + ", stride " + std::to_string(stride) + ", padding " +
                      std::to_string(padding) + ", dilation " + std::to_string(dilation) + ")");
  }
  return out;
}

int64_t ConvSpec::transpose_out_extent(int64_t in, int64_t kernel) const {
  const int64_t out = (in - 1) * stride - 2 * padding + dilation * (kernel - 1) + output_padding + 1;
  if (out < 1) {
    throw ConfigError("transposed convolution output extent < 1 (input " + std::to_string(in) + ")");
  }
  return out;
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Column layout: row (c*kh + i)*kw + j, column oh*ow_extent + ow.
struct Im2ColGeometry {
  int64_t channels, height, width;  // image
  int64_t out_h, out_w;             // sliding-window grid
  int64_t kernel_h, kernel_w, stride, padding, dilation;

  int64_t rows() const { return channels * kernel_h * kernel_w; }
  int64_t cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* image, const Im2ColGeometry& g, T* col) {
  for (int64_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.height * g.width;
    for (int64_t i = 0; i < g.kernel_h; ++i) {
      for (int64_t j = 0; j < g.kernel_w; ++j) {
        T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.cols();
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh * g.stride - g.padding + i * g.dilation;
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + ih * g.width;
          for (int64_t ow = 0; ow < g.out_w; ++ow) {
            const int64_t iw = ow * g.stride - g.padding + j * g.dilation;
            dst[ow] = (iw >= 0 && iw < g.width) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates columns back into the (pre-zeroed) image.
template <typename T>
void col2im(const T* col, const Im2ColGeometry& g, T* image) {
  for (int64_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.height * g.width;
    for (int64_t i = 0; i < g.kernel_h; ++i) {
      for (int64_t j = 0; j < g.kernel_w; ++j) {
        const T* row = col + ((c * g.kernel_h + i) * g.kernel_w + j) * g.cols();
        for (int64_t oh = 0; oh < g.out_h; ++oh) {
          const int64_t ih = oh * g.stride - g.padding + i * g.dilation;
          if (ih < 0 || ih >= g.height) continue;
          const T* src = row + oh * g.out_w;
          T* dst = plane + ih * g.width;
          for (int64_t ow = 0; ow < g.out_w; ++ow) {
            const int64_t iw = ow * g.stride - g.padding + j * g.dilation;
            if (iw >= 0 && iw < g.width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Im2ColGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

void check_spec(const ConvSpec& spec) {
  if (spec.kernel_h < 1 || spec.kernel_w < 1) throw ConfigError("kernel extents must be >= 1");
  if (spec.stride < 1) throw ConfigError("stride must be >= 1");
  if (spec.padding < 0) throw ConfigError("padding must be >= 0");
  if (spec.dilation < 1) throw ConfigError("dilation must be >= 1");
  if (spec.output_padding < 0) throw ConfigError("output_padding must be >= 0");
}

void check_extent(const Shape& s, size_t axis, int64_t expected, const std::string& tensor,
                  const std::string& meaning) {
  if (s[axis] != expected) {
    throw ShapeError(tensor + "[" + std::to_string(axis) + "]",
                     tensor + " dimension " + std::to_string(axis) + " (" + meaning + ") is " +
                         std::to_string(s[axis]) + ", expected " + std::to_string(expected));
  }
}

template <typename T>
void check_bias(const Tensor<T>& bias, const ConvSpec& spec) {
  if (spec.has_bias != bias.defined()) {
    throw ShapeError("bias", spec.has_bias ? "spec requires a bias tensor" : "unexpected bias tensor");
  }
  if (bias.defined()) {
    detail::require_rank(bias.shape(), 1, "bias");
    check_extent(bias.shape(), 0, spec.out_channels, "bias", "out_channels");
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  detail::require_defined(input, "conv2d input");
  detail::require_defined(weight, "conv2d weight");
  check_spec(spec);
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  detail::require_rank(xs, 4, "input");
  detail::require_rank(ws, 4, "weight");
  check_extent(ws, 0, spec.out_channels, "weight", "out_channels");
  check_extent(ws, 1, spec.in_channels, "weight", "in_channels");
  check_extent(ws, 2, spec.kernel_h, "weight", "kernel_h");
  check_extent(ws, 3, spec.kernel_w, "weight", "kernel_w");
  check_extent(xs, 1, spec.in_channels, "input", "channels");
  check_bias(bias, spec);

  const int64_t n = xs[0];
  Im2ColGeometry g{spec.in_channels, xs[2], xs[3], 0, 0, spec.kernel_h, spec.kernel_w,
                   spec.stride, spec.padding, spec.dilation};
  g.out_h = spec.conv_out_extent(g.height, g.kernel_h);
  g.out_w = spec.conv_out_extent(g.width, g.kernel_w);
  const int64_t cout = spec.out_channels;
  const int64_t in_plane = g.channels * g.height * g.width;
  const int64_t out_plane = cout * g.cols();

  std::vector<std::shared_ptr<detail::Node<T>>> parents{input.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  auto out = detail::make_result<T>(Shape{n, cout, g.out_h, g.out_w}, parents);

  const bool pointwise = is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : static_cast<size_t>(g.rows() * g.cols()));
  ConstMatMap<T> w(weight.node()->data.data(), cout, g.rows());
  for (int64_t b = 0; b < n; ++b) {
    const T* x = input.node()->data.data() + b * in_plane;
    if (!pointwise) im2col(x, g, col.data());
    ConstMatMap<T> cols(pointwise ? x : col.data(), g.rows(), g.cols());
    MatMap<T> y(out->data.data() + b * out_plane, cout, g.cols());
    y.noalias() = w * cols;
    if (bias.defined()) {
      const auto& bv = bias.node()->data;
      for (int64_t c = 0; c < cout; ++c) y.row(c).array() += bv[static_cast<size_t>(c)];
    }
  }

  if (out->requires_grad) {
    out->backward = [g, n, cout, in_plane, out_plane, pointwise](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      auto& wt = *self.parents[1];
      detail::Node<T>* bs = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
      ConstMatMap<T> w(wt.data.data(), cout, g.rows());
      std::vector<T> col(pointwise ? 0 : static_cast<size_t>(g.rows() * g.cols()));
      std::vector<T> dcol(pointwise ? 0 : static_cast<size_t>(g.rows() * g.cols()));
      std::vector<T> dx(in.requires_grad ? in.data.size() : 0, T(0));
      std::vector<T> dw(wt.requires_grad ? wt.data.size() : 0, T(0));
      std::vector<T> db(bs && bs->requires_grad ? static_cast<size_t>(cout) : 0, T(0));
      for (int64_t b = 0; b < n; ++b) {
        ConstMatMap<T> dy(self.grad.data() + b * out_plane, cout, g.cols());
        const T* x = in.data.data() + b * in_plane;
        if (wt.requires_grad) {
          if (!pointwise) im2col(x, g, col.data());
          ConstMatMap<T> cols(pointwise ? x : col.data(), g.rows(), g.cols());
          MatMap<T> dwm(dw.data(), cout, g.rows());
          dwm.noalias() += dy * cols.transpose();
        }
        if (in.requires_grad) {
          if (pointwise) {
            MatMap<T> dxm(dx.data() + b * in_plane, g.rows(), g.cols());
            dxm.noalias() = w.transpose() * dy;
          } else {
            MatMap<T> dc(dcol.data(), g.rows(), g.cols());
            dc.noalias() = w.transpose() * dy;
            col2im(dcol.data(), g, dx.data() + b * in_plane);
          }
        }
        if (!db.empty()) {
          // Sequential sum: Eigen's vectorized reduction order depends on the
          // buffer's alignment, which would make results allocation-dependent.
          for (int64_t c = 0; c < cout; ++c) {
            const T* row = self.grad.data() + b * out_plane + c * g.cols();
            T acc = 0;
            for (int64_t i = 0; i < g.cols(); ++i) acc += row[i];
            db[static_cast<size_t>(c)] += acc;
          }
        }
      }
      if (in.requires_grad) in.accumulate_grad(dx);
      if (wt.requires_grad) wt.accumulate_grad(dw);
      if (!db.empty()) bs->accumulate_grad(db);
    };
  }
  return Tensor<T>::from_node(out);
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           const ConvSpec& spec) {
  detail::require_defined(input, "conv_transpose2d input");
  detail::require_defined(weight, "conv_transpose2d weight");
  check_spec(spec);
  if (spec.output_padding >= std::max(spec.stride, spec.dilation)) {
    throw ConfigError("output_padding must be smaller than stride or dilation");
  }
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  detail::require_rank(xs, 4, "input");
  detail::require_rank(ws, 4, "weight");
  check_extent(ws, 0, spec.in_channels, "weight", "in_channels");
  check_extent(ws, 1, spec.out_channels, "weight", "out_channels");
  check_extent(ws, 2, spec.kernel_h, "weight", "kernel_h");
  check_extent(ws, 3, spec.kernel_w, "weight", "kernel_w");
  check_extent(xs, 1, spec.in_channels, "input", "channels");
  check_bias(bias, spec);

  const int64_t n = xs[0];
  const int64_t cin = spec.in_channels;
  const int64_t cout = spec.out_channels;
  // The output image plays the role of the convolution input: sliding the
  // window over it reproduces the transposed op's input grid.
  Im2ColGeometry g{cout, spec.transpose_out_extent(xs[2], spec.kernel_h),
                   spec.transpose_out_extent(xs[3], spec.kernel_w), xs[2], xs[3], spec.kernel_h,
                   spec.kernel_w, spec.stride, spec.padding, spec.dilation};
  const int64_t in_plane = cin * g.cols();
  const int64_t out_plane = cout * g.height * g.width;

  std::vector<std::shared_ptr<detail::Node<T>>> parents{input.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  auto out = detail::make_result<T>(Shape{n, cout, g.height, g.width}, parents);

  std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
  ConstMatMap<T> w(weight.node()->data.data(), cin, g.rows());
  for (int64_t b = 0; b < n; ++b) {
    ConstMatMap<T> x(input.node()->data.data() + b * in_plane, cin, g.cols());
    MatMap<T> cm(col.data(), g.rows(), g.cols());
    cm.noalias() = w.transpose() * x;
    T* y = out->data.data() + b * out_plane;
    col2im(col.data(), g, y);
    if (bias.defined()) {
      const auto& bv = bias.node()->data;
      const int64_t plane = g.height * g.width;
      for (int64_t c = 0; c < cout; ++c) {
        for (int64_t p = 0; p < plane; ++p) y[c * plane + p] += bv[static_cast<size_t>(c)];
      }
    }
  }

  if (out->requires_grad) {
    out->backward = [g, n, cin, cout, in_plane, out_plane](detail::Node<T>& self) {
      auto& in = *self.parents[0];
      auto& wt = *self.parents[1];
      detail::Node<T>* bs = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
      ConstMatMap<T> w(wt.data.data(), cin, g.rows());
      std::vector<T> dcol(static_cast<size_t>(g.rows() * g.cols()));
      std::vector<T> dx(in.requires_grad ? in.data.size() : 0, T(0));
      std::vector<T> dw(wt.requires_grad ? wt.data.size() : 0, T(0));
      std::vector<T> db(bs && bs->requires_grad ? static_cast<size_t>(cout) : 0, T(0));
      const int64_t plane = g.height * g.width;
      for (int64_t b = 0; b < n; ++b) {
        const T* dy = self.grad.data() + b * out_plane;
        im2col(dy, g, dcol.data());
        ConstMatMap<T> dc(dcol.data(), g.rows(), g.cols());
        if (in.requires_grad) {
          MatMap<T> dxm(dx.data() + b * in_plane, cin, g.cols());
          dxm.noalias() = w * dc;
        }
        if (wt.requires_grad) {
          ConstMatMap<T> x(in.data.data() + b * in_plane, cin, g.cols());
          MatMap<T> dwm(dw.data(), cin, g.rows());
          dwm.noalias() += x * dc.transpose();
        }
        if (!db.empty()) {
          for (int64_t c = 0; c < cout; ++c) {
            T acc = T(0);
            for (int64_t p = 0; p < plane; ++p) acc += dy[c * plane + p];
            db[static_cast<size_t>(c)] += acc;
          }
        }
      }
      if (in.requires_grad) in.accumulate_grad(dx);
      if (wt.requires_grad) wt.accumulate_grad(dw);
      if (!db.empty()) bs->accumulate_grad(db);
    };
  }
  return Tensor<T>::from_node(out);
}

#define MPRESNET_INSTANTIATE_CONV(T)                                                      \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                               const ConvSpec&);                                          \
  template Tensor<T> conv_transpose2d<T>(const Tensor<T>&, const Tensor<T>&,              \
                                         const Tensor<T>&, const ConvSpec&);

MPRESNET_INSTANTIATE_FOR_REALS(MPRESNET_INSTANTIATE_CONV)

}  // namespace mpresnet

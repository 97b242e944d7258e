#pragma once

#include <string>
#include <vector>

#include "mpresnet/error.hpp"
#include "mpresnet/exec.hpp"
#include "mpresnet/graph.hpp"
#include "mpresnet/params.hpp"

namespace mpresnet {

namespace graph {

template <class Ctx>
using Value = typename Ctx::Value;

inline ConvSpec conv_spec(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, int64_t dilation = 1) {
  return ConvSpec::square(in, out, kernel, stride, dilation * (kernel / 2), dilation);
}

// conv 7x7/2 -> BN -> relu -> maxpool 3x3/2: quarter resolution.
template <class Ctx>
Value<Ctx> stem(Ctx& ctx, const std::string& p, const Value<Ctx>& x, int64_t in_channels, int64_t width) {
  auto h = ctx.conv(p + ".conv", x, ConvSpec::square(in_channels, width, 7, 2, 3));
  h = ctx.batch_norm(p + ".bn", h, width);
  h = ctx.relu(p + ".relu", h);
  return ctx.max_pool(p + ".pool", h, 3, 2, 1);
}

// ResNet-34 basic block. A 1x1 projection shortcut is used whenever the
// stride or the width changes.
template <class Ctx>
Value<Ctx> basic_block(Ctx& ctx, const std::string& p, const Value<Ctx>& x, int64_t in_channels,
                       int64_t out_channels, int64_t stride, int64_t dilation = 1) {
  if (stride != 1 && stride != 2) throw ConfigError(p + ": basic block stride must be 1 or 2");
  auto h = ctx.conv(p + ".conv1", x, conv_spec(in_channels, out_channels, 3, stride, dilation));
  h = ctx.batch_norm(p + ".bn1", h, out_channels);
  h = ctx.relu(p + ".relu1", h);
  h = ctx.conv(p + ".conv2", h, conv_spec(out_channels, out_channels, 3, 1, dilation));
  h = ctx.batch_norm(p + ".bn2", h, out_channels);
  Value<Ctx> shortcut = x;
  if (stride != 1 || in_channels != out_channels) {
    shortcut = ctx.conv(p + ".shortcut.conv", x, conv_spec(in_channels, out_channels, 1, stride));
    shortcut = ctx.batch_norm(p + ".shortcut.bn", shortcut, out_channels);
  }
  return ctx.relu(p + ".relu2", ctx.add(p + ".add", h, shortcut));
}

// `blocks` basic blocks; only the first one strides or changes width.
template <class Ctx>
Value<Ctx> res_stage(Ctx& ctx, const std::string& p, Value<Ctx> x, int64_t in_channels, int64_t out_channels,
                     int64_t blocks, int64_t stride, int64_t dilation = 1) {
  for (int64_t b = 0; b < blocks; ++b) {
    x = basic_block(ctx, p + "." + std::to_string(b), x, b == 0 ? in_channels : out_channels, out_channels,
                    b == 0 ? stride : 1, dilation);
  }
  return x;
}

// Bottleneck deconvolution: 1x1 reduce to Cin/4, 3x3 transposed conv with
// stride 2 (exact 2x), 1x1 expand to Cout; each followed by BN and relu.
template <class Ctx>
Value<Ctx> deconv_block(Ctx& ctx, const std::string& p, const Value<Ctx>& x, int64_t in_channels,
                        int64_t out_channels) {
  if (in_channels % 4 != 0) {
    throw ConfigError(p + ": deconvolution block input width " + std::to_string(in_channels) +
                      " is not divisible by 4");
  }
  const int64_t mid = in_channels / 4;
  auto h = ctx.conv(p + ".reduce.conv", x, conv_spec(in_channels, mid, 1));
  h = ctx.batch_norm(p + ".reduce.bn", h, mid);
  h = ctx.relu(p + ".reduce.relu", h);
  ConvSpec up = ConvSpec::square(mid, mid, 3, 2, 1);
  up.output_padding = 1;
  h = ctx.conv_transpose(p + ".up.conv", h, up);
  h = ctx.batch_norm(p + ".up.bn", h, mid);
  h = ctx.relu(p + ".up.relu", h);
  h = ctx.conv(p + ".expand.conv", h, conv_spec(mid, out_channels, 1));
  h = ctx.batch_norm(p + ".expand.bn", h, out_channels);
  return ctx.relu(p + ".expand.relu", h);
}

// 1x1 conv + BN width matching for fusion.
template <class Ctx>
Value<Ctx> projection(Ctx& ctx, const std::string& p, const Value<Ctx>& x, int64_t in_channels,
                      int64_t out_channels) {
  auto h = ctx.conv(p + ".conv", x, conv_spec(in_channels, out_channels, 1));
  return ctx.batch_norm(p + ".bn", h, out_channels);
}

}  // namespace graph

// Parameter layout of a single block, named under `prefix`.
std::vector<ParamSpec> stem_param_specs(const std::string& prefix, int64_t in_channels, int64_t width);
std::vector<ParamSpec> basic_block_param_specs(const std::string& prefix, int64_t in_channels,
                                               int64_t out_channels, int64_t stride);
std::vector<ParamSpec> deconv_block_param_specs(const std::string& prefix, int64_t in_channels,
                                                int64_t out_channels);

// Stand-alone forward passes over an explicit parameter set. Input extents
// must be divisible by 32 for the stem.
template <typename T>
Tensor<T> stem_forward(const Tensor<T>& input, ParamStore<T>& params, int64_t width,
                       BatchNormMode mode = BatchNormMode::kEval, const std::string& prefix = "stem");
template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& input, ParamStore<T>& params, int64_t out_channels,
                              int64_t stride, BatchNormMode mode = BatchNormMode::kEval,
                              const std::string& prefix = "block");
template <typename T>
Tensor<T> deconv_block_forward(const Tensor<T>& input, ParamStore<T>& params, int64_t out_channels,
                               BatchNormMode mode = BatchNormMode::kEval, const std::string& prefix = "deconv");

}  // namespace mpresnet

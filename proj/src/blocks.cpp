#include "mpresnet/blocks.hpp"

namespace mpresnet {

namespace {

// Runs `body` on a shape context with a dummy input and collects the params.
template <typename Body>
std::vector<ParamSpec> collect(const Shape& input, Body body) {
  std::vector<ParamSpec> specs;
  ShapeCtx ctx([&](const LayerEvent& e) {
    for (auto& p : e.params()) specs.push_back(std::move(p));
  });
  body(ctx, input);
  return specs;
}

void require_divisible_by_32(const Shape& s) {
  if (s.size() != 4) throw ShapeError("input.rank", "expected NCHW input, got " + to_string(s));
  if (s[2] % 32 != 0 || s[3] % 32 != 0) {
    throw ConfigError("input extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                      " are not divisible by 32");
  }
}

}  // namespace

std::vector<ParamSpec> stem_param_specs(const std::string& prefix, int64_t in_channels, int64_t width) {
  return collect({1, in_channels, 32, 32},
                 [&](ShapeCtx& ctx, const Shape& x) { graph::stem(ctx, prefix, x, in_channels, width); });
}

std::vector<ParamSpec> basic_block_param_specs(const std::string& prefix, int64_t in_channels,
                                               int64_t out_channels, int64_t stride) {
  return collect({1, in_channels, 8, 8}, [&](ShapeCtx& ctx, const Shape& x) {
    graph::basic_block(ctx, prefix, x, in_channels, out_channels, stride);
  });
}

std::vector<ParamSpec> deconv_block_param_specs(const std::string& prefix, int64_t in_channels,
                                                int64_t out_channels) {
  return collect({1, in_channels, 4, 4}, [&](ShapeCtx& ctx, const Shape& x) {
    graph::deconv_block(ctx, prefix, x, in_channels, out_channels);
  });
}

template <typename T>
Tensor<T> stem_forward(const Tensor<T>& input, ParamStore<T>& params, int64_t width, BatchNormMode mode,
                       const std::string& prefix) {
  require_divisible_by_32(input.shape());
  ExecCtx<T> ctx(params, mode);
  return graph::stem(ctx, prefix, input, input.dim(1), width);
}

template <typename T>
Tensor<T> basic_block_forward(const Tensor<T>& input, ParamStore<T>& params, int64_t out_channels,
                              int64_t stride, BatchNormMode mode, const std::string& prefix) {
  ExecCtx<T> ctx(params, mode);
  return graph::basic_block(ctx, prefix, input, input.dim(1), out_channels, stride);
}

template <typename T>
Tensor<T> deconv_block_forward(const Tensor<T>& input, ParamStore<T>& params, int64_t out_channels,
                               BatchNormMode mode, const std::string& prefix) {
  ExecCtx<T> ctx(params, mode);
  return graph::deconv_block(ctx, prefix, input, input.dim(1), out_channels);
}

#define MPRESNET_INSTANTIATE_BLOCKS(T)                                                                    \
  template Tensor<T> stem_forward<T>(const Tensor<T>&, ParamStore<T>&, int64_t, BatchNormMode,           \
                                     const std::string&);                                                 \
  template Tensor<T> basic_block_forward<T>(const Tensor<T>&, ParamStore<T>&, int64_t, int64_t,          \
                                            BatchNormMode, const std::string&);                           \
  template Tensor<T> deconv_block_forward<T>(const Tensor<T>&, ParamStore<T>&, int64_t, BatchNormMode,   \
                                             const std::string&);

MPRESNET_INSTANTIATE_BLOCKS(float)
MPRESNET_INSTANTIATE_BLOCKS(double)

}  // namespace mpresnet

#include "mpresnet/graph.hpp"

namespace mpresnet {

namespace {

void require_nchw(const Shape& x, const std::string& name) {
  if (x.size() != 4) {
    throw ShapeError(name + ".rank", name + ": expected an NCHW shape, got " + to_string(x));
  }
}

void require_channels(const Shape& x, int64_t channels, const std::string& name) {
  require_nchw(x, name);
  if (x[1] != channels) {
    throw ShapeError(name + ".C", name + ": expected " + std::to_string(channels) + " input channels, got " +
                                      to_string(x));
  }
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kConvTranspose: return "conv_transpose";
    case LayerKind::kBatchNorm: return "batch_norm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kAdd: return "add";
    case LayerKind::kMaxPool: return "max_pool";
    case LayerKind::kUpsample: return "upsample";
  }
  return "unknown";
}

std::vector<ParamSpec> LayerEvent::params() const {
  std::vector<ParamSpec> out;
  const int64_t k2 = spec.kernel_h * spec.kernel_w;
  switch (kind) {
    case LayerKind::kConv:
      out.push_back({name + ".weight", {spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w},
                     ParamRole::kConvWeight, spec.in_channels * k2});
      if (spec.has_bias) out.push_back({name + ".bias", {spec.out_channels}, ParamRole::kBias, 1});
      break;
    case LayerKind::kConvTranspose: {
      // Each output pixel of a stride-s transposed conv sees about k*k/s^2 taps per input channel.
      const int64_t taps = std::max<int64_t>(1, k2 / (spec.stride * spec.stride));
      out.push_back({name + ".weight", {spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w},
                     ParamRole::kConvTransposeWeight, spec.in_channels * taps});
      if (spec.has_bias) out.push_back({name + ".bias", {spec.out_channels}, ParamRole::kBias, 1});
      break;
    }
    case LayerKind::kBatchNorm: {
      const int64_t c = output[1];
      out.push_back({name + ".gamma", {c}, ParamRole::kBnGamma, 1});
      out.push_back({name + ".beta", {c}, ParamRole::kBnBeta, 1});
      out.push_back({name + ".running_mean", {c}, ParamRole::kBnRunningMean, 1});
      out.push_back({name + ".running_var", {c}, ParamRole::kBnRunningVar, 1});
      break;
    }
    default:
      break;
  }
  return out;
}

ShapeCtx::Value ShapeCtx::conv(const std::string& name, const Value& x, const ConvSpec& spec) {
  require_channels(x, spec.in_channels, name);
  LayerEvent e;
  e.kind = LayerKind::kConv;
  e.name = name;
  e.input = x;
  e.spec = spec;
  e.output = {x[0], spec.out_channels, spec.conv_out_extent(x[2], spec.kernel_h),
              spec.conv_out_extent(x[3], spec.kernel_w)};
  emit(e);
  return e.output;
}

ShapeCtx::Value ShapeCtx::conv_transpose(const std::string& name, const Value& x, const ConvSpec& spec) {
  require_channels(x, spec.in_channels, name);
  LayerEvent e;
  e.kind = LayerKind::kConvTranspose;
  e.name = name;
  e.input = x;
  e.spec = spec;
  e.output = {x[0], spec.out_channels, spec.transpose_out_extent(x[2], spec.kernel_h),
              spec.transpose_out_extent(x[3], spec.kernel_w)};
  emit(e);
  return e.output;
}

ShapeCtx::Value ShapeCtx::batch_norm(const std::string& name, const Value& x, int64_t channels) {
  require_channels(x, channels, name);
  LayerEvent e;
  e.kind = LayerKind::kBatchNorm;
  e.name = name;
  e.input = x;
  e.output = x;
  emit(e);
  return x;
}

ShapeCtx::Value ShapeCtx::relu(const std::string& name, const Value& x) {
  require_nchw(x, name);
  LayerEvent e;
  e.kind = LayerKind::kRelu;
  e.name = name;
  e.input = x;
  e.output = x;
  emit(e);
  return x;
}

ShapeCtx::Value ShapeCtx::add(const std::string& name, const Value& a, const Value& b) {
  if (a != b) {
    throw ShapeError(name, name + ": residual operands differ: " + to_string(a) + " vs " + to_string(b));
  }
  LayerEvent e;
  e.kind = LayerKind::kAdd;
  e.name = name;
  e.input = a;
  e.input2 = b;
  e.output = a;
  emit(e);
  return a;
}

ShapeCtx::Value ShapeCtx::max_pool(const std::string& name, const Value& x, int64_t kernel, int64_t stride,
                                   int64_t padding) {
  require_nchw(x, name);
  LayerEvent e;
  e.kind = LayerKind::kMaxPool;
  e.name = name;
  e.input = x;
  e.spec = ConvSpec::square(x[1], x[1], kernel, stride, padding);
  e.output = {x[0], x[1], e.spec.conv_out_extent(x[2], kernel), e.spec.conv_out_extent(x[3], kernel)};
  emit(e);
  return e.output;
}

ShapeCtx::Value ShapeCtx::upsample(const std::string& name, const Value& x, int64_t out_h, int64_t out_w) {
  require_nchw(x, name);
  LayerEvent e;
  e.kind = LayerKind::kUpsample;
  e.name = name;
  e.input = x;
  e.output = {x[0], x[1], out_h, out_w};
  emit(e);
  return e.output;
}

void ShapeCtx::tap(const std::string& name, const Value& x) { taps_.emplace_back(name, x); }

}  // namespace mpresnet

#pragma once

// Network descriptions are written once as templates over a context type.
// A context supplies the primitive layers:
//
//   Value conv(name, x, ConvSpec)            bias-free unless spec.has_bias
//   Value conv_transpose(name, x, ConvSpec)
//   Value batch_norm(name, x, channels)
//   Value relu(name, x)
//   Value add(name, a, b)
//   Value max_pool(name, x, kernel, stride, padding)
//   Value upsample(name, x, out_h, out_w)    bilinear
//   void  tap(name, x)                        named intermediate feature
//
// Executing, shape/cost accounting and receptive-field analysis are all
// contexts over the same description, so they cannot drift apart.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mpresnet/error.hpp"
#include "mpresnet/tensor.hpp"

namespace mpresnet {

enum class LayerKind { kConv, kConvTranspose, kBatchNorm, kRelu, kAdd, kMaxPool, kUpsample };

std::string to_string(LayerKind kind);

enum class ParamRole { kConvWeight, kConvTransposeWeight, kBias, kBnGamma, kBnBeta, kBnRunningMean, kBnRunningVar };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamRole role = ParamRole::kConvWeight;
  // Number of inputs feeding one output activation, for initialization.
  int64_t fan_in = 1;

  bool trainable() const { return role != ParamRole::kBnRunningMean && role != ParamRole::kBnRunningVar; }
};

struct LayerEvent {
  LayerKind kind = LayerKind::kConv;
  std::string name;
  Shape input;
  Shape input2;  // second operand of kAdd
  Shape output;
  ConvSpec spec;  // kConv / kConvTranspose; kernel and stride for kMaxPool

  // Parameters owned by this layer (empty for parameter-free layers).
  std::vector<ParamSpec> params() const;
};

// Shape-propagating context. Every layer is reported to `on_layer`.
class ShapeCtx {
 public:
  using Value = Shape;
  using Observer = std::function<void(const LayerEvent&)>;

  explicit ShapeCtx(Observer on_layer = {}) : on_layer_(std::move(on_layer)) {}

  Value conv(const std::string& name, const Value& x, const ConvSpec& spec);
  Value conv_transpose(const std::string& name, const Value& x, const ConvSpec& spec);
  Value batch_norm(const std::string& name, const Value& x, int64_t channels);
  Value relu(const std::string& name, const Value& x);
  Value add(const std::string& name, const Value& a, const Value& b);
  Value max_pool(const std::string& name, const Value& x, int64_t kernel, int64_t stride, int64_t padding);
  Value upsample(const std::string& name, const Value& x, int64_t out_h, int64_t out_w);
  void tap(const std::string& name, const Value& x);

  const std::vector<std::pair<std::string, Shape>>& taps() const { return taps_; }

 private:
  void emit(const LayerEvent& e) {
    if (on_layer_) on_layer_(e);
  }

  Observer on_layer_;
  std::vector<std::pair<std::string, Shape>> taps_;
};

}  // namespace mpresnet

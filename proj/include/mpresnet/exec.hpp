#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpresnet/params.hpp"
#include "mpresnet/tensor.hpp"

namespace mpresnet {

// Executes a network description on tensors, reading parameters by name.
template <typename T>
class ExecCtx {
 public:
  using Value = Tensor<T>;

  ExecCtx(ParamStore<T>& params, BatchNormMode mode, double momentum = 0.1, double epsilon = 1e-5)
      : params_(params), mode_(mode), momentum_(momentum), epsilon_(epsilon) {}

  // When set, every tap(name, x) is stored here.
  void record_taps(std::map<std::string, Tensor<T>>* sink) { taps_ = sink; }
  // When set, every piecewise-linear decision (ReLU sign per element, max
  // pool winner per output) is appended here.
  void record_decisions(std::vector<uint8_t>* sink) { decisions_ = sink; }

  Value conv(const std::string& name, const Value& x, const ConvSpec& spec) {
    const Tensor<T> bias = spec.has_bias ? params_.at(name + ".bias") : Tensor<T>();
    return conv2d(x, params_.at(name + ".weight"), bias, spec);
  }

  Value conv_transpose(const std::string& name, const Value& x, const ConvSpec& spec) {
    const Tensor<T> bias = spec.has_bias ? params_.at(name + ".bias") : Tensor<T>();
    return conv_transpose2d(x, params_.at(name + ".weight"), bias, spec);
  }

  Value batch_norm(const std::string& name, const Value& x, int64_t /*channels*/) {
    BatchNormStats<T> stats{params_.at(name + ".running_mean"), params_.at(name + ".running_var")};
    return batch_norm2d(x, params_.at(name + ".gamma"), params_.at(name + ".beta"), stats, mode_, momentum_,
                        epsilon_);
  }

  Value relu(const std::string&, const Value& x) {
    if (decisions_) {
      for (T v : x.data()) decisions_->push_back(v > T(0));
    }
    return mpresnet::relu(x);
  }
  Value add(const std::string&, const Value& a, const Value& b) { return mpresnet::add(a, b); }

  Value max_pool(const std::string&, const Value& x, int64_t kernel, int64_t stride, int64_t padding) {
    Value y = max_pool2d(x, kernel, stride, padding);
    if (decisions_) record_pool_winners(x, y, kernel, stride, padding);
    return y;
  }

  Value upsample(const std::string&, const Value& x, int64_t out_h, int64_t out_w) {
    return upsample_bilinear(x, out_h, out_w);
  }

  void tap(const std::string& name, const Value& x) {
    if (taps_) (*taps_)[name] = x;
  }

 private:
  void record_pool_winners(const Value& x, const Value& y, int64_t kernel, int64_t stride, int64_t padding) {
    const int64_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = y.dim(2), ow = y.dim(3);
    const auto in = x.data();
    const auto out = y.data();
    for (int64_t p = 0; p < nc; ++p) {
      for (int64_t i = 0; i < oh; ++i) {
        for (int64_t j = 0; j < ow; ++j) {
          const T best = out[static_cast<size_t>((p * oh + i) * ow + j)];
          uint8_t winner = 0xff;
          for (int64_t k = 0; k < kernel * kernel && winner == 0xff; ++k) {
            const int64_t r = i * stride - padding + k / kernel, c = j * stride - padding + k % kernel;
            if (r < 0 || r >= h || c < 0 || c >= w) continue;
            if (in[static_cast<size_t>((p * h + r) * w + c)] == best) winner = static_cast<uint8_t>(k);
          }
          decisions_->push_back(winner);
        }
      }
    }
  }

  ParamStore<T>& params_;
  BatchNormMode mode_;
  double momentum_;
  double epsilon_;
  std::map<std::string, Tensor<T>>* taps_ = nullptr;
  std::vector<uint8_t>* decisions_ = nullptr;
};

}  // namespace mpresnet

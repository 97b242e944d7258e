#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mpresnet/config.hpp"
#include "mpresnet/params.hpp"
#include "mpresnet/tensor.hpp"

namespace mpresnet {

// Parameter layout generated by a config, in build order.
std::vector<ParamSpec> model_param_specs(const ModelConfig& config);

template <typename T>
class Model {
 public:
  Model(ModelConfig config, ParamStore<T> params);

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  BatchNormMode mode() const { return mode_; }
  void set_mode(BatchNormMode mode) { mode_ = mode; }
  void train() { mode_ = BatchNormMode::kTrain; }
  void eval() { mode_ = BatchNormMode::kEval; }

  double bn_momentum() const { return bn_momentum_; }
  double bn_epsilon() const { return bn_epsilon_; }

  // Logits [N, num_classes, H, W]. Optionally records named intermediate
  // features (stem, encoder.shared, branch0..2 / encoder, decoder, logits).
  Tensor<T> forward(const Tensor<T>& batch, std::map<std::string, Tensor<T>>* taps = nullptr);

  // While set, forward() appends its ReLU/max-pool decisions to `sink`.
  void record_decisions(std::vector<uint8_t>* sink) { decisions_ = sink; }

  template <typename U>
  Model<U> cast() const {
    Model<U> m(config_, params_.template cast<U>());
    m.set_mode(mode_);
    return m;
  }

 private:
  ModelConfig config_;
  ParamStore<T> params_;
  BatchNormMode mode_ = BatchNormMode::kTrain;
  double bn_momentum_ = 0.1;
  double bn_epsilon_ = 1e-5;
  std::vector<uint8_t>* decisions_ = nullptr;
};

// Any valid config; dispatches on config.variant.
template <typename T = float>
Model<T> build_model(const ModelConfig& config, uint64_t seed = 0);

Model<float> build_mp_resnet(const ModelConfig& config, uint64_t seed = 0);
Model<float> build_fcn_baseline(const ModelConfig& config, uint64_t seed = 0);

// Throws ConfigError for extents not divisible by 32 and ShapeError for a
// channel mismatch.
template <typename T>
Tensor<T> forward_segment(Model<T>& model, const Tensor<T>& batch);

// Checkpoint: "MPRSNET1" | u32 config length | config text | records of
// (u16 name length, name, u8 dtype 0 = f32, u8 rank, u32 extents, f32 data)
// until end of file. Running statistics are included.
std::string encode_checkpoint(const Model<float>& model);
Model<float> decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Model<float>& model, const std::string& path);
Model<float> load_checkpoint(const std::string& path);

}  // namespace mpresnet

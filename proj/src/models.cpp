#include "mpresnet/models.hpp"

#include <unordered_map>

#include "binary_io.hpp"
#include "mpresnet/exec.hpp"
#include "mpresnet/network.hpp"

namespace mpresnet {

namespace {

constexpr std::string_view kCheckpointMagic = "MPRSNET1";

}  // namespace

std::vector<ParamSpec> model_param_specs(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> specs;
  ShapeCtx ctx([&](const LayerEvent& e) {
    for (auto& p : e.params()) specs.push_back(std::move(p));
  });
  graph::network(ctx, config, Shape{1, config.num_input_channels, 32, 32}, 32, 32);
  return specs;
}

template <typename T>
Model<T>::Model(ModelConfig config, ParamStore<T> params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto specs = model_param_specs(config_);
  if (specs.size() != params_.size()) {
    throw ConfigError("parameter set has " + std::to_string(params_.size()) + " tensors, config requires " +
                      std::to_string(specs.size()));
  }
  for (const auto& s : specs) {
    if (!params_.contains(s.name)) throw ConfigError("missing parameter '" + s.name + "'");
    if (params_.at(s.name).shape() != s.shape) {
      throw ShapeError(s.name, "parameter '" + s.name + "' has shape " + to_string(params_.at(s.name).shape()) +
                                   ", config requires " + to_string(s.shape));
    }
  }
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch, std::map<std::string, Tensor<T>>* taps) {
  const Shape& s = batch.shape();
  if (s.size() != 4) throw ShapeError("input.rank", "expected an N x C x H x W batch, got " + to_string(s));
  if (s[1] != config_.num_input_channels) {
    throw ShapeError("input[1]", "expected " + std::to_string(config_.num_input_channels) +
                                     " input channels, got " + std::to_string(s[1]));
  }
  if (s[2] % 32 != 0 || s[3] % 32 != 0) {
    throw ConfigError("input extents " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                      " are not divisible by 32");
  }
  ExecCtx<T> ctx(params_, mode_, bn_momentum_, bn_epsilon_);
  ctx.record_taps(taps);
  ctx.record_decisions(decisions_);
  return graph::network(ctx, config_, batch, s[2], s[3]);
}

template <typename T>
Model<T> build_model(const ModelConfig& config, uint64_t seed) {
  return Model<T>(config, ParamStore<T>::initialize(model_param_specs(config), seed));
}

Model<float> build_mp_resnet(const ModelConfig& config, uint64_t seed) {
  if (config.variant != Variant::kMpResnet) throw ConfigError("build_mp_resnet requires variant mp_resnet");
  return build_model<float>(config, seed);
}

Model<float> build_fcn_baseline(const ModelConfig& config, uint64_t seed) {
  if (config.variant != Variant::kFcnBaseline) {
    throw ConfigError("build_fcn_baseline requires variant fcn_baseline");
  }
  return build_model<float>(config, seed);
}

template <typename T>
Tensor<T> forward_segment(Model<T>& model, const Tensor<T>& batch) {
  return model.forward(batch);
}

std::string encode_checkpoint(const Model<float>& model) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic);
  const std::string config = model.config().to_text();
  w.pod<uint32_t>(static_cast<uint32_t>(config.size()));
  w.bytes(config);
  for (const auto& e : model.params().entries()) {
    w.pod<uint16_t>(static_cast<uint16_t>(e.spec.name.size()));
    w.bytes(e.spec.name);
    w.pod<uint8_t>(0);
    w.pod<uint8_t>(static_cast<uint8_t>(e.spec.shape.size()));
    for (int64_t d : e.spec.shape) w.pod<uint32_t>(static_cast<uint32_t>(d));
    const auto data = e.value.data();
    w.bytes(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float)));
  }
  return w.str();
}

Model<float> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.expect_magic(kCheckpointMagic);
  const uint32_t config_len = r.pod<uint32_t>();
  const ModelConfig config = ModelConfig::from_text(std::string(r.bytes(config_len)));
  const auto specs = model_param_specs(config);
  auto params = ParamStore<float>::zeros(specs);
  std::unordered_map<std::string, bool> seen;
  while (!r.at_end()) {
    const size_t record_offset = r.offset();
    const uint16_t name_len = r.pod<uint16_t>();
    const std::string name(r.bytes(name_len));
    const uint8_t dtype = r.pod<uint8_t>();
    if (dtype != 0) {
      throw FormatError("bad_record", "checkpoint record '" + name + "' at offset " + std::to_string(record_offset) +
                                          ": unsupported dtype tag " + std::to_string(dtype));
    }
    const uint8_t rank = r.pod<uint8_t>();
    Shape shape;
    uint64_t count = 1;
    for (uint8_t i = 0; i < rank; ++i) {
      const uint32_t d = r.pod<uint32_t>();
      shape.push_back(d);
      count *= d;
      if (count > (uint64_t{1} << 40)) throw ExtentOverflowError("checkpoint record '" + name + "': extents overflow");
    }
    if (!params.contains(name)) {
      throw FormatError("bad_record", "checkpoint record '" + name + "' is not a parameter of the stored config");
    }
    if (seen[name]) throw FormatError("bad_record", "checkpoint record '" + name + "' appears twice");
    seen[name] = true;
    Tensor<float>& t = params.at(name);
    if (t.shape() != shape) {
      throw FormatError("bad_record", "checkpoint record '" + name + "' has shape " + to_string(shape) +
                                          ", config requires " + to_string(t.shape()));
    }
    const auto raw = r.bytes(static_cast<size_t>(count * sizeof(float)));
    auto dst = t.mutable_data();
    std::memcpy(dst.data(), raw.data(), raw.size());
  }
  for (const auto& s : specs) {
    if (!seen.count(s.name)) throw FormatError("bad_record", "checkpoint is missing parameter '" + s.name + "'");
  }
  Model<float> model(config, std::move(params));
  model.eval();
  return model;
}

void save_checkpoint(const Model<float>& model, const std::string& path) {
  detail::write_file(path, encode_checkpoint(model), "checkpoint");
}

Model<float> load_checkpoint(const std::string& path) {
  return decode_checkpoint(detail::read_file(path, "checkpoint"));
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model<float>(const ModelConfig&, uint64_t);
template Model<double> build_model<double>(const ModelConfig&, uint64_t);
template Tensor<float> forward_segment<float>(Model<float>&, const Tensor<float>&);
template Tensor<double> forward_segment<double>(Model<double>&, const Tensor<double>&);

}  // namespace mpresnet

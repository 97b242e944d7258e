#include "mpresnet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <set>

#include "binary_io.hpp"
#include "json.hpp"
#include "mpresnet/error.hpp"
#include "mpresnet/params.hpp"

namespace mpresnet {

namespace {

uint64_t parse_seed(const std::string& key, const std::string& text) {
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(text, &used);
    if (used != text.size() || text.front() == '-') throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + " must be a non-negative integer, got '" + text + "'");
  }
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
Tensor<T> convert(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>) {
    return t;
  } else {
    const auto d = t.data();
    return Tensor<T>(t.shape(), std::vector<T>(d.begin(), d.end()));
  }
}

// Stacks [4, H, W] images into [B, 4, H, W] plus the matching labels.
template <typename T>
std::pair<Tensor<T>, std::vector<uint8_t>> make_batch(const std::vector<const Sample*>& items) {
  const Shape& s = items.front()->image.shape();
  std::vector<T> values;
  std::vector<uint8_t> labels;
  values.reserve(static_cast<size_t>(numel(s)) * items.size());
  for (const Sample* item : items) {
    if (item->image.shape() != s) {
      throw ShapeError("HW", "batch mixes extents " + to_string(s) + " and " + to_string(item->image.shape()) +
                                 " (tile '" + item->id + "')");
    }
    const auto d = item->image.data();
    values.insert(values.end(), d.begin(), d.end());
    labels.insert(labels.end(), item->label.data.begin(), item->label.data.end());
  }
  Shape shape{static_cast<int64_t>(items.size())};
  shape.insert(shape.end(), s.begin(), s.end());
  return {Tensor<T>(shape, std::move(values)), std::move(labels)};
}

int64_t round_up_32(int64_t v) { return (v + 31) / 32 * 32; }

int64_t reflect(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  const int64_t j = i % period;
  return j < n ? j : period - j;
}

template <typename T>
LabelMap predict_impl(Model<T>& model, const Tensor<float>& image) {
  if (image.rank() != 3) throw ShapeError("rank", "expected a [C, H, W] image, got " + to_string(image.shape()));
  const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int64_t ph = round_up_32(h), pw = round_up_32(w);
  std::vector<T> padded(static_cast<size_t>(c * ph * pw));
  const auto src = image.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t r = 0; r < ph; ++r) {
      const int64_t sr = reflect(r, h);
      for (int64_t col = 0; col < pw; ++col) {
        padded[static_cast<size_t>((ch * ph + r) * pw + col)] =
            static_cast<T>(src[static_cast<size_t>((ch * h + sr) * w + reflect(col, w))]);
      }
    }
  }
  NoGradGuard no_grad;
  const BatchNormMode saved = model.mode();
  model.eval();
  const Tensor<T> logits = model.forward(Tensor<T>({1, c, ph, pw}, std::move(padded)));
  model.set_mode(saved);
  LabelMap full = argmax_labels(logits).front();
  if (ph == h && pw == w) return full;
  LabelMap out(h, w);
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t col = 0; col < w; ++col) out.at(r, col) = full.at(r, col);
  }
  return out;
}

template <typename T>
ConfusionMatrix confusion_impl(Model<T>& model, const std::vector<Sample>& samples) {
  ConfusionMatrix cm(static_cast<int>(model.config().num_classes));
  for (const auto& s : samples) {
    const LabelMap pred = predict_impl(model, s.image);
    accumulate_confusion(cm, pred.data, s.label.data, s.label.width);
  }
  return cm;
}

template <typename T>
std::string encode_as_float(const Model<T>& model) {
  if constexpr (std::is_same_v<T, float>) {
    return encode_checkpoint(model);
  } else {
    return encode_checkpoint(model.template cast<float>());
  }
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  detail::write_file(path.string(), bytes, "checkpoint");
}

template <typename T>
FitResult fit_impl(Model<T>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                   const TrainConfig& config, const std::string& out_dir,
                   const std::function<void(const EpochRecord&)>& on_epoch) {
  namespace fs = std::filesystem;
  std::ofstream log_file;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    log_file.open(fs::path(out_dir) / "log.jsonl", std::ios::binary | std::ios::trunc);
    if (!log_file) throw Error("io_error", "cannot write training log in '" + out_dir + "'");
  }
  Sgd<T> sgd(model.params().trainable(), config.learning_rate, config.momentum, config.weight_decay);
  FitResult result;
  double best = -std::numeric_limits<double>::infinity();
  // Held in memory and written once: rewriting a file every epoch is slow on
  // some filesystems.
  std::string best_checkpoint;
  std::vector<const Sample*> order;
  for (const auto& s : train) order.push_back(&s);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(splitmix64(config.seed + static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    model.train();
    double loss_sum = 0;
    int batches = 0;
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(config.batch_size)) {
      const std::vector<const Sample*> items(order.begin() + static_cast<std::ptrdiff_t>(b),
                                             order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                                 order.size(), b + config.batch_size)));
      auto [x, labels] = make_batch<T>(items);
      sgd.zero_grad();
      const Tensor<T> loss = cross_entropy(model.forward(x), std::span<const uint8_t>(labels), kIgnoreLabel);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("loss became non-finite (" + format_double(value) + ") at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches + 1));
      }
      backward(loss);
      sgd.step();
      loss_sum += value;
      ++batches;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / batches;
    model.eval();
    rec.train_oa = overall_accuracy(confusion_impl(model, train));
    if (!val.empty()) {
      const MetricsReport m = evaluate(confusion_impl(model, val));
      rec.has_validation = true;
      rec.val_oa = m.oa;
      rec.val_mean_f1 = m.f1.mean_f1;
      rec.val_fwiou = m.fwiou;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);

    const bool improved = val.empty() || rec.val_fwiou > best;
    if (improved) {
      best = rec.val_fwiou;
      result.best_epoch = epoch;
      if (!out_dir.empty()) best_checkpoint = encode_as_float(model);
    }
    if (!out_dir.empty()) {
      log_file << to_json_line(rec) << "\n" << std::flush;
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch);
        write_bytes(fs::path(out_dir) / name, encode_as_float(model));
      }
    }
    if (on_epoch) on_epoch(rec);
  }
  if (!out_dir.empty()) {
    write_bytes(fs::path(out_dir) / "best.ckpt", best_checkpoint);
    write_bytes(fs::path(out_dir) / "last.ckpt", encode_as_float(model));
  }
  model.eval();
  return result;
}

}  // namespace

std::string to_string(Precision p) { return p == Precision::kFloat64 ? "float64" : "float32"; }

Precision parse_precision(const std::string& text) {
  if (text == "float32") return Precision::kFloat32;
  if (text == "float64") return Precision::kFloat64;
  throw ConfigError("unknown precision '" + text + "' (expected float32 or float64)");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!(clip_quantile > 0 && clip_quantile <= 1)) throw ConfigError("clip_quantile must be in (0, 1]");
}

void TrainConfig::write_to(KeyValueDoc& doc) const {
  doc.set("epochs", std::to_string(epochs));
  doc.set("batch_size", std::to_string(batch_size));
  doc.set("learning_rate", format_double(learning_rate));
  doc.set("momentum", format_double(momentum));
  doc.set("weight_decay", format_double(weight_decay));
  doc.set("seed", std::to_string(seed));
  doc.set("precision", mpresnet::to_string(precision));
  doc.set("checkpoint_every", std::to_string(checkpoint_every));
  doc.set("clip_quantile", format_double(clip_quantile));
}

std::string TrainConfig::to_text() const {
  KeyValueDoc doc;
  write_to(doc);
  return doc.to_text();
}

TrainConfig TrainConfig::from_doc(const KeyValueDoc& doc) {
  TrainConfig c;
  c.epochs = static_cast<int>(doc.get_int("epochs", c.epochs));
  c.batch_size = static_cast<int>(doc.get_int("batch_size", c.batch_size));
  c.learning_rate = doc.get_double("learning_rate", c.learning_rate);
  c.momentum = doc.get_double("momentum", c.momentum);
  c.weight_decay = doc.get_double("weight_decay", c.weight_decay);
  c.seed = parse_seed("seed", doc.get_string("seed", std::to_string(c.seed)));
  c.precision = parse_precision(doc.get_string("precision", mpresnet::to_string(c.precision)));
  c.checkpoint_every = static_cast<int>(doc.get_int("checkpoint_every", c.checkpoint_every));
  c.clip_quantile = doc.get_double("clip_quantile", c.clip_quantile);
  c.validate();
  return c;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  const KeyValueDoc doc = KeyValueDoc::parse(text);
  TrainConfig c = from_doc(doc);
  const auto unread = doc.unread_keys();
  if (!unread.empty()) throw ConfigError("unknown train config key '" + unread.front() + "'");
  return c;
}

std::string ExperimentConfig::to_text() const {
  KeyValueDoc doc;
  model.write_to(doc);
  train.write_to(doc);
  doc.set("model_seed", std::to_string(model_seed));
  return doc.to_text();
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  KeyValueDoc doc = KeyValueDoc::parse(text);
  ExperimentConfig c;
  const Variant variant = parse_variant(doc.get_string("variant", to_string(Variant::kMpResnet)));
  // Unspecified model keys default to the tiny preset rather than the
  // reference network.
  KeyValueDoc model_doc;
  (variant == Variant::kMpResnet ? ModelConfig::tiny_mp_resnet() : ModelConfig::tiny_fcn_baseline())
      .write_to(model_doc);
  for (const auto& [key, value] : doc.values()) {
    if (model_doc.has(key)) model_doc.set(key, value);
  }
  c.model = ModelConfig::from_doc(model_doc);
  c.model.validate();
  for (const auto& [key, value] : model_doc.values()) {
    if (doc.has(key)) (void)doc.get(key);
  }
  c.train = TrainConfig::from_doc(doc);
  c.model_seed = parse_seed("model_seed", doc.get_string("model_seed", "0"));
  const auto unread = doc.unread_keys();
  if (!unread.empty()) throw ConfigError("unknown config key '" + unread.front() + "'");
  return c;
}

Sample make_sample(const PolSarTile& tile, int num_classes, double clip_quantile) {
  if (!tile.label) throw DataError("tile '" + tile.meta.id + "' has no label map");
  validate_labels(*tile.label, num_classes);
  Sample s;
  s.id = tile.meta.id;
  s.image = preprocess(tile, clip_quantile);
  s.label = *tile.label;
  return s;
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, double learning_rate, double momentum, double weight_decay)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
  if (!(learning_rate >= 0)) throw ConfigError("learning_rate must be >= 0");
  for (const auto& p : params_) velocity_.emplace_back(static_cast<size_t>(p.numel()), T(0));
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Sgd<T>::step() {
  const T lr = static_cast<T>(lr_), mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
  for (size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto& v = velocity_[i];
    const bool has_grad = params_[i].has_grad();
    const auto g = has_grad ? params_[i].grad() : std::span<const T>();
    for (size_t j = 0; j < w.size(); ++j) {
      const T grad = (has_grad ? g[j] : T(0)) + wd * w[j];
      v[j] = mu * v[j] + grad;
      w[j] -= lr * v[j];
    }
  }
}

template class Sgd<float>;
template class Sgd<double>;

std::string to_json_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["train_oa"] = r.train_oa;
  if (r.has_validation) {
    j["val_oa"] = r.val_oa;
    j["val_mean_f1"] = r.val_mean_f1;
    j["val_fwiou"] = r.val_fwiou;
  } else {
    j["val_oa"] = nullptr;
    j["val_mean_f1"] = nullptr;
    j["val_fwiou"] = nullptr;
  }
  j["wall_seconds"] = r.wall_seconds;
  return j.dump();
}

FitResult fit(Model<float>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& config, const std::string& out_dir,
              const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw DataError("no training tiles");
  for (const auto* set : {&train, &val}) {
    for (const auto& s : *set) validate_labels(s.label, static_cast<int>(model.config().num_classes));
  }
  if (config.precision == Precision::kFloat32) return fit_impl(model, train, val, config, out_dir, on_epoch);
  Model<double> wide = model.cast<double>();
  FitResult r = fit_impl(wide, train, val, config, out_dir, on_epoch);
  model = wide.cast<float>();
  model.eval();
  return r;
}

template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("rank", "expected [N, C, H, W] logits, got " + to_string(logits.shape()));
  const int64_t n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (c > 255) throw ShapeError("C", "at most 255 classes fit an 8-bit label map");
  const auto d = logits.data();
  std::vector<LabelMap> out;
  for (int64_t b = 0; b < n; ++b) {
    LabelMap m(h, w);
    for (int64_t i = 0; i < h * w; ++i) {
      int best = 0;
      T best_value = d[static_cast<size_t>(b * c * h * w + i)];
      for (int64_t k = 1; k < c; ++k) {
        const T v = d[static_cast<size_t>((b * c + k) * h * w + i)];
        if (v > best_value) {
          best_value = v;
          best = static_cast<int>(k);
        }
      }
      m.data[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

template std::vector<LabelMap> argmax_labels(const Tensor<float>&);
template std::vector<LabelMap> argmax_labels(const Tensor<double>&);

LabelMap predict_map(Model<float>& model, const Tensor<float>& image) { return predict_impl(model, image); }

LabelMap predict_map(Model<float>& model, const PolSarTile& tile, double clip_quantile) {
  return predict_impl(model, preprocess(tile, clip_quantile));
}

ConfusionMatrix confusion_over(Model<float>& model, const std::vector<Sample>& samples) {
  return confusion_impl(model, samples);
}

namespace {

double mean_delta(const AblationResult& r, double (*metric)(const MetricsReport&)) {
  if (r.folds.empty()) return 0.0;
  double sum = 0;
  for (const auto& f : r.folds) sum += metric(f.mp_resnet) - metric(f.fcn_baseline);
  return sum / static_cast<double>(r.folds.size());
}

double oa_of(const MetricsReport& m) { return m.oa; }
double f1_of(const MetricsReport& m) { return m.f1.mean_f1; }
double fwiou_of(const MetricsReport& m) { return m.fwiou; }

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100 * v);
  return buf;
}

std::string signed_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.2f", 100 * v);
  return buf;
}

}  // namespace

double AblationResult::mean_oa_delta() const { return mean_delta(*this, oa_of); }
double AblationResult::mean_f1_delta() const { return mean_delta(*this, f1_of); }
double AblationResult::mean_fwiou_delta() const { return mean_delta(*this, fwiou_of); }

AblationResult run_ablation(const std::vector<Sample>& samples, const std::vector<FoldSpec>& folds,
                            const AblationOptions& options, const std::function<void(int, Variant)>& on_run) {
  if (options.mp_resnet.variant != Variant::kMpResnet || options.fcn_baseline.variant != Variant::kFcnBaseline) {
    throw ConfigError("ablation needs an mp_resnet config and an fcn_baseline config");
  }
  const size_t count = options.max_folds > 0 ? std::min(folds.size(), static_cast<size_t>(options.max_folds))
                                             : folds.size();
  auto gather = [&](const std::vector<int64_t>& ids) {
    std::vector<Sample> out;
    for (int64_t id : ids) {
      if (id < 0 || id >= static_cast<int64_t>(samples.size())) {
        throw ConfigError("fold id " + std::to_string(id) + " is outside the " + std::to_string(samples.size()) +
                          " available tiles");
      }
      out.push_back(samples[static_cast<size_t>(id)]);
    }
    return out;
  };
  AblationResult result;
  for (size_t i = 0; i < count; ++i) {
    const FoldSpec& fold = folds[i];
    const std::vector<Sample> train = gather(fold.train_ids), val = gather(fold.val_ids);
    if (val.empty()) throw ConfigError("fold " + std::to_string(fold.fold) + " has no validation tiles");
    FoldOutcome outcome;
    outcome.fold = fold.fold;
    for (const ModelConfig* cfg : {&options.fcn_baseline, &options.mp_resnet}) {
      if (on_run) on_run(fold.fold, cfg->variant);
      Model<float> model = build_model<float>(*cfg, options.model_seed);
      fit(model, train, val, options.train);
      const MetricsReport m = evaluate(confusion_over(model, val));
      (cfg->variant == Variant::kMpResnet ? outcome.mp_resnet : outcome.fcn_baseline) = m;
    }
    result.folds.push_back(std::move(outcome));
  }
  return result;
}

std::string format_ablation_table(const AblationResult& result) {
  std::string s = "Datasets | FCN (Baseline) OA(%) mF1(%) fwIoU(%) | MP-ResNet (Proposed) OA(%) mF1(%) fwIoU(%)\n";
  for (const auto& f : result.folds) {
    const MetricsReport &a = f.fcn_baseline, &b = f.mp_resnet;
    s += "Val " + std::to_string(f.fold + 1) + " | " + percent(a.oa) + " " + percent(a.f1.mean_f1) + " " +
         percent(a.fwiou) + " | " + percent(b.oa) + "(" + signed_percent(b.oa - a.oa) + ") " +
         percent(b.f1.mean_f1) + "(" + signed_percent(b.f1.mean_f1 - a.f1.mean_f1) + ") " + percent(b.fwiou) +
         "(" + signed_percent(b.fwiou - a.fwiou) + ")\n";
  }
  s += "Average Improvements | " + signed_percent(result.mean_oa_delta()) + " " +
       signed_percent(result.mean_f1_delta()) + " " + signed_percent(result.mean_fwiou_delta()) + "\n";
  return s;
}

std::string ablation_to_json(const AblationResult& result) {
  using nlohmann::ordered_json;
  ordered_json j;
  ordered_json folds = ordered_json::array();
  for (const auto& f : result.folds) {
    auto side = [](const MetricsReport& m) {
      return ordered_json{{"oa", m.oa}, {"mean_f1", m.f1.mean_f1}, {"fwiou", m.fwiou}};
    };
    folds.push_back({{"fold", f.fold},
                     {"fcn_baseline", side(f.fcn_baseline)},
                     {"mp_resnet", side(f.mp_resnet)},
                     {"delta",
                      {{"oa", f.mp_resnet.oa - f.fcn_baseline.oa},
                       {"mean_f1", f.mp_resnet.f1.mean_f1 - f.fcn_baseline.f1.mean_f1},
                       {"fwiou", f.mp_resnet.fwiou - f.fcn_baseline.fwiou}}}});
  }
  j["folds"] = folds;
  j["mean_delta"] = {{"oa", result.mean_oa_delta()},
                     {"mean_f1", result.mean_f1_delta()},
                     {"fwiou", result.mean_fwiou_delta()}};
  return j.dump(2) + "\n";
}

GradCheckResult check_gradients(const std::vector<Tensor<double>>& tensors, const std::vector<std::string>& names,
                                const std::function<Tensor<double>()>& loss, const GradCheckOptions& options,
                                const std::function<std::vector<uint8_t>()>& decisions) {
  if (names.size() != tensors.size()) throw UsageError("check_gradients needs one name per tensor");
  std::vector<Tensor<double>> params = tensors;
  for (auto& p : params) p.zero_grad();
  const Tensor<double> value = loss();
  if (!std::isfinite(value.item())) throw NumericError("loss is non-finite at the base point");
  const std::vector<uint8_t> base = decisions ? decisions() : std::vector<uint8_t>();
  backward(value);

  std::vector<int64_t> offsets{0};
  for (const auto& p : params) offsets.push_back(offsets.back() + p.numel());
  const int64_t total = offsets.back();
  const int64_t want = std::min<int64_t>(options.probes, total);
  std::mt19937_64 rng(splitmix64(options.seed));
  std::uniform_int_distribution<int64_t> pick(0, total - 1);
  std::set<int64_t> tried;

  GradCheckResult result;
  NoGradGuard no_grad;
  while (result.probes < want && static_cast<int64_t>(tried.size()) < total) {
    const int64_t flat = pick(rng);
    if (!tried.insert(flat).second) continue;
    const size_t t = static_cast<size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) - offsets.begin() - 1);
    const int64_t idx = flat - offsets[t];
    auto data = params[t].mutable_data();
    const double w = data[static_cast<size_t>(idx)];
    double eps = options.epsilon_scale * std::max(1.0, std::abs(w));
    std::optional<double> numeric;
    for (int attempt = 0; attempt <= options.max_refinements && !numeric; ++attempt, eps /= 10) {
      const double up_w = w + eps, down_w = w - eps;
      data[static_cast<size_t>(idx)] = up_w;
      const double up = loss().item();
      const bool up_smooth = !decisions || decisions() == base;
      data[static_cast<size_t>(idx)] = down_w;
      const double down = loss().item();
      const bool down_smooth = !decisions || decisions() == base;
      data[static_cast<size_t>(idx)] = w;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("non-finite loss while probing " + names[t] + "[" + std::to_string(idx) + "]");
      }
      if (up_smooth && down_smooth) {
        numeric = (up - down) / (up_w - down_w);
        if (attempt > 0) ++result.refined_probes;
      }
    }
    if (!numeric) {
      ++result.skipped_probes;
      continue;
    }
    const double analytic = params[t].has_grad() ? params[t].grad()[static_cast<size_t>(idx)] : 0.0;
    const double err =
        std::abs(analytic - *numeric) / std::max({std::abs(analytic), std::abs(*numeric), options.relative_floor});
    ++result.probes;
    if (err > result.max_relative_error || result.probes == 1) {
      result.max_relative_error = err;
      result.worst_param = names[t];
      result.worst_index = idx;
      result.worst_analytic = analytic;
      result.worst_numeric = *numeric;
    }
  }
  return result;
}

GradCheckResult grad_check(const ModelConfig& config, const GradCheckOptions& options) {
  Model<double> model = build_model<double>(config, options.seed);
  if (model.params().trainable_count() > options.max_parameters) {
    throw ConfigError("grad_check model has " + std::to_string(model.params().trainable_count()) +
                      " trainable parameters (limit " + std::to_string(options.max_parameters) + ")");
  }
  model.train();
  std::mt19937_64 rng(splitmix64(options.seed ^ 0x9e3779b97f4a7c15ULL));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Shape shape{options.batch, config.num_input_channels, options.size, options.size};
  std::vector<double> x(static_cast<size_t>(numel(shape)));
  for (auto& v : x) v = u(rng);
  std::vector<uint8_t> labels(static_cast<size_t>(options.batch * options.size * options.size));
  std::uniform_int_distribution<int> cls(0, static_cast<int>(config.num_classes) - 1);
  for (auto& l : labels) l = static_cast<uint8_t>(cls(rng));
  const Tensor<double> input(shape, std::move(x));

  std::vector<Tensor<double>> tensors;
  std::vector<std::string> names;
  for (const auto& e : model.params().entries()) {
    if (!e.spec.trainable()) continue;
    tensors.push_back(e.value);
    names.push_back(e.spec.name);
  }
  std::vector<uint8_t> decisions;
  model.record_decisions(&decisions);
  auto loss = [&] {
    decisions.clear();
    return cross_entropy(model.forward(input), std::span<const uint8_t>(labels), kIgnoreLabel);
  };
  return check_gradients(tensors, names, loss, options, [&] { return decisions; });
}

}  // namespace mpresnet

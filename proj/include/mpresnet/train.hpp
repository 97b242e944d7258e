#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mpresnet/config.hpp"
#include "mpresnet/data.hpp"
#include "mpresnet/label_map.hpp"
#include "mpresnet/metrics.hpp"
#include "mpresnet/models.hpp"
#include "mpresnet/tensor.hpp"

namespace mpresnet {

enum class Precision { kFloat32, kFloat64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  // Write epoch_NNNN.ckpt every this many epochs; 0 keeps only best/last.
  int checkpoint_every = 0;
  double clip_quantile = 0.99;

  // Throws ConfigError.
  void validate() const;
  std::string to_text() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_text(const std::string& text);
  // Reads the training keys of a shared document (leaves other keys unread).
  static TrainConfig from_doc(const KeyValueDoc& doc);
  void write_to(KeyValueDoc& doc) const;
  bool operator==(const TrainConfig&) const = default;
};

// Model architecture, initialization seed and training settings in one flat
// key-value document, as read by the command-line `train` and `ablate`.
struct ExperimentConfig {
  ModelConfig model = ModelConfig::tiny_mp_resnet();
  TrainConfig train;
  uint64_t model_seed = 0;

  std::string to_text() const;
  // Missing model keys fall back to the tiny preset of the given variant.
  // Unknown keys are rejected.
  static ExperimentConfig from_text(const std::string& text);
  bool operator==(const ExperimentConfig&) const = default;
};

// A preprocessed training/evaluation example.
struct Sample {
  std::string id;
  Tensor<float> image;  // [4, H, W]
  LabelMap label;
};

// Preprocesses the tile; throws DataError if it has no label or the label is
// out of range for `num_classes`.
Sample make_sample(const PolSarTile& tile, int num_classes, double clip_quantile = 0.99);

// w <- w - lr * v, v <- momentum * v + (grad + weight_decay * w).
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Tensor<T>> params, double learning_rate, double momentum = 0.9, double weight_decay = 1e-4);
  void zero_grad();
  void step();

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  // Eval-mode accuracy on the training tiles after the epoch's updates.
  double train_oa = 0;
  double val_oa = 0;
  double val_mean_f1 = 0;
  double val_fwiou = 0;
  double wall_seconds = 0;
  bool has_validation = false;
};

// One JSON object on a single line (no trailing newline). Validation fields
// are null when there were no validation tiles.
std::string to_json_line(const EpochRecord& record);

struct FitResult {
  std::vector<EpochRecord> log;
  int best_epoch = 0;
};

// Trains with SGD on mean pixel cross-entropy (255 ignored). Each epoch
// shuffles the training set with a seed derived from (seed, epoch), then
// evaluates training and validation tiles in eval mode. The best epoch is
// the one with the highest validation fwIoU (the last epoch when there is no
// validation set). When `out_dir` is non-empty it receives log.jsonl,
// best.ckpt, last.ckpt and optional periodic checkpoints. On return `model`
// holds the last epoch's parameters in eval mode. Throws NumericError if the
// loss becomes non-finite.
FitResult fit(Model<float>& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& config, const std::string& out_dir = "",
              const std::function<void(const EpochRecord&)>& on_epoch = {});

// Per-pixel argmax over channels; ties go to the lower class id.
template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits);

// Eval-mode prediction of a preprocessed [4, H, W] image. Extents that are
// not multiples of 32 are reflection-padded at the bottom/right and the
// prediction is cropped back.
LabelMap predict_map(Model<float>& model, const Tensor<float>& image);
LabelMap predict_map(Model<float>& model, const PolSarTile& tile, double clip_quantile = 0.99);

// Confusion matrix of eval-mode predictions over the samples.
ConfusionMatrix confusion_over(Model<float>& model, const std::vector<Sample>& samples);

struct AblationOptions {
  ModelConfig mp_resnet = ModelConfig::tiny_mp_resnet();
  ModelConfig fcn_baseline = ModelConfig::tiny_fcn_baseline();
  // Both architectures train with exactly this configuration.
  TrainConfig train;
  // Folds used from the manifest (0 = all).
  int max_folds = 0;
  // Parameter initialization seed shared by both architectures.
  uint64_t model_seed = 0;
};

struct FoldOutcome {
  int fold = 0;
  // Validation metrics after the final epoch.
  MetricsReport fcn_baseline;
  MetricsReport mp_resnet;
};

struct AblationResult {
  std::vector<FoldOutcome> folds;

  // Mean of (MP-ResNet - FCN) over folds, as fractions.
  double mean_oa_delta() const;
  double mean_f1_delta() const;
  double mean_fwiou_delta() const;
};

// Trains both architectures on each fold's training ids and scores them on
// its validation ids. `samples` is indexed by the ids in `folds`.
// `on_run(fold, variant)` is called before each training run.
AblationResult run_ablation(const std::vector<Sample>& samples, const std::vector<FoldSpec>& folds,
                            const AblationOptions& options,
                            const std::function<void(int, Variant)>& on_run = {});

// Per-fold rows "Val k | FCN OA mF1 fwIoU | MP-ResNet OA(+d) mF1(+d)
// fwIoU(+d)" in percent, then the average improvements.
std::string format_ablation_table(const AblationResult& result);
std::string ablation_to_json(const AblationResult& result);

struct GradCheckResult {
  double max_relative_error = 0;
  int probes = 0;
  // Probes whose stencil crossed a ReLU/max-pool switch and were re-measured
  // with a smaller epsilon, and probes dropped because no tried epsilon
  // avoided the switch.
  int refined_probes = 0;
  int skipped_probes = 0;
  std::string worst_param;
  int64_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

struct GradCheckOptions {
  int probes = 256;
  double epsilon_scale = 1e-6;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double relative_floor = 1e-4;
  // Epsilon is divided by 10 up to this many times while the stencil crosses
  // a piecewise-linear switch.
  int max_refinements = 3;
  uint64_t seed = 0;
  int64_t batch = 2;
  int64_t size = 32;
  // grad_check refuses larger models; central differences cost two forward
  // passes per probe.
  int64_t max_parameters = 50000;
};

// Central-difference check of the gradients of `loss` (a scalar-valued
// function of the tensors) at `probes` randomly drawn elements, epsilon =
// epsilon_scale * max(1, |w|). `names` labels the tensors in the result.
// When `decisions` is given it returns the ReLU/max-pool decisions of the
// most recent loss() call; a central difference is accepted only if both
// stencil points keep the base point's decisions, since otherwise the
// function is not differentiable inside the stencil.
GradCheckResult check_gradients(const std::vector<Tensor<double>>& tensors, const std::vector<std::string>& names,
                                const std::function<Tensor<double>()>& loss, const GradCheckOptions& options,
                                const std::function<std::vector<uint8_t>()>& decisions = {});

// Builds the config in 64-bit mode (BN in train mode), draws a fixed random
// batch and labels, and checks the pixel cross-entropy. Throws ConfigError
// for models above options.max_parameters trainable parameters and
// NumericError for non-finite values.
GradCheckResult grad_check(const ModelConfig& config, const GradCheckOptions& options = {});

}  // namespace mpresnet

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpresnet/config.hpp"
#include "mpresnet/graph.hpp"

namespace mpresnet {

// Counting conventions. Every report embeds the set it was produced with.
struct CostConventions {
  // FLOPs per multiply-accumulate (1: MACs, 2: multiply and add separately).
  int mac_factor = 2;
  // Batch norm as a folded scale and shift: 2 FLOPs per element.
  bool counts_bn = true;
  // Bilinear upsampling as three lerps: 9 FLOPs per output element.
  bool counts_upsample = true;
  // relu and add: 1 per element; max pool: k*k comparisons per output.
  bool counts_elementwise = true;
  // Bias adds of biased convolutions: 1 per output element.
  bool counts_bias = true;
  // Include BN running statistics in parameter counts.
  bool counts_running_stats = false;

  bool operator==(const CostConventions&) const = default;
};

struct CostRow {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  int64_t params = 0;
  int64_t flops = 0;
  Shape output_shape;
};

struct CostReport {
  ModelConfig config;
  Shape input_shape;
  CostConventions conventions;
  std::vector<CostRow> rows;
  int64_t total_params = 0;
  int64_t total_flops = 0;
};

// Cost of a single layer under `conventions`.
CostRow layer_cost(const LayerEvent& event, const CostConventions& conventions);

// Accounts an arbitrary graph description: body(ShapeCtx&, const Shape& input).
template <typename Body>
CostReport cost_of_graph(const Shape& input, const CostConventions& conventions, Body&& body) {
  CostReport report;
  report.input_shape = input;
  report.conventions = conventions;
  ShapeCtx ctx([&](const LayerEvent& e) {
    CostRow row = layer_cost(e, conventions);
    report.total_params += row.params;
    report.total_flops += row.flops;
    report.rows.push_back(std::move(row));
  });
  body(ctx, input);
  return report;
}

// Per-layer parameter and FLOP accounting for one forward pass.
CostReport count_flops(const ModelConfig& config, const Shape& input_shape, const CostConventions& conventions = {});
// Parameter accounting; FLOP columns are evaluated at 1 x C x 512 x 512.
CostReport count_params(const ModelConfig& config, const CostConventions& conventions = {});

// Sum of parameter counts over rows whose name starts with `prefix`.
int64_t params_with_prefix(const CostReport& report, const std::string& prefix);

struct FeatureRF {
  std::string name;
  double rf_pixels = 1;
  double effective_stride = 1;
};

struct RfValue {
  double rf = 1;
  double jump = 1;
  int64_t h = 0;
  int64_t w = 0;
};

// Receptive-field context: propagates (rf, jump) and the spatial extent.
class RfCtx {
 public:
  using Value = RfValue;

  Value conv(const std::string& name, const Value& x, const ConvSpec& spec);
  Value conv_transpose(const std::string& name, const Value& x, const ConvSpec& spec);
  Value batch_norm(const std::string&, const Value& x, int64_t) { return x; }
  Value relu(const std::string&, const Value& x) { return x; }
  Value add(const std::string& name, const Value& a, const Value& b);
  Value max_pool(const std::string& name, const Value& x, int64_t kernel, int64_t stride, int64_t padding);
  Value upsample(const std::string& name, const Value& x, int64_t out_h, int64_t out_w);
  void tap(const std::string& name, const Value& x) { features.push_back({name, x.rf, x.jump}); }

  std::vector<FeatureRF> features;
};

// Theoretical receptive field of the named features (stem, encoder.shared,
// branch0..2 or encoder, decoder, logits), by the recursion
// rf' = rf + (k_eff - 1) * jump, jump' = jump * stride. Padding is ignored.
struct ReceptiveField {
  std::vector<FeatureRF> features;
  const FeatureRF& at(const std::string& name) const;
};

ReceptiveField receptive_field(const ModelConfig& config);

// Published reference costs at a 4 x 512 x 512 input.
struct ReferenceCosts {
  static constexpr double kFcnParams = 21.35e6;
  static constexpr double kFcnFlops = 90.97e9;
  static constexpr double kMpResnetParams = 54.97e6;
  static constexpr double kMpResnetFlops = 115.93e9;
};

struct MacCalibration {
  int mac_factor = 2;
  // FCN baseline FLOPs at 1 x 4 x 512 x 512 for mac_factor 1 and 2.
  int64_t flops_factor1 = 0;
  int64_t flops_factor2 = 0;
};

// Picks the mac_factor that lands the reference FCN baseline nearer the
// reference FLOP count. `base` supplies the remaining conventions.
MacCalibration calibrate_mac_factor(const CostConventions& base = {});

struct MultiplierCalibration {
  Rational multiplier;
  int64_t params = 0;
  int64_t flops = 0;
  double param_error = 0;  // relative
  double flop_error = 0;   // relative
};

// Searches multipliers k/16 (k = 1..32) for `config`, keeping widths
// divisible by 4, and returns the one minimizing the larger of the two
// relative errors against the reference MP-ResNet costs.
MultiplierCalibration calibrate_branch_width_multiplier(const ModelConfig& config,
                                                        const CostConventions& conventions);

// Human-readable "key = value" header followed by the per-layer table.
std::string format_report_text(const CostReport& report, const ReceptiveField& rf);
// Machine-readable JSON document.
std::string format_report_json(const CostReport& report, const ReceptiveField& rf);

}  // namespace mpresnet

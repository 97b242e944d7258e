#include "mpresnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "json.hpp"

#include "mpresnet/error.hpp"
#include "mpresnet/network.hpp"

namespace mpresnet {

namespace {

int64_t spatial(const Shape& s) { return s[2] * s[3]; }

int64_t layer_flops(const LayerEvent& e, const CostConventions& c) {
  switch (e.kind) {
    case LayerKind::kConv: {
      const int64_t k2 = e.spec.kernel_h * e.spec.kernel_w;
      int64_t f = c.mac_factor * k2 * e.spec.in_channels * e.spec.out_channels * e.output[0] * spatial(e.output);
      if (e.spec.has_bias && c.counts_bias) f += numel(e.output);
      return f;
    }
    case LayerKind::kConvTranspose: {
      const int64_t k2 = e.spec.kernel_h * e.spec.kernel_w;
      int64_t f = c.mac_factor * k2 * e.spec.in_channels * e.spec.out_channels * e.input[0] * spatial(e.input);
      if (e.spec.has_bias && c.counts_bias) f += numel(e.output);
      return f;
    }
    case LayerKind::kBatchNorm:
      return c.counts_bn ? 2 * numel(e.output) : 0;
    case LayerKind::kRelu:
    case LayerKind::kAdd:
      return c.counts_elementwise ? numel(e.output) : 0;
    case LayerKind::kMaxPool:
      return c.counts_elementwise ? e.spec.kernel_h * e.spec.kernel_w * numel(e.output) : 0;
    case LayerKind::kUpsample:
      return c.counts_upsample ? 9 * numel(e.output) : 0;
  }
  return 0;
}

int64_t layer_params(const LayerEvent& e, const CostConventions& c) {
  int64_t n = 0;
  for (const auto& p : e.params()) {
    if (p.trainable() || c.counts_running_stats) n += numel(p.shape);
  }
  return n;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

RfValue window(const RfValue& x, const ConvSpec& s) {
  RfValue y;
  y.rf = x.rf + static_cast<double>(s.dilation * (s.kernel_h - 1)) * x.jump;
  y.jump = x.jump * static_cast<double>(s.stride);
  y.h = s.conv_out_extent(x.h, s.kernel_h);
  y.w = s.conv_out_extent(x.w, s.kernel_w);
  return y;
}

}  // namespace

CostRow layer_cost(const LayerEvent& e, const CostConventions& c) {
  return CostRow{e.name, e.kind, layer_params(e, c), layer_flops(e, c), e.output};
}

RfValue RfCtx::conv(const std::string&, const RfValue& x, const ConvSpec& s) { return window(x, s); }

RfValue RfCtx::conv_transpose(const std::string&, const RfValue& x, const ConvSpec& s) {
  // An output pixel of a stride-s transposed conv reads ceil(k/s) inputs per axis.
  const int64_t taps = (s.dilation * (s.kernel_h - 1) + 1 + s.stride - 1) / s.stride;
  RfValue y = x;
  y.rf = x.rf + static_cast<double>(taps - 1) * x.jump;
  y.jump = x.jump / static_cast<double>(s.stride);
  y.h = s.transpose_out_extent(x.h, s.kernel_h);
  y.w = s.transpose_out_extent(x.w, s.kernel_w);
  return y;
}

RfValue RfCtx::add(const std::string&, const RfValue& a, const RfValue& b) {
  RfValue y = a;
  y.rf = std::max(a.rf, b.rf);
  y.jump = std::min(a.jump, b.jump);
  return y;
}

RfValue RfCtx::max_pool(const std::string&, const RfValue& x, int64_t k, int64_t stride, int64_t padding) {
  return window(x, ConvSpec::square(1, 1, k, stride, padding));
}

RfValue RfCtx::upsample(const std::string&, const RfValue& x, int64_t out_h, int64_t out_w) {
  // Bilinear reads two neighbours per axis.
  RfValue y = x;
  y.rf = x.rf + x.jump;
  y.jump = x.jump * static_cast<double>(x.h) / static_cast<double>(out_h);
  y.h = out_h;
  y.w = out_w;
  return y;
}

CostReport count_flops(const ModelConfig& config, const Shape& input_shape, const CostConventions& conventions) {
  config.validate();
  if (conventions.mac_factor != 1 && conventions.mac_factor != 2) throw ConfigError("mac_factor must be 1 or 2");
  if (input_shape.size() != 4) throw ShapeError("input.rank", "expected N x C x H x W, got " + to_string(input_shape));
  if (input_shape[1] != config.num_input_channels) {
    throw ShapeError("input[1]", "input has " + std::to_string(input_shape[1]) + " channels, config expects " +
                                     std::to_string(config.num_input_channels));
  }
  if (input_shape[2] % 32 != 0 || input_shape[3] % 32 != 0 || input_shape[2] <= 0 || input_shape[3] <= 0) {
    throw ConfigError("input extents " + shape_text(input_shape) + " are not positive multiples of 32");
  }
  CostReport report = cost_of_graph(input_shape, conventions, [&](ShapeCtx& ctx, const Shape& x) {
    graph::network(ctx, config, x, x[2], x[3]);
  });
  report.config = config;
  return report;
}

CostReport count_params(const ModelConfig& config, const CostConventions& conventions) {
  return count_flops(config, {1, config.num_input_channels, 512, 512}, conventions);
}

int64_t params_with_prefix(const CostReport& report, const std::string& prefix) {
  int64_t n = 0;
  for (const auto& r : report.rows) {
    if (r.name.compare(0, prefix.size(), prefix) == 0) n += r.params;
  }
  return n;
}

const FeatureRF& ReceptiveField::at(const std::string& name) const {
  for (const auto& f : features) {
    if (f.name == name) return f;
  }
  throw UsageError("no receptive field recorded for '" + name + "'");
}

ReceptiveField receptive_field(const ModelConfig& config) {
  config.validate();
  RfCtx ctx;
  RfValue input{1, 1, 512, 512};
  graph::network(ctx, config, input, 512, 512);
  return ReceptiveField{std::move(ctx.features)};
}

MacCalibration calibrate_mac_factor(const CostConventions& base) {
  MacCalibration cal;
  const ModelConfig fcn = ModelConfig::reference_fcn_baseline();
  CostConventions c = base;
  c.mac_factor = 1;
  cal.flops_factor1 = count_flops(fcn, {1, 4, 512, 512}, c).total_flops;
  c.mac_factor = 2;
  cal.flops_factor2 = count_flops(fcn, {1, 4, 512, 512}, c).total_flops;
  const double e1 = std::abs(static_cast<double>(cal.flops_factor1) - ReferenceCosts::kFcnFlops);
  const double e2 = std::abs(static_cast<double>(cal.flops_factor2) - ReferenceCosts::kFcnFlops);
  cal.mac_factor = e1 <= e2 ? 1 : 2;
  return cal;
}

MultiplierCalibration calibrate_branch_width_multiplier(const ModelConfig& config,
                                                        const CostConventions& conventions) {
  if (config.variant != Variant::kMpResnet) throw ConfigError("multiplier calibration applies to mp_resnet");
  MultiplierCalibration best;
  double best_score = INFINITY;
  for (int64_t k = 1; k <= 32; ++k) {
    ModelConfig c = config;
    c.branch_width_multiplier = Rational::parse(std::to_string(k) + "/16");
    try {
      c.validate();
    } catch (const ConfigError&) {
      continue;
    }
    const CostReport r = count_flops(c, {1, c.num_input_channels, 512, 512}, conventions);
    const double pe = static_cast<double>(r.total_params) / ReferenceCosts::kMpResnetParams - 1;
    const double fe = static_cast<double>(r.total_flops) / ReferenceCosts::kMpResnetFlops - 1;
    const double score = std::max(std::abs(pe), std::abs(fe));
    if (score < best_score) {
      best_score = score;
      best = {c.branch_width_multiplier, r.total_params, r.total_flops, pe, fe};
    }
  }
  if (!std::isfinite(best_score)) throw ConfigError("no admissible branch width multiplier");
  return best;
}

std::string format_report_text(const CostReport& report, const ReceptiveField& rf) {
  const auto& c = report.conventions;
  std::string s;
  s += "variant = " + to_string(report.config.variant) + "\n";
  s += "input_shape = " + shape_text(report.input_shape) + "\n";
  s += "total_params = " + std::to_string(report.total_params) + "\n";
  s += "total_params_millions = " + fixed(static_cast<double>(report.total_params) / 1e6, 3) + "\n";
  s += "total_flops = " + std::to_string(report.total_flops) + "\n";
  s += "total_gflops = " + fixed(static_cast<double>(report.total_flops) / 1e9, 3) + "\n";
  s += "convention.mac_factor = " + std::to_string(c.mac_factor) + "\n";
  s += "convention.counts_bn = " + std::string(c.counts_bn ? "true" : "false") + "\n";
  s += "convention.counts_upsample = " + std::string(c.counts_upsample ? "true" : "false") + "\n";
  s += "convention.counts_elementwise = " + std::string(c.counts_elementwise ? "true" : "false") + "\n";
  s += "convention.counts_bias = " + std::string(c.counts_bias ? "true" : "false") + "\n";
  s += "convention.counts_running_stats = " + std::string(c.counts_running_stats ? "true" : "false") + "\n";
  for (const auto& f : rf.features) {
    s += "receptive_field." + f.name + " = " + fixed(f.rf_pixels, 1) + " px, stride " + fixed(f.effective_stride, 3) +
         "\n";
  }
  s += "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-48s %-15s %12s %16s  %s\n", "layer", "kind", "params", "flops", "output");
  s += line;
  for (const auto& r : report.rows) {
    std::snprintf(line, sizeof line, "%-48s %-15s %12lld %16lld  %s\n", r.name.c_str(), to_string(r.kind).c_str(),
                  static_cast<long long>(r.params), static_cast<long long>(r.flops), shape_text(r.output_shape).c_str());
    s += line;
  }
  return s;
}

std::string format_report_json(const CostReport& report, const ReceptiveField& rf) {
  using nlohmann::json;
  const auto& c = report.conventions;
  json j;
  j["variant"] = to_string(report.config.variant);
  j["config"] = report.config.to_text();
  j["input_shape"] = report.input_shape;
  j["totals"] = {{"params", report.total_params}, {"flops", report.total_flops}};
  j["conventions"] = {{"mac_factor", c.mac_factor},
                      {"counts_bn", c.counts_bn},
                      {"counts_upsample", c.counts_upsample},
                      {"counts_elementwise", c.counts_elementwise},
                      {"counts_bias", c.counts_bias},
                      {"counts_running_stats", c.counts_running_stats}};
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"name", r.name},
                    {"kind", to_string(r.kind)},
                    {"params", r.params},
                    {"flops", r.flops},
                    {"output_shape", r.output_shape}});
  }
  j["rows"] = std::move(rows);
  json feats = json::array();
  for (const auto& f : rf.features) {
    feats.push_back({{"name", f.name}, {"rf_pixels", f.rf_pixels}, {"effective_stride", f.effective_stride}});
  }
  j["receptive_fields"] = std::move(feats);
  return j.dump(2) + "\n";
}

}  // namespace mpresnet

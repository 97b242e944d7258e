// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <regex>
#include <sstream>

#include "mpresnet/analysis.hpp"
#include "mpresnet/cli.hpp"
#include "mpresnet/data.hpp"
#include "mpresnet/error.hpp"
#include "mpresnet/graph.hpp"
#include "mpresnet/metrics.hpp"
#include "mpresnet/models.hpp"
#include "mpresnet/params.hpp"
#include "mpresnet/tensor.hpp"
#include "mpresnet/train.hpp"

namespace mp = mpresnet;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

// 1. Confusion-matrix metrics against a per-pixel brute-force oracle.
Verdict metric_oracle() {
  constexpr int kClasses = 6;
  constexpr int64_t kSide = 32;
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> cls(0, kClasses - 1);
  std::bernoulli_distribution ignored(0.10);
  int count_mismatches = 0;
  double worst = 0;
  mp::ConfusionMatrix total(kClasses);
  std::vector<uint8_t> all_p, all_t;
  for (int pair = 0; pair < 1000; ++pair) {
    mp::LabelMap pred(kSide, kSide), truth(kSide, kSide);
    for (auto& v : pred.data) v = static_cast<uint8_t>(cls(rng));
    for (auto& v : truth.data) v = ignored(rng) ? mp::kIgnoreLabel : static_cast<uint8_t>(cls(rng));
    all_p.insert(all_p.end(), pred.data.begin(), pred.data.end());
    all_t.insert(all_t.end(), truth.data.begin(), truth.data.end());
    const mp::ConfusionMatrix cm = mp::accumulate_confusion(pred, truth, kClasses);
    total += cm;

    // Oracle: every quantity by a fresh scan over pixels.
    int64_t scored = 0, correct = 0;
    for (size_t k = 0; k < truth.data.size(); ++k) {
      if (truth.data[k] == mp::kIgnoreLabel) continue;
      ++scored;
      correct += truth.data[k] == pred.data[k];
    }
    for (int i = 0; i < kClasses; ++i) {
      for (int j = 0; j < kClasses; ++j) {
        int64_t n = 0;
        for (size_t k = 0; k < truth.data.size(); ++k) n += truth.data[k] == i && pred.data[k] == j;
        count_mismatches += n != cm.at(i, j);
      }
    }
    double f1_sum = 0, fw = 0;
    int f1_count = 0;
    std::vector<double> f1(kClasses, 0.0);
    for (int c = 0; c < kClasses; ++c) {
      int64_t tp = 0, fp = 0, fn = 0, freq = 0;
      for (size_t k = 0; k < truth.data.size(); ++k) {
        const int t = truth.data[k], p = pred.data[k];
        if (t == mp::kIgnoreLabel) continue;
        tp += t == c && p == c;
        fp += t != c && p == c;
        fn += t == c && p != c;
        freq += t == c;
      }
      if (tp + fp + fn > 0) {
        f1[static_cast<size_t>(c)] = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
        f1_sum += f1[static_cast<size_t>(c)];
        ++f1_count;
      }
      if (freq > 0) {
        fw += static_cast<double>(freq) / static_cast<double>(scored) * static_cast<double>(tp) /
              static_cast<double>(tp + fp + fn);
      }
    }
    const mp::MetricsReport r = mp::evaluate(cm);
    count_mismatches += cm.total() != scored;
    count_mismatches += cm.trace() != correct;
    worst = std::max(worst, std::abs(r.oa - static_cast<double>(correct) / static_cast<double>(scored)));
    worst = std::max(worst, std::abs(r.f1.mean_f1 - f1_sum / f1_count));
    worst = std::max(worst, std::abs(r.fwiou - fw));
    for (int c = 0; c < kClasses; ++c) {
      worst = std::max(worst, std::abs(r.f1.per_class[static_cast<size_t>(c)].f1 - f1[static_cast<size_t>(c)]));
    }
  }
  // The streaming accumulator over all pairs equals the sum of per-pair matrices.
  mp::ConfusionMatrix streamed(kClasses);
  mp::accumulate_confusion(streamed, all_p, all_t, kSide);
  count_mismatches += !(streamed == total);
  return {count_mismatches == 0 && worst <= 1e-12,
          "count mismatches " + std::to_string(count_mismatches) + ", worst ratio error " + fmt("%.2e", worst)};
}

// 2. Hand-evaluated spot values.
Verdict spot_values() {
  const mp::ConfusionMatrix diag = mp::ConfusionMatrix::from_counts(3, {5, 0, 0, 0, 7, 0, 0, 0, 2});
  const mp::ConfusionMatrix s = mp::ConfusionMatrix::from_counts(2, {3, 1, 1, 3});
  const double fw_diag = mp::fw_iou(diag), fw = mp::fw_iou(s), f1 = mp::f1_scores(s).mean_f1,
               oa = mp::overall_accuracy(s);
  return {fw_diag == 1.0 && fw == 0.6 && f1 == 0.75 && oa == 0.75,
          "diag fwIoU " + fmt("%.17g", fw_diag) + "; fwIoU " + fmt("%.17g", fw) + ", mF1 " + fmt("%.17g", f1) +
              ", OA " + fmt("%.17g", oa)};
}

// 3. Central-difference gradient verification in 64-bit mode.
Verdict gradients() {
  struct Case {
    std::string label;
    mp::ModelConfig config;
  };
  const std::vector<Case> cases{{"tiny mp_resnet", mp::ModelConfig::tiny_mp_resnet()},
                                {"tiny fcn_baseline", mp::ModelConfig::tiny_fcn_baseline()},
                                {"small mp_resnet", mp::ModelConfig::grad_check_mp_resnet()},
                                {"small fcn_baseline", mp::ModelConfig::grad_check_fcn_baseline()}};
  bool pass = true;
  std::string detail;
  for (const auto& c : cases) {
    mp::GradCheckOptions opts;
    opts.probes = 256;
    // The tiny presets exceed grad_check's default size guard.
    opts.max_parameters = int64_t{1} << 40;
    const mp::GradCheckResult r = mp::grad_check(c.config, opts);
    pass = pass && r.probes >= 200 && r.max_relative_error < 1e-4;
    detail += (detail.empty() ? "" : "; ") + c.label + " " + fmt("%.2e", r.max_relative_error) + " over " +
              std::to_string(r.probes) + " probes";
  }
  return {pass, detail};
}

// 4. <Lx, y> = <x, L^T y> with L^T y from the backward pass.
Verdict adjointness() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  auto random = [&](const mp::Shape& shape) {
    std::vector<double> v(static_cast<size_t>(mp::numel(shape)));
    for (auto& x : v) x = n(rng);
    return mp::Tensor<double>(shape, std::move(v));
  };
  double worst = 0;
  auto check = [&](const mp::Shape& in_shape, const std::function<mp::Tensor<double>(const mp::Tensor<double>&)>& op) {
    mp::Tensor<double> x = random(in_shape);
    x.set_requires_grad(true);
    const mp::Tensor<double> lx = op(x);
    const mp::Tensor<double> y = random(lx.shape());
    const double lhs = mp::dot(lx.detach(), y);
    mp::backward(mp::sum(mp::mul(lx, y)));
    const mp::Tensor<double> g(in_shape, std::vector<double>(x.grad().begin(), x.grad().end()));
    worst = std::max(worst, std::abs(lhs - mp::dot(x.detach(), g)));
  };
  std::uniform_int_distribution<int> pick(1, 3), side(1, 12);
  for (int t = 0; t < 20; ++t) {
    const int64_t k = 2 * pick(rng) - 1, stride = pick(rng), dil = pick(rng) == 3 ? 2 : 1;
    const int64_t cin = pick(rng), cout = pick(rng);
    const auto spec = mp::ConvSpec::square(cin, cout, k, stride, k / 2 * dil, dil);
    const auto w = random({cout, cin, k, k});
    check({2, cin, 9 + pick(rng), 8 + pick(rng)},
          [&](const mp::Tensor<double>& x) { return mp::conv2d(x, w, mp::Tensor<double>(), spec); });
  }
  for (int t = 0; t < 20; ++t) {
    const int64_t k = 2 * pick(rng) - 1, stride = pick(rng), cin = pick(rng), cout = pick(rng);
    auto spec = mp::ConvSpec::square(cin, cout, k, stride, k / 2);
    spec.output_padding = stride - 1;
    const auto w = random({cin, cout, k, k});
    check({2, cin, 4 + pick(rng), 5 + pick(rng)},
          [&](const mp::Tensor<double>& x) { return mp::conv_transpose2d(x, w, mp::Tensor<double>(), spec); });
  }
  for (int t = 0; t < 20; ++t) {
    const int64_t h = side(rng), w = side(rng), oh = side(rng) * 2, ow = side(rng) * 2;
    check({2, 3, h, w}, [&](const mp::Tensor<double>& x) { return mp::upsample_bilinear(x, oh, ow); });
  }
  return {worst <= 1e-5, "60 cases, worst |<Lx,y> - <x,L^T y>| " + fmt("%.2e", worst)};
}

// 5. Reference MP-ResNet on 1x4x512x512: executed branch extents, logits and
// equal branch depth.
Verdict topology() {
  const mp::ModelConfig cfg = mp::ModelConfig::reference_mp_resnet();
  mp::Model<float> model = mp::build_model<float>(cfg, 0);
  model.eval();
  mp::NoGradGuard no_grad;
  std::map<std::string, mp::Tensor<float>> taps;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> x(4 * 512 * 512);
  for (auto& v : x) v = u(rng);
  const mp::Tensor<float> logits = model.forward(mp::Tensor<float>({1, 4, 512, 512}, std::move(x)), &taps);
  bool pass = logits.shape() == mp::Shape{1, 6, 512, 512};
  const int64_t expected[3] = {64, 32, 16};
  std::string extents;
  for (int b = 0; b < 3; ++b) {
    const mp::Shape& s = taps.at("branch" + std::to_string(b)).shape();
    pass = pass && s[2] == expected[b] && s[3] == expected[b];
    extents += (b ? "/" : "") + std::to_string(s[2]) + "x" + std::to_string(s[3]);
  }
  // Convolution layers per branch, counted from parameter names.
  int convs[3] = {0, 0, 0};
  for (const auto& spec : mp::model_param_specs(cfg)) {
    for (int b = 0; b < 3; ++b) {
      const std::string prefix = "branch" + std::to_string(b) + ".";
      if (spec.name.starts_with(prefix) && spec.shape.size() == 4) ++convs[b];
    }
  }
  pass = pass && convs[0] == convs[1] && convs[1] == convs[2] && convs[0] > 0;
  return {pass, "logits " + mp::to_string(logits.shape()) + ", branches " + extents + ", convs per branch " +
                    std::to_string(convs[0]) + "/" + std::to_string(convs[1]) + "/" + std::to_string(convs[2])};
}

// 6. Cost accounting against the published table.
Verdict calibration(std::ostream& log) {
  const mp::MacCalibration mac = mp::calibrate_mac_factor();
  mp::CostConventions conv;
  conv.mac_factor = mac.mac_factor;
  const mp::Shape input{1, 4, 512, 512};
  const mp::CostReport fcn = mp::count_flops(mp::ModelConfig::reference_fcn_baseline(), input, conv);
  const mp::CostReport mpr = mp::count_flops(mp::ModelConfig::reference_mp_resnet(), input, conv);
  auto rel = [](int64_t v, double ref) { return static_cast<double>(v) / ref - 1.0; };
  const double fp = rel(fcn.total_params, mp::ReferenceCosts::kFcnParams);
  const double ff = rel(fcn.total_flops, mp::ReferenceCosts::kFcnFlops);
  const double mpp = rel(mpr.total_params, mp::ReferenceCosts::kMpResnetParams);
  const double mf = rel(mpr.total_flops, mp::ReferenceCosts::kMpResnetFlops);
  const std::string report = mp::format_report_text(mpr, mp::receptive_field(mpr.config));
  log << report.substr(0, report.find("\n\n") + 1);
  const bool conventions_printed = report.find("convention.mac_factor") != std::string::npos &&
                                   report.find("convention.counts_running_stats") != std::string::npos;
  const bool pass = std::abs(fp) <= 0.05 && std::abs(ff) <= 0.15 && std::abs(mpp) <= 0.20 && std::abs(mf) <= 0.25 &&
                    conventions_printed;
  return {pass, "mac_factor " + std::to_string(mac.mac_factor) + " (multiplier " +
                    mpr.config.branch_width_multiplier.to_string() + "); FCN " +
                    fmt("%.2f", static_cast<double>(fcn.total_params) / 1e6) + " M (" + fmt("%+.1f%%", 100 * fp) +
                    "), " + fmt("%.2f", static_cast<double>(fcn.total_flops) / 1e9) + " G (" +
                    fmt("%+.1f%%", 100 * ff) + "); MP-ResNet " +
                    fmt("%.2f", static_cast<double>(mpr.total_params) / 1e6) + " M (" + fmt("%+.1f%%", 100 * mpp) +
                    "), " + fmt("%.2f", static_cast<double>(mpr.total_flops) / 1e9) + " G (" +
                    fmt("%+.1f%%", 100 * mf) + ")"};
}

std::vector<mp::Sample> synthetic_samples(uint64_t seed, int count, int64_t size) {
  std::vector<mp::Sample> out;
  for (int i = 0; i < count; ++i) {
    mp::PolSarTile t = mp::synth_scene(mp::splitmix64(seed + static_cast<uint64_t>(i)), size, size, 6, 2);
    char id[32];
    std::snprintf(id, sizeof id, "tile_%04d", i);
    t.meta.id = id;
    out.push_back(mp::make_sample(t, 6));
  }
  return out;
}

// 7. Memorization of four 64x64 tiles by the tiny MP-ResNet.
Verdict overfit() {
  const auto train = synthetic_samples(0, 4, 64);
  mp::TrainConfig tc;
  tc.epochs = 300;
  tc.batch_size = 4;
  tc.learning_rate = 0.2;
  tc.momentum = 0.9;
  tc.weight_decay = 0.0;
  mp::Model<float> model = mp::build_model<float>(mp::ModelConfig::tiny_mp_resnet(), 0);
  const mp::FitResult r = mp::fit(model, train, {}, tc);
  double best_oa = 0;
  int first = 0;
  for (const auto& e : r.log) {
    best_oa = std::max(best_oa, e.train_oa);
    if (first == 0 && e.train_oa >= 0.99) first = e.epoch;
  }
  const double ratio = r.log.front().train_loss / r.log.back().train_loss;
  return {first > 0 && ratio >= 10.0, "training OA >= 99% first at epoch " + std::to_string(first) + ", final " +
                                          fmt("%.4f", r.log.back().train_oa) + ", loss " +
                                          fmt("%.3f", r.log.front().train_loss) + " -> " +
                                          fmt("%.4f", r.log.back().train_loss) + " (" + fmt("%.0fx", ratio) + ")"};
}

// 8. Directional ablation on a seed-fixed synthetic dataset.
Verdict ablation(const fs::path& work, std::string& table) {
  mp::SyntheticDatasetSpec spec;
  spec.seed = 2024;
  spec.count = 40;
  spec.size = 128;
  spec.looks = 2;
  const fs::path data = work / "ablation_data";
  mp::write_synthetic_dataset(data.string(), spec);
  spit(work / "ablation_manifest.txt", mp::format_manifest(mp::kfold_split(40, 10, 9, 1, 7), 40));
  spit(work / "ablation_config.txt",
       "epochs = 60\nbatch_size = 4\nlearning_rate = 0.05\nmomentum = 0.9\nweight_decay = 0.001\nseed = 0\n");
  std::ostringstream out, err;
  const int status = mp::run_cli({"ablate", "--data", data.string(), "--folds", (work / "ablation_manifest.txt").string(),
                                  "--out", (work / "ablation").string(), "--config",
                                  (work / "ablation_config.txt").string(), "--max-folds", "3"},
                                 out, err);
  if (status != 0) return {false, "ablate failed: " + err.str()};
  table = slurp(work / "ablation" / "ablation.txt");
  std::smatch m;
  if (!std::regex_search(table, m, std::regex("Average Improvements \\| (\\S+) (\\S+) (\\S+)"))) {
    return {false, "no average row in the table"};
  }
  const double delta = std::stod(m[3]);
  int rows = 0;
  std::istringstream lines(table);
  for (std::string line; std::getline(lines, line);) rows += line.starts_with("Val ");
  return {rows == 3 && delta >= -0.5, "3 folds, mean fwIoU delta (MP-ResNet - FCN) " + std::string(m[3]) +
                                          " pp (bound -0.50); OA " + std::string(m[1]) + ", mF1 " +
                                          std::string(m[2])};
}

// 9. Two seeded `train` runs and a checkpoint round trip.
Verdict determinism(const fs::path& work) {
  mp::SyntheticDatasetSpec spec;
  spec.seed = 9;
  spec.count = 6;
  spec.size = 64;
  const fs::path data = work / "determinism_data";
  mp::write_synthetic_dataset(data.string(), spec);
  spit(data / "manifest.txt", mp::format_manifest(mp::kfold_split(6, 2, 9, 1, 3), 6));
  spit(work / "determinism_config.txt", "epochs = 4\nbatch_size = 2\nseed = 11\nmodel_seed = 12\ncheckpoint_every = 2\n");
  for (const char* run : {"run_a", "run_b"}) {
    std::ostringstream out, err;
    const int status = mp::run_cli({"train", "--config", (work / "determinism_config.txt").string(), "--fold", "0",
                                    "--data", data.string(), "--out", (work / run).string()},
                                   out, err);
    if (status != 0) return {false, std::string(run) + " failed: " + err.str()};
  }
  const std::regex wall("\"wall_seconds\":[0-9.eE+-]+");
  const bool logs = std::regex_replace(slurp(work / "run_a/log.jsonl"), wall, "") ==
                    std::regex_replace(slurp(work / "run_b/log.jsonl"), wall, "");
  bool ckpts = true;
  for (const char* f : {"best.ckpt", "last.ckpt", "epoch_0002.ckpt", "epoch_0004.ckpt"}) {
    const std::string a = slurp(work / "run_a" / f);
    ckpts = ckpts && !a.empty() && a == slurp(work / "run_b" / f);
  }
  mp::Model<float> model = mp::load_checkpoint((work / "run_a/last.ckpt").string());
  mp::save_checkpoint(model, (work / "roundtrip.ckpt").string());
  mp::Model<float> loaded = mp::load_checkpoint((work / "roundtrip.ckpt").string());
  const bool same_bytes = slurp(work / "roundtrip.ckpt") == slurp(work / "run_a/last.ckpt");
  model.eval();
  loaded.eval();
  const mp::Sample s = mp::make_sample(mp::load_item(data.string(), "tile_0000"), 6);
  const mp::Tensor<float> x({1, 4, 64, 64}, std::vector<float>(s.image.data().begin(), s.image.data().end()));
  mp::NoGradGuard no_grad;
  const mp::Tensor<float> a = model.forward(x), b = loaded.forward(x);
  const bool logits = a.shape() == b.shape() &&
                      std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0;
  return {logs && ckpts && same_bytes && logits,
          std::string("logs ") + (logs ? "identical" : "differ") + ", checkpoints " + (ckpts ? "identical" : "differ") +
              ", round-trip logits " + (logits && same_bytes ? "bit-identical" : "differ")};
}

// 10. Distinct documented errors for corrupt inputs.
Verdict format_robustness() {
  mp::PolSarTile tile = mp::synth_scene(3, 64, 64, 6, 2);
  const std::string tile_bytes = mp::encode_tile(tile);
  const std::string label_bytes = mp::encode_label(*tile.label);
  const std::string ckpt_bytes = mp::encode_checkpoint(mp::build_model<float>(mp::ModelConfig::tiny_fcn_baseline(), 0));
  auto kind_of = [](const std::function<void()>& f) -> std::string {
    try {
      f();
    } catch (const mp::Error& e) {
      return e.kind();
    }
    return "none";
  };
  auto bad_magic = [](std::string b) {
    b[1] ^= 0x20;
    return b;
  };
  auto truncated = [](const std::string& b) { return b.substr(0, b.size() - 7); };
  std::vector<std::pair<std::string, std::string>> got{
      {"tile magic", kind_of([&] { mp::decode_tile(bad_magic(tile_bytes)); })},
      {"label magic", kind_of([&] { mp::decode_label(bad_magic(label_bytes)); })},
      {"checkpoint magic", kind_of([&] { mp::decode_checkpoint(bad_magic(ckpt_bytes)); })},
      {"tile truncated", kind_of([&] { mp::decode_tile(truncated(tile_bytes)); })},
      {"label truncated", kind_of([&] { mp::decode_label(truncated(label_bytes)); })},
      {"checkpoint truncated", kind_of([&] { mp::decode_checkpoint(truncated(ckpt_bytes)); })},
  };
  mp::LabelMap bad = *tile.label;
  bad.at(5, 7) = 6;
  got.push_back({"label range", kind_of([&] { mp::validate_labels(bad, 6); })});
  tile.label = bad;
  got.push_back({"sample label range", kind_of([&] { mp::make_sample(tile, 6); })});
  int64_t row = -1, col = -1;
  try {
    mp::validate_labels(bad, 6);
  } catch (const mp::DataError& e) {
    row = e.row();
    col = e.col();
  }
  const std::map<std::string, std::string> expected{
      {"tile magic", "bad_magic"},      {"label magic", "bad_magic"},         {"checkpoint magic", "bad_magic"},
      {"tile truncated", "truncated"},  {"label truncated", "truncated"},     {"checkpoint truncated", "truncated"},
      {"label range", "data_error"},    {"sample label range", "data_error"},
  };
  bool pass = row == 5 && col == 7;
  std::string wrong;
  for (const auto& [what, kind] : got) {
    if (kind != expected.at(what)) {
      pass = false;
      wrong += " " + what + "=" + kind;
    }
  }
  return {pass, pass ? "bad_magic / truncated / data_error (pixel 5,7) on tiles, labels and checkpoints"
                     : "unexpected:" + wrong};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string work_dir = (fs::temp_directory_path() / "mpresnet_acceptance").string();
  bool keep = false;
  app.add_option("--only", only, "Criteria to run (default all)")->check(CLI::Range(1, 10));
  app.add_option("--work-dir", work_dir, "Scratch directory");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_dir);
  fs::remove_all(work);
  fs::create_directories(work);
  std::ostringstream calibration_log;
  std::string table;

  struct Criterion {
    int id;
    std::string name;
    double limit_seconds;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "metric oracle equivalence", 10, metric_oracle},
      {2, "fwIoU/F1/OA spot values", 1e9, spot_values},
      {3, "gradient verification", 300, gradients},
      {4, "adjointness", 30, adjointness},
      {5, "shape/topology invariants", 1e9, topology},
      {6, "cost calibration", 5, [&] { return calibration(calibration_log); }},
      {7, "overfit contract", 300, overfit},
      {8, "directional ablation", 3600, [&] { return ablation(work, table); }},
      {9, "determinism", 300, [&] { return determinism(work); }},
      {10, "format robustness", 1, format_robustness},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (seconds > c.limit_seconds) {
      v.pass = false;
      v.detail += "; exceeded " + fmt("%.0f", c.limit_seconds) + " s";
    }
    failed += !v.pass;
    std::printf("%s %2d %-28s %s [%.2f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), v.detail.c_str(),
                seconds);
    std::fflush(stdout);
  }
  if (!calibration_log.str().empty()) std::cout << "\nMP-ResNet cost report header:\n" << calibration_log.str();
  if (!table.empty()) std::cout << "\nAblation (validation metrics after the final epoch):\n" << table;
  if (!keep) fs::remove_all(work);
  return failed;
}

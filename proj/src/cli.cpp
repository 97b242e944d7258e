#include "mpresnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "mpresnet/analysis.hpp"
#include "mpresnet/config.hpp"
#include "mpresnet/data.hpp"
#include "mpresnet/error.hpp"
#include "mpresnet/metrics.hpp"
#include "mpresnet/models.hpp"
#include "mpresnet/tensor.hpp"
#include "mpresnet/train.hpp"

namespace mpresnet {
namespace {

namespace fs = std::filesystem;

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Tracks the files and directories a command writes. Unless committed, the
// destructor removes paths that did not exist before and new entries of
// directories that did.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->existed) {
        fs::remove_all(it->path, ec);
      } else if (it->is_dir && fs::is_directory(it->path, ec)) {
        for (const auto& e : fs::directory_iterator(it->path, ec)) {
          if (!it->before.count(e.path().filename().string())) fs::remove_all(e.path(), ec);
        }
      }
    }
  }

  void file(const fs::path& path) { entries_.push_back({path, fs::exists(path), false, {}}); }

  void dir(const fs::path& path) {
    Entry e{path, fs::exists(path), true, {}};
    if (e.existed) {
      if (!fs::is_directory(path)) throw Error("io_error", "'" + path.string() + "' exists and is not a directory");
      for (const auto& d : fs::directory_iterator(path)) e.before.insert(d.path().filename().string());
    }
    entries_.push_back(std::move(e));
    fs::create_directories(path);
  }

  void commit() { committed_ = true; }

 private:
  struct Entry {
    fs::path path;
    bool existed;
    bool is_dir;
    std::set<std::string> before;
  };
  std::vector<Entry> entries_;
  bool committed_ = false;
};

// Writes through a temporary file so a failed write never leaves a partial
// file at `path`.
void write_output(const fs::path& path, const std::string& bytes, const std::string& what) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  detail::write_file(tmp.string(), bytes, what);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("io_error", "cannot write " + what + " '" + path.string() + "'");
  }
}

void report_error(std::ostream& err, const std::string& kind, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  err << "error: " << kind << ": " << message << "\n";
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

// "CxHxW" -> {1, C, H, W}.
Shape parse_input_shape(const std::string& text) {
  Shape shape{1};
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    size_t used = 0;
    int64_t v = 0;
    try {
      v = std::stoll(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v < 1) throw UsageError("--input must look like 4x512x512, got '" + text + "'");
    shape.push_back(v);
  }
  if (shape.size() != 4) throw UsageError("--input must look like 4x512x512, got '" + text + "'");
  return shape;
}

ExperimentConfig load_experiment(const std::string& path) {
  if (path.empty()) return {};
  return ExperimentConfig::from_text(detail::read_file(path, "config"));
}

std::vector<Sample> load_samples(const std::string& dir, const std::vector<std::string>& ids, int num_classes,
                                 double clip_quantile) {
  std::vector<Sample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) samples.push_back(make_sample(load_item(dir, id), num_classes, clip_quantile));
  return samples;
}

std::vector<std::string> dataset_ids(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error("io_error", "dataset directory '" + dir + "' does not exist");
  std::vector<std::string> ids = list_tiles(dir);
  if (ids.empty()) throw DataError("no .psar tiles in '" + dir + "'");
  return ids;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string summary(const MetricsReport& m) {
  return "oa = " + fixed(m.oa, 6) + "\nmean_f1 = " + fixed(m.f1.mean_f1, 6) + "\nfwiou = " + fixed(m.fwiou, 6) + "\n";
}

struct SynthArgs {
  SyntheticDatasetSpec spec;
  std::string out;
};

void cmd_synth(const SynthArgs& a, OutputGuard& guard, std::ostream& out) {
  guard.dir(a.out);
  write_synthetic_dataset(a.out, a.spec);
  out << "wrote " << a.spec.count << " tiles to " << a.out << "\n";
}

struct SplitArgs {
  int64_t items = 0;
  int folds = 10;
  std::string ratio = "9:1";
  uint64_t seed = 0;
  std::string out;
};

void cmd_split(const SplitArgs& a, OutputGuard& guard, std::ostream& out) {
  const auto colon = a.ratio.find(':');
  int rt = 0, rv = 0;
  try {
    if (colon == std::string::npos) throw std::invalid_argument(a.ratio);
    size_t u1 = 0, u2 = 0;
    rt = std::stoi(a.ratio.substr(0, colon), &u1);
    rv = std::stoi(a.ratio.substr(colon + 1), &u2);
    if (u1 != colon || u2 != a.ratio.size() - colon - 1) throw std::invalid_argument(a.ratio);
  } catch (const std::exception&) {
    throw UsageError("--ratio must look like 9:1, got '" + a.ratio + "'");
  }
  const auto folds = kfold_split(a.items, a.folds, rt, rv, a.seed);
  guard.file(a.out);
  write_output(a.out, format_manifest(folds, a.items), "manifest");
  out << "wrote " << folds.size() << " folds (" << folds.front().train_ids.size() << " train / "
      << folds.front().val_ids.size() << " validation) to " << a.out << "\n";
}

struct TrainArgs {
  std::string config;
  int fold = -1;
  std::string data;
  std::string manifest;
  std::string out;
};

void cmd_train(const TrainArgs& a, OutputGuard& guard, std::ostream& out) {
  const ExperimentConfig cfg = load_experiment(a.config);
  const std::vector<std::string> ids = dataset_ids(a.data);
  std::vector<std::string> train_ids = ids, val_ids;
  if (a.fold >= 0) {
    const std::string manifest = a.manifest.empty() ? (fs::path(a.data) / "manifest.txt").string() : a.manifest;
    const auto folds = parse_manifest(detail::read_file(manifest, "manifest"), static_cast<int64_t>(ids.size()));
    auto it = std::find_if(folds.begin(), folds.end(), [&](const FoldSpec& f) { return f.fold == a.fold; });
    if (it == folds.end()) throw ConfigError("fold " + std::to_string(a.fold) + " is not in '" + manifest + "'");
    train_ids.clear();
    for (int64_t i : it->train_ids) train_ids.push_back(ids[static_cast<size_t>(i)]);
    for (int64_t i : it->val_ids) val_ids.push_back(ids[static_cast<size_t>(i)]);
  }
  const int nc = static_cast<int>(cfg.model.num_classes);
  const auto train = load_samples(a.data, train_ids, nc, cfg.train.clip_quantile);
  const auto val = load_samples(a.data, val_ids, nc, cfg.train.clip_quantile);

  guard.dir(a.out);
  write_output(fs::path(a.out) / "config.txt", cfg.to_text(), "config");
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s;
  };
  write_output(fs::path(a.out) / "split.txt", "train = " + join(train_ids) + "\nvalidation = " + join(val_ids) + "\n",
               "split");
  Model<float> model = build_model<float>(cfg.model, cfg.model_seed);
  const FitResult result = fit(model, train, val, cfg.train, a.out, [&](const EpochRecord& r) {
    out << "epoch " << r.epoch << " loss " << fixed(r.train_loss, 6) << " train_oa " << fixed(r.train_oa, 6);
    if (r.has_validation) out << " val_fwiou " << fixed(r.val_fwiou, 6);
    out << "\n";
  });
  out << "best_epoch = " << result.best_epoch << "\n";
}

std::vector<std::string> resolve_ids(const std::vector<std::string>& all, const std::string& list) {
  if (list.empty() || list == "all") return all;
  std::vector<std::string> ids;
  for (const auto& item : split_list(list)) {
    if (std::find(all.begin(), all.end(), item) != all.end()) {
      ids.push_back(item);
      continue;
    }
    size_t used = 0;
    long long index = -1;
    try {
      index = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || index < 0 || index >= static_cast<long long>(all.size())) {
      throw UsageError("unknown tile id '" + item + "'");
    }
    ids.push_back(all[static_cast<size_t>(index)]);
  }
  if (ids.empty()) throw UsageError("--ids selects no tiles");
  return ids;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string ids;
  std::string report;
  double clip_quantile = 0.99;
};

void cmd_eval(const EvalArgs& a, OutputGuard& guard, std::ostream& out) {
  Model<float> model = load_checkpoint(a.checkpoint);
  const auto ids = resolve_ids(dataset_ids(a.data), a.ids);
  const auto samples = load_samples(a.data, ids, static_cast<int>(model.config().num_classes), a.clip_quantile);
  const MetricsReport report = evaluate(confusion_over(model, samples));
  if (!a.report.empty()) {
    guard.file(a.report);
    write_output(a.report, metrics_to_json(report) + "\n", "report");
  }
  out << "tiles = " << samples.size() << "\n" << summary(report);
}

struct PredictArgs {
  std::string checkpoint;
  std::string tile;
  std::string out;
  double clip_quantile = 0.99;
};

void cmd_predict(const PredictArgs& a, OutputGuard& guard, std::ostream& out) {
  Model<float> model = load_checkpoint(a.checkpoint);
  const PolSarTile tile = load_tile(a.tile);
  const LabelMap map = predict_map(model, tile, a.clip_quantile);
  const std::string image = encode_ppm(map, default_palette(static_cast<int>(model.config().num_classes)));
  guard.file(a.out);
  write_output(a.out, image, "image");
  out << "wrote " << map.width << "x" << map.height << " map to " << a.out << "\n";
}

struct AnalyzeArgs {
  std::string arch = "mp_resnet";
  std::string input = "4x512x512";
  std::string report;
  int mac_factor = 0;
};

void cmd_analyze(const AnalyzeArgs& a, OutputGuard& guard, std::ostream& out) {
  ModelConfig config = parse_variant(a.arch) == Variant::kMpResnet ? ModelConfig::reference_mp_resnet()
                                                                   : ModelConfig::reference_fcn_baseline();
  const Shape input = parse_input_shape(a.input);
  config.num_input_channels = input[1];
  config.validate();
  CostConventions conventions;
  conventions.mac_factor = a.mac_factor == 0 ? calibrate_mac_factor().mac_factor : a.mac_factor;
  const CostReport report = count_flops(config, input, conventions);
  const ReceptiveField rf = receptive_field(config);
  const std::string text = format_report_text(report, rf);
  if (a.report.empty()) {
    out << text;
    return;
  }
  const bool json = fs::path(a.report).extension() == ".json";
  guard.file(a.report);
  write_output(a.report, json ? format_report_json(report, rf) + "\n" : text, "report");
  out << text.substr(0, text.find("\n\n") + 1);
}

struct AblateArgs {
  std::string data;
  std::string folds;
  std::string out;
  std::string config;
  int max_folds = 0;
  bool reference = false;
};

void cmd_ablate(const AblateArgs& a, OutputGuard& guard, std::ostream& out) {
  const ExperimentConfig cfg = load_experiment(a.config);
  AblationOptions opts;
  if (a.reference) {
    opts.mp_resnet = ModelConfig::reference_mp_resnet();
    opts.fcn_baseline = ModelConfig::reference_fcn_baseline();
  }
  opts.train = cfg.train;
  opts.model_seed = cfg.model_seed;
  opts.max_folds = a.max_folds;
  const auto ids = dataset_ids(a.data);
  const auto folds = parse_manifest(detail::read_file(a.folds, "manifest"), static_cast<int64_t>(ids.size()));
  const auto samples =
      load_samples(a.data, ids, static_cast<int>(opts.mp_resnet.num_classes), opts.train.clip_quantile);
  guard.dir(a.out);
  const AblationResult result = run_ablation(samples, folds, opts, [&](int fold, Variant v) {
    out << "fold " << fold << ": training " << to_string(v) << "\n" << std::flush;
  });
  const std::string table = format_ablation_table(result);
  write_output(fs::path(a.out) / "ablation.txt", table, "ablation table");
  write_output(fs::path(a.out) / "ablation.json", ablation_to_json(result) + "\n", "ablation report");
  out << table;
}

}  // namespace

std::vector<Rgb> default_palette(int num_classes) {
  if (num_classes < 1 || num_classes > 254) {
    throw ConfigError("palette needs 1..254 classes, got " + std::to_string(num_classes));
  }
  std::vector<Rgb> palette{{0, 0, 255}, {255, 0, 0}, {255, 0, 255}, {0, 255, 0}, {255, 255, 0}, {255, 255, 255}};
  palette.resize(std::min<size_t>(palette.size(), static_cast<size_t>(num_classes)));
  for (uint64_t k = 0; static_cast<int>(palette.size()) < num_classes; ++k) {
    const uint64_t h = mix(k);
    const Rgb c{static_cast<uint8_t>(h), static_cast<uint8_t>(h >> 8), static_cast<uint8_t>(h >> 16)};
    if (c == kIgnoreColor || std::find(palette.begin(), palette.end(), c) != palette.end()) continue;
    palette.push_back(c);
  }
  return palette;
}

std::string encode_ppm(const LabelMap& labels, const std::vector<Rgb>& palette) {
  std::string s = "P6\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  s.reserve(s.size() + labels.data.size() * 3);
  for (size_t i = 0; i < labels.data.size(); ++i) {
    const uint8_t v = labels.data[i];
    Rgb c = kIgnoreColor;
    if (v != kIgnoreLabel) {
      if (v >= palette.size()) {
        const int64_t w = std::max<int64_t>(labels.width, 1);
        throw DataError("label " + std::to_string(v) + " has no palette color", static_cast<int64_t>(i) / w,
                        static_cast<int64_t>(i) % w);
      }
      c = palette[v];
    }
    s.push_back(static_cast<char>(c.r));
    s.push_back(static_cast<char>(c.g));
    s.push_back(static_cast<char>(c.b));
  }
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MP-ResNet segmentation toolkit", "mpresnet"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth", "Generate a synthetic speckled dataset");
  s_synth->add_option("--seed", synth.spec.seed, "Dataset seed");
  s_synth->add_option("--count", synth.spec.count, "Number of tiles")->check(CLI::PositiveNumber);
  s_synth->add_option("--size", synth.spec.size, "Tile height and width (multiple of 32)");
  s_synth->add_option("--looks", synth.spec.looks, "Speckle looks L");
  s_synth->add_option("--classes", synth.spec.num_classes, "Number of classes");
  s_synth->add_option("--out", synth.out, "Output directory")->required();

  SplitArgs split;
  auto* s_split = app.add_subcommand("split", "Write a k-fold train/validation manifest");
  s_split->add_option("--items", split.items, "Number of dataset items")->required();
  s_split->add_option("--folds", split.folds, "Number of folds");
  s_split->add_option("--ratio", split.ratio, "train:validation ratio");
  s_split->add_option("--seed", split.seed, "Split seed");
  s_split->add_option("--out", split.out, "Manifest path")->required();

  TrainArgs train;
  auto* s_train = app.add_subcommand("train", "Train one model");
  s_train->add_option("--config", train.config, "Experiment config (key = value)");
  s_train->add_option("--fold", train.fold, "Manifest fold; omitted trains on every tile");
  s_train->add_option("--data", train.data, "Dataset directory")->required();
  s_train->add_option("--manifest", train.manifest, "Fold manifest (default DATA/manifest.txt)");
  s_train->add_option("--out", train.out, "Run directory")->required();

  EvalArgs eval;
  auto* s_eval = app.add_subcommand("eval", "Score a checkpoint on labelled tiles");
  s_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  s_eval->add_option("--data", eval.data, "Dataset directory")->required();
  s_eval->add_option("--ids", eval.ids, "Comma-separated tile ids or indices (default all)");
  s_eval->add_option("--report", eval.report, "JSON metrics report");
  s_eval->add_option("--clip-quantile", eval.clip_quantile, "Preprocessing clip quantile");

  PredictArgs predict;
  auto* s_predict = app.add_subcommand("predict", "Write a colorized label map (binary PPM)");
  s_predict->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
  s_predict->add_option("--tile", predict.tile, "Tile file (.psar)")->required();
  s_predict->add_option("--out", predict.out, "Output image (.ppm)")->required();
  s_predict->add_option("--clip-quantile", predict.clip_quantile, "Preprocessing clip quantile");

  AnalyzeArgs analyze;
  auto* s_analyze = app.add_subcommand("analyze", "Parameter, FLOP and receptive-field report");
  s_analyze->add_option("--arch", analyze.arch, "mp_resnet or fcn_baseline");
  s_analyze->add_option("--input", analyze.input, "Input extent CxHxW");
  s_analyze->add_option("--report", analyze.report, "Report file (.json for JSON, otherwise text)");
  s_analyze->add_option("--mac-factor", analyze.mac_factor, "FLOPs per MAC (default: calibrated)")
      ->check(CLI::Range(1, 2));

  AblateArgs ablate;
  auto* s_ablate = app.add_subcommand("ablate", "Compare MP-ResNet with the FCN baseline on every fold");
  s_ablate->add_option("--data", ablate.data, "Dataset directory")->required();
  s_ablate->add_option("--folds", ablate.folds, "Fold manifest")->required();
  s_ablate->add_option("--out", ablate.out, "Output directory")->required();
  s_ablate->add_option("--config", ablate.config, "Experiment config; its training keys apply to both models");
  s_ablate->add_option("--max-folds", ablate.max_folds, "Use only the first N folds (0 = all)");
  s_ablate->add_flag("--reference", ablate.reference, "Use the full-size reference architectures");

  std::vector<std::string> argv_store{"mpresnet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    const CLI::App* target = &app;
    for (const auto* sub : app.get_subcommands()) target = sub;
    out << target->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage_error", e.what());
    return 2;
  }

  OutputGuard guard;
  try {
    if (s_synth->parsed()) cmd_synth(synth, guard, out);
    if (s_split->parsed()) cmd_split(split, guard, out);
    if (s_train->parsed()) cmd_train(train, guard, out);
    if (s_eval->parsed()) cmd_eval(eval, guard, out);
    if (s_predict->parsed()) cmd_predict(predict, guard, out);
    if (s_analyze->parsed()) cmd_analyze(analyze, guard, out);
    if (s_ablate->parsed()) cmd_ablate(ablate, guard, out);
    guard.commit();
    return 0;
  } catch (const UsageError& e) {
    report_error(err, e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    report_error(err, e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    report_error(err, "io_error", e.what());
  } catch (const std::exception& e) {
    report_error(err, "internal", e.what());
  }
  return 1;
}

}  // namespace mpresnet

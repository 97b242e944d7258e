#include "mpresnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>
#include <tuple>

#include "binary_io.hpp"
#include "mpresnet/config.hpp"
#include "mpresnet/error.hpp"
#include "mpresnet/params.hpp"

namespace mpresnet {

namespace {

constexpr std::string_view kTileMagic = "PSARTIL1";
constexpr std::string_view kLabelMagic = "PSARLBL1";
// Largest payload a tile or label file may declare.
constexpr uint64_t kMaxPayloadBytes = uint64_t{1} << 34;

uint64_t checked_payload(uint64_t a, uint64_t b, uint64_t c, uint64_t elem, const std::string& what) {
  if (a == 0 || b == 0 || c == 0) throw ExtentOverflowError(what + ": zero extent");
  const unsigned __int128 bytes = static_cast<unsigned __int128>(a) * b * c * elem;
  if (bytes > kMaxPayloadBytes) {
    throw ExtentOverflowError(what + ": extents " + std::to_string(a) + "x" + std::to_string(b) + "x" +
                              std::to_string(c) + " exceed the " + std::to_string(kMaxPayloadBytes) +
                              "-byte payload limit");
  }
  return static_cast<uint64_t>(bytes);
}

void require_no_trailing(const detail::ByteReader& r, const std::string& what) {
  if (!r.at_end()) {
    throw FormatError("trailing_bytes", what + ": " + std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
}

// Type-7 sample quantile (linear interpolation between order statistics).
double quantile(std::vector<float> v, double p) {
  const double h = (static_cast<double>(v.size()) - 1) * p;
  const size_t lo = static_cast<size_t>(std::floor(h));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double a = v[lo];
  if (lo + 1 >= v.size()) return a;
  const double b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  return a + (h - static_cast<double>(lo)) * (b - a);
}

}  // namespace

void PolSarTile::validate() const {
  if (channels < 1 || height < 1 || width < 1) throw ShapeError("extents", "tile extents must be positive");
  if (static_cast<int64_t>(data.size()) != channels * height * width) {
    throw ShapeError("data", "tile holds " + std::to_string(data.size()) + " values, extents require " +
                                 std::to_string(channels * height * width));
  }
  for (size_t i = 0; i < data.size(); ++i) {
    if (!(data[i] >= 0) || !std::isfinite(data[i])) {
      const int64_t plane = static_cast<int64_t>(i) % (height * width);
      throw DataError("intensity must be finite and >= 0", plane / width, plane % width);
    }
  }
  if (label && (label->height != height || label->width != width)) {
    throw ShapeError("label", "label extents do not match the tile");
  }
}

std::string encode_tile(const PolSarTile& tile) {
  if (tile.channels > 0xffff || tile.height > 0xffffffffLL || tile.width > 0xffffffffLL) {
    throw ExtentOverflowError("tile extents do not fit the PSAR header");
  }
  detail::ByteWriter w;
  w.bytes(kTileMagic);
  w.pod<uint16_t>(static_cast<uint16_t>(tile.channels));
  w.pod<uint32_t>(static_cast<uint32_t>(tile.height));
  w.pod<uint32_t>(static_cast<uint32_t>(tile.width));
  w.bytes(std::string_view(reinterpret_cast<const char*>(tile.data.data()), tile.data.size() * sizeof(float)));
  return w.str();
}

PolSarTile decode_tile(const std::string& bytes) {
  detail::ByteReader r(bytes, "tile");
  r.expect_magic(kTileMagic);
  PolSarTile t;
  t.channels = r.pod<uint16_t>();
  t.height = r.pod<uint32_t>();
  t.width = r.pod<uint32_t>();
  const uint64_t payload = checked_payload(static_cast<uint64_t>(t.channels), static_cast<uint64_t>(t.height),
                                           static_cast<uint64_t>(t.width), sizeof(float), "tile");
  const auto raw = r.bytes(payload);
  t.data.resize(payload / sizeof(float));
  std::memcpy(t.data.data(), raw.data(), payload);
  require_no_trailing(r, "tile");
  return t;
}

void save_tile(const PolSarTile& tile, const std::string& path) {
  detail::write_file(path, encode_tile(tile), "tile");
}

PolSarTile load_tile(const std::string& path) {
  PolSarTile t = decode_tile(detail::read_file(path, "tile"));
  t.meta.id = std::filesystem::path(path).stem().string();
  return t;
}

std::string encode_label(const LabelMap& label) {
  detail::ByteWriter w;
  w.bytes(kLabelMagic);
  w.pod<uint32_t>(static_cast<uint32_t>(label.height));
  w.pod<uint32_t>(static_cast<uint32_t>(label.width));
  w.bytes(std::string_view(reinterpret_cast<const char*>(label.data.data()), label.data.size()));
  return w.str();
}

LabelMap decode_label(const std::string& bytes) {
  detail::ByteReader r(bytes, "label");
  r.expect_magic(kLabelMagic);
  LabelMap m;
  m.height = r.pod<uint32_t>();
  m.width = r.pod<uint32_t>();
  const uint64_t payload =
      checked_payload(1, static_cast<uint64_t>(m.height), static_cast<uint64_t>(m.width), 1, "label");
  const auto raw = r.bytes(payload);
  m.data.assign(raw.begin(), raw.end());
  require_no_trailing(r, "label");
  return m;
}

void save_label(const LabelMap& label, const std::string& path) {
  detail::write_file(path, encode_label(label), "label");
}

LabelMap load_label(const std::string& path) { return decode_label(detail::read_file(path, "label")); }

void validate_labels(const LabelMap& label, int num_classes) {
  for (int64_t r = 0; r < label.height; ++r) {
    for (int64_t c = 0; c < label.width; ++c) {
      const int v = label.at(r, c);
      if (v != kIgnoreLabel && v >= num_classes) {
        throw DataError("label " + std::to_string(v) + " at (" + std::to_string(r) + "," + std::to_string(c) +
                            ") is outside [0," + std::to_string(num_classes) + ") and not the ignore value 255",
                        r, c);
      }
    }
  }
}

Tensor<float> preprocess(const PolSarTile& tile, double clip_quantile) {
  tile.validate();
  if (!(clip_quantile > 0 && clip_quantile <= 1)) throw ConfigError("clip_quantile must be in (0, 1]");
  const int64_t plane = tile.height * tile.width;
  std::vector<float> out(tile.data.size());
  for (int64_t c = 0; c < tile.channels; ++c) {
    const auto first = tile.data.begin() + c * plane;
    std::vector<float> values(first, first + plane);
    const double lo = *std::min_element(values.begin(), values.end());
    const double q = quantile(std::move(values), clip_quantile);
    const double range = q - lo;
    for (int64_t i = 0; i < plane; ++i) {
      const double x = std::min<double>(first[i], q);
      out[static_cast<size_t>(c * plane + i)] = range > 0 ? static_cast<float>((x - lo) / range) : 0.0f;
    }
  }
  return Tensor<float>({tile.channels, tile.height, tile.width}, std::move(out));
}

float class_mean_backscatter(int class_id, int channel) {
  // Fixed table shared by every scene so that classes mean the same thing
  // across tiles: log-uniform in [0.02, 1].
  std::mt19937_64 rng(splitmix64(0x5ca77e12ULL + static_cast<uint64_t>(class_id) * 16 + channel));
  std::uniform_real_distribution<double> u(std::log(0.02), 0.0);
  return static_cast<float>(std::exp(u(rng)));
}

PolSarTile synth_scene(uint64_t seed, int64_t height, int64_t width, int num_classes, int looks) {
  if (looks < 1) throw ConfigError("looks must be >= 1");
  if (height % 32 != 0 || width % 32 != 0 || height <= 0 || width <= 0) {
    throw ConfigError("scene extents must be positive multiples of 32");
  }
  if (num_classes < 1 || num_classes > 254) throw ConfigError("num_classes must be in [1, 254]");
  std::mt19937_64 rng(splitmix64(seed));
  std::normal_distribution<double> normal(0.0, 1.0);

  // One smooth field per class on a 1/8 grid; the label is the argmax of the
  // bilinearly upsampled fields.
  const int64_t gh = height / 8, gw = width / 8;
  std::vector<std::vector<double>> fields(static_cast<size_t>(num_classes));
  for (auto& f : fields) {
    std::vector<double> white(static_cast<size_t>(gh * gw));
    for (auto& v : white) v = normal(rng);
    f.assign(white.size(), 0.0);
    for (int64_t i = 0; i < gh; ++i) {
      for (int64_t j = 0; j < gw; ++j) {
        double s = 0;
        int n = 0;
        for (int64_t di = -1; di <= 1; ++di) {
          for (int64_t dj = -1; dj <= 1; ++dj) {
            const int64_t r = i + di, c = j + dj;
            if (r < 0 || r >= gh || c < 0 || c >= gw) continue;
            s += white[static_cast<size_t>(r * gw + c)];
            ++n;
          }
        }
        f[static_cast<size_t>(i * gw + j)] = s / n;
      }
    }
  }

  auto render = [&]() {
    LabelMap label(height, width);
    auto taps = [](int64_t o, int64_t in, int64_t out) {
      double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      s = std::max(s, 0.0);
      const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(s), in - 1);
      return std::tuple<int64_t, int64_t, double>(i0, std::min(i0 + 1, in - 1), s - static_cast<double>(i0));
    };
    for (int64_t r = 0; r < height; ++r) {
      const auto [r0, r1, a] = taps(r, gh, height);
      for (int64_t c = 0; c < width; ++c) {
        const auto [c0, c1, b] = taps(c, gw, width);
        int best = 0;
        double best_value = -INFINITY;
        for (int k = 0; k < num_classes; ++k) {
          const auto& f = fields[static_cast<size_t>(k)];
          auto at = [&](int64_t i, int64_t j) { return f[static_cast<size_t>(i * gw + j)]; };
          const double top = at(r0, c0) + b * (at(r0, c1) - at(r0, c0));
          const double bottom = at(r1, c0) + b * (at(r1, c1) - at(r1, c0));
          const double v = top + a * (bottom - top);
          if (v > best_value) {
            best_value = v;
            best = k;
          }
        }
        label.at(r, c) = static_cast<uint8_t>(best);
      }
    }
    return label;
  };

  LabelMap label = render();
  // Coverage: raise a missing class's field over a random 2x2 coarse patch
  // until every class is present.
  std::uniform_int_distribution<int64_t> pick_r(0, gh - 1), pick_c(0, gw - 1);
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<bool> present(static_cast<size_t>(num_classes), false);
    for (uint8_t v : label.data) present[v] = true;
    const auto missing = std::find(present.begin(), present.end(), false);
    if (missing == present.end()) break;
    const int k = static_cast<int>(missing - present.begin());
    const int64_t r = pick_r(rng), c = pick_c(rng);
    for (int64_t i = r; i < std::min(r + 2, gh); ++i) {
      for (int64_t j = c; j < std::min(c + 2, gw); ++j) {
        fields[static_cast<size_t>(k)][static_cast<size_t>(i * gw + j)] += 4.0;
      }
    }
    label = render();
  }

  PolSarTile tile;
  tile.channels = 4;
  tile.height = height;
  tile.width = width;
  tile.data.resize(static_cast<size_t>(4 * height * width));
  std::gamma_distribution<double> speckle(static_cast<double>(looks), 1.0 / static_cast<double>(looks));
  for (int64_t ch = 0; ch < 4; ++ch) {
    for (int64_t i = 0; i < height * width; ++i) {
      const double mean = class_mean_backscatter(label.data[static_cast<size_t>(i)], static_cast<int>(ch));
      tile.data[static_cast<size_t>(ch * height * width + i)] = static_cast<float>(mean * speckle(rng));
    }
  }
  tile.label = std::move(label);
  tile.meta.id = "synthetic";
  return tile;
}

std::vector<FoldSpec> kfold_split(int64_t num_items, int num_folds, int ratio_train, int ratio_val, uint64_t seed) {
  if (ratio_train <= 0 || ratio_val <= 0) {
    throw ConfigError("invalid ratio " + std::to_string(ratio_train) + ":" + std::to_string(ratio_val));
  }
  if (num_folds < 1) throw ConfigError("num_folds must be >= 1");
  if (num_items < num_folds) {
    throw ConfigError("num_items (" + std::to_string(num_items) + ") must be >= num_folds (" +
                      std::to_string(num_folds) + ")");
  }
  const int64_t total = ratio_train + ratio_val;
  const int64_t n_val = (num_items * ratio_val + total - 1) / total;
  if (n_val >= num_items) throw ConfigError("ratio leaves no training items");
  std::vector<FoldSpec> folds;
  for (int f = 0; f < num_folds; ++f) {
    FoldSpec spec;
    spec.fold = f;
    spec.seed = splitmix64(seed + static_cast<uint64_t>(f));
    std::vector<int64_t> ids(static_cast<size_t>(num_items));
    for (int64_t i = 0; i < num_items; ++i) ids[static_cast<size_t>(i)] = i;
    std::mt19937_64 rng(spec.seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    spec.val_ids.assign(ids.begin(), ids.begin() + n_val);
    spec.train_ids.assign(ids.begin() + n_val, ids.end());
    std::sort(spec.val_ids.begin(), spec.val_ids.end());
    std::sort(spec.train_ids.begin(), spec.train_ids.end());
    folds.push_back(std::move(spec));
  }
  return folds;
}

std::string format_manifest(const std::vector<FoldSpec>& folds, int64_t num_items) {
  std::string s = "# fold seed validation_ids (items = " + std::to_string(num_items) + ")\n";
  for (const auto& f : folds) {
    s += std::to_string(f.fold) + " " + std::to_string(f.seed) + " ";
    for (size_t i = 0; i < f.val_ids.size(); ++i) s += (i ? "," : "") + std::to_string(f.val_ids[i]);
    s += "\n";
  }
  return s;
}

std::vector<FoldSpec> parse_manifest(const std::string& text, int64_t num_items) {
  std::vector<FoldSpec> folds;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    FoldSpec f;
    std::string ids;
    if (!(ls >> f.fold >> f.seed >> ids)) {
      throw ConfigError("manifest line " + std::to_string(lineno) + ": expected '<fold> <seed> <ids>'");
    }
    std::vector<bool> is_val(static_cast<size_t>(num_items), false);
    std::istringstream is(ids);
    std::string item;
    while (std::getline(is, item, ',')) {
      int64_t id = -1;
      try {
        id = std::stoll(item);
      } catch (const std::exception&) {
        throw ConfigError("manifest line " + std::to_string(lineno) + ": bad id '" + item + "'");
      }
      if (id < 0 || id >= num_items || is_val[static_cast<size_t>(id)]) {
        throw ConfigError("manifest line " + std::to_string(lineno) + ": id " + item +
                          " is out of range or repeated");
      }
      is_val[static_cast<size_t>(id)] = true;
      f.val_ids.push_back(id);
    }
    for (int64_t i = 0; i < num_items; ++i) {
      if (!is_val[static_cast<size_t>(i)]) f.train_ids.push_back(i);
    }
    std::sort(f.val_ids.begin(), f.val_ids.end());
    folds.push_back(std::move(f));
  }
  return folds;
}

void write_synthetic_dataset(const std::string& dir, const SyntheticDatasetSpec& spec) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int64_t i = 0; i < spec.count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "tile_%04lld", static_cast<long long>(i));
    const PolSarTile t =
        synth_scene(splitmix64(spec.seed + static_cast<uint64_t>(i)), spec.size, spec.size, spec.num_classes,
                    spec.looks);
    save_tile(t, (fs::path(dir) / (std::string(stem) + ".psar")).string());
    save_label(*t.label, (fs::path(dir) / (std::string(stem) + ".label")).string());
  }
  KeyValueDoc doc;
  doc.set("seed", std::to_string(spec.seed));
  doc.set("count", std::to_string(spec.count));
  doc.set("size", std::to_string(spec.size));
  doc.set("looks", std::to_string(spec.looks));
  doc.set("num_classes", std::to_string(spec.num_classes));
  detail::write_file((fs::path(dir) / "dataset.txt").string(), doc.to_text(), "dataset description");
}

std::vector<std::string> list_tiles(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error("io_error", "not a directory: '" + dir + "'");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".psar") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

PolSarTile load_item(const std::string& dir, const std::string& id) {
  namespace fs = std::filesystem;
  PolSarTile t = load_tile((fs::path(dir) / (id + ".psar")).string());
  const fs::path label = fs::path(dir) / (id + ".label");
  if (fs::exists(label)) {
    t.label = load_label(label.string());
    if (t.label->height != t.height || t.label->width != t.width) {
      throw ShapeError("label", "label extents of '" + id + "' do not match its tile");
    }
  }
  t.meta.id = id;
  return t;
}

}  // namespace mpresnet

#include "mpresnet/config.hpp"

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mpresnet/error.hpp"

namespace mpresnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& key, const std::string& text) {
  int64_t v = 0;
  const char* first = text.data();
  const char* last = first + text.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || p != last) throw ConfigError("key '" + key + "': not an integer: '" + text + "'");
  return v;
}

template <size_t N>
std::array<int64_t, N> to_array(const std::string& key, const std::vector<int64_t>& v) {
  if (v.size() != N) {
    throw ConfigError("key '" + key + "' expects " + std::to_string(N) + " values, got " +
                      std::to_string(v.size()));
  }
  std::array<int64_t, N> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

template <size_t N>
std::string join(const std::array<int64_t, N>& a) {
  std::string s;
  for (size_t i = 0; i < N; ++i) s += (i ? "," : "") + std::to_string(a[i]);
  return s;
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(const std::string& text) {
  KeyValueDoc doc;
  std::istringstream in(text);
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (doc.values_.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    doc.values_[key] = trim(line.substr(eq + 1));
  }
  return doc;
}

KeyValueDoc KeyValueDoc::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& KeyValueDoc::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing key '" + key + "'");
  read_.insert(key);
  return it->second;
}

void KeyValueDoc::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

std::string KeyValueDoc::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

int64_t KeyValueDoc::get_int(const std::string& key, int64_t fallback) const {
  return has(key) ? parse_int(key, get(key)) : fallback;
}

double KeyValueDoc::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& text = get(key);
  try {
    size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not a number: '" + text + "'");
  }
}

std::vector<int64_t> KeyValueDoc::get_int_list(const std::string& key, std::vector<int64_t> fallback) const {
  if (!has(key)) return fallback;
  std::vector<int64_t> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_int(key, trim(item)));
  return out;
}

std::vector<std::string> KeyValueDoc::unread_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_) {
    if (!read_.count(k)) out.push_back(k);
  }
  return out;
}

std::string KeyValueDoc::to_text() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

Rational Rational::parse(const std::string& text) {
  const std::string t = trim(text);
  const auto slash = t.find('/');
  Rational r;
  if (slash == std::string::npos) {
    r.num = parse_int("branch_width_multiplier", t);
    r.den = 1;
  } else {
    r.num = parse_int("branch_width_multiplier", trim(t.substr(0, slash)));
    r.den = parse_int("branch_width_multiplier", trim(t.substr(slash + 1)));
  }
  if (r.num <= 0 || r.den <= 0) throw ConfigError("rational must be positive: '" + text + "'");
  const int64_t g = std::gcd(r.num, r.den);
  r.num /= g;
  r.den /= g;
  return r;
}

std::string Rational::to_string() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

std::string to_string(Variant v) { return v == Variant::kMpResnet ? "mp_resnet" : "fcn_baseline"; }
std::string to_string(HeadKind h) { return h == HeadKind::kBilinear8x ? "bilinear8x" : "progressive"; }

Variant parse_variant(const std::string& text) {
  if (text == "mp_resnet") return Variant::kMpResnet;
  if (text == "fcn_baseline") return Variant::kFcnBaseline;
  throw ConfigError("unknown variant '" + text + "' (expected mp_resnet or fcn_baseline)");
}

HeadKind parse_head(const std::string& text) {
  if (text == "bilinear8x") return HeadKind::kBilinear8x;
  if (text == "progressive") return HeadKind::kProgressive;
  throw ConfigError("unknown head '" + text + "' (expected bilinear8x or progressive)");
}

ModelConfig ModelConfig::reference_mp_resnet() { return ModelConfig{}; }

ModelConfig ModelConfig::reference_fcn_baseline() {
  ModelConfig c;
  c.variant = Variant::kFcnBaseline;
  return c;
}

ModelConfig ModelConfig::tiny_mp_resnet() {
  ModelConfig c;
  c.stem_width = 16;
  c.stage_blocks = {1, 1, 1, 1};
  c.branch_widths = {32, 64, 128};
  c.branch_width_multiplier = {1, 1};
  c.decoder_width = 32;
  return c;
}

ModelConfig ModelConfig::tiny_fcn_baseline() {
  ModelConfig c = tiny_mp_resnet();
  c.variant = Variant::kFcnBaseline;
  return c;
}

ModelConfig ModelConfig::grad_check_mp_resnet() {
  ModelConfig c;
  c.num_classes = 3;
  c.stem_width = 4;
  c.stage_blocks = {1, 1, 1, 1};
  c.branch_widths = {8, 12, 16};
  c.branch_width_multiplier = {1, 1};
  c.decoder_width = 8;
  return c;
}

ModelConfig ModelConfig::grad_check_fcn_baseline() {
  ModelConfig c = grad_check_mp_resnet();
  c.variant = Variant::kFcnBaseline;
  return c;
}

int64_t ModelConfig::stage_width(int stage) const {
  if (stage < 1 || stage > 4) throw ConfigError("stage index out of range: " + std::to_string(stage));
  return stem_width << (stage - 1);
}

int64_t ModelConfig::branch_width(int branch) const {
  if (branch < 0 || branch > 2) throw ConfigError("branch index out of range: " + std::to_string(branch));
  const int64_t scaled = branch_widths[static_cast<size_t>(branch)] * branch_width_multiplier.num;
  if (scaled % branch_width_multiplier.den != 0) {
    throw ConfigError("branch " + std::to_string(branch) + " width " +
                      std::to_string(branch_widths[static_cast<size_t>(branch)]) + " * " +
                      branch_width_multiplier.to_string() + " is not an integer");
  }
  return scaled / branch_width_multiplier.den;
}

int ModelConfig::branch_downsamples(int branch) const {
  int steps = 0;
  for (int64_t d = branch_scales[static_cast<size_t>(branch)]; d > 8; d /= 2) ++steps;
  return steps;
}

void ModelConfig::validate() const {
  if (num_input_channels < 1) throw ConfigError("num_input_channels must be >= 1");
  if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in [2, 255]");
  if (stem_width < 1) throw ConfigError("stem_width must be >= 1");
  for (int64_t b : stage_blocks) {
    if (b < 1) throw ConfigError("stage_blocks entries must be >= 1");
  }
  if (branch_scales[0] != 8) throw ConfigError("branch_scales must start at 1/8");
  for (size_t i = 0; i < branch_scales.size(); ++i) {
    const int64_t d = branch_scales[i];
    if (d <= 0 || (d & (d - 1)) != 0) throw ConfigError("branch_scales must be powers of two");
    if (i > 0 && d <= branch_scales[i - 1]) throw ConfigError("branch_scales must be strictly decreasing");
  }
  // Each branch can only downsample at the first block of stages 3 and 4.
  for (int i = 0; i < 3; ++i) {
    if (branch_downsamples(i) > 2) {
      throw ConfigError("branch scale 1/" + std::to_string(branch_scales[static_cast<size_t>(i)]) +
                        " is below 1/32; only two stride-2 stages follow the shared trunk");
    }
  }
  if (branch_width_multiplier.num <= 0 || branch_width_multiplier.den <= 0) {
    throw ConfigError("branch_width_multiplier must be positive");
  }
  for (int i = 0; i < 3; ++i) {
    const int64_t w = branch_width(i);
    if (w < 4 || w % 4 != 0) {
      throw ConfigError("branch " + std::to_string(i) + " width " + std::to_string(w) + " must be a positive multiple of 4");
    }
  }
  if (stage_width(3) % 4 != 0) throw ConfigError("stage-3 width must be divisible by 4");
  if (decoder_width < 4 || decoder_width % 4 != 0) {
    throw ConfigError("decoder_width must be a positive multiple of 4");
  }
  if (head == HeadKind::kProgressive && decoder_width % 16 != 0) {
    throw ConfigError("progressive head requires decoder_width divisible by 16");
  }
}

void ModelConfig::write_to(KeyValueDoc& doc) const {
  doc.set("variant", to_string(variant));
  doc.set("num_input_channels", std::to_string(num_input_channels));
  doc.set("num_classes", std::to_string(num_classes));
  doc.set("stem_width", std::to_string(stem_width));
  doc.set("stage_blocks", join(stage_blocks));
  doc.set("branch_scales", join(branch_scales));
  doc.set("branch_widths", join(branch_widths));
  doc.set("branch_width_multiplier", branch_width_multiplier.to_string());
  doc.set("decoder_width", std::to_string(decoder_width));
  doc.set("head", to_string(head));
}

std::string ModelConfig::to_text() const {
  KeyValueDoc doc;
  write_to(doc);
  return doc.to_text();
}

ModelConfig ModelConfig::from_doc(const KeyValueDoc& doc) {
  ModelConfig c;
  c.variant = parse_variant(doc.get_string("variant", to_string(c.variant)));
  if (c.variant == Variant::kFcnBaseline) c = reference_fcn_baseline();
  c.num_input_channels = doc.get_int("num_input_channels", c.num_input_channels);
  c.num_classes = doc.get_int("num_classes", c.num_classes);
  c.stem_width = doc.get_int("stem_width", c.stem_width);
  auto vec = [](const auto& a) { return std::vector<int64_t>(a.begin(), a.end()); };
  c.stage_blocks = to_array<4>("stage_blocks", doc.get_int_list("stage_blocks", vec(c.stage_blocks)));
  c.branch_scales = to_array<3>("branch_scales", doc.get_int_list("branch_scales", vec(c.branch_scales)));
  c.branch_widths = to_array<3>("branch_widths", doc.get_int_list("branch_widths", vec(c.branch_widths)));
  if (doc.has("branch_width_multiplier")) {
    c.branch_width_multiplier = Rational::parse(doc.get("branch_width_multiplier"));
  }
  c.decoder_width = doc.get_int("decoder_width", c.decoder_width);
  c.head = parse_head(doc.get_string("head", to_string(c.head)));
  c.validate();
  return c;
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  const KeyValueDoc doc = KeyValueDoc::parse(text);
  ModelConfig c = from_doc(doc);
  const auto unread = doc.unread_keys();
  if (!unread.empty()) throw ConfigError("unknown model config key '" + unread.front() + "'");
  return c;
}

}  // namespace mpresnet

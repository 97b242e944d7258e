#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mpresnet {

// Flat "key = value" text document. '#' starts a comment; blank lines are
// ignored. Keys are unique.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(const std::string& text);
  static KeyValueDoc load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  void set(const std::string& key, std::string value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::vector<int64_t> get_int_list(const std::string& key, std::vector<int64_t> fallback) const;

  // Keys never read through a getter. Used to reject typos.
  std::vector<std::string> unread_keys() const;
  std::string to_text() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

struct Rational {
  int64_t num = 1;
  int64_t den = 1;

  static Rational parse(const std::string& text);
  std::string to_string() const;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

enum class Variant { kMpResnet, kFcnBaseline };
enum class HeadKind { kBilinear8x, kProgressive };

std::string to_string(Variant v);
std::string to_string(HeadKind h);
Variant parse_variant(const std::string& text);
HeadKind parse_head(const std::string& text);

// Full architectural description; the single source of truth for building,
// cost accounting and checkpointing.
struct ModelConfig {
  Variant variant = Variant::kMpResnet;
  int64_t num_input_channels = 4;
  int64_t num_classes = 6;
  int64_t stem_width = 64;
  std::array<int64_t, 4> stage_blocks{3, 4, 6, 3};
  // Denominators of the branch scaling rates (1/8, 1/16, 1/32).
  std::array<int64_t, 3> branch_scales{8, 16, 32};
  // Channel width of each branch's deepest stage, before the multiplier.
  std::array<int64_t, 3> branch_widths{512, 512, 512};
  Rational branch_width_multiplier{15, 16};
  int64_t decoder_width = 128;
  HeadKind head = HeadKind::kBilinear8x;

  static ModelConfig reference_mp_resnet();
  static ModelConfig reference_fcn_baseline();
  // stem 16, one block per stage, branch widths [32, 64, 128].
  static ModelConfig tiny_mp_resnet();
  static ModelConfig tiny_fcn_baseline();
  // Under 50k parameters; used for finite-difference gradient checks.
  static ModelConfig grad_check_mp_resnet();
  static ModelConfig grad_check_fcn_baseline();

  // Throws ConfigError describing the first violated invariant.
  void validate() const;

  // ResNet convention: stem_width * 2^(stage-1) for stage in 1..4.
  int64_t stage_width(int stage) const;
  // branch_widths[i] * multiplier (validated to be an integer).
  int64_t branch_width(int branch) const;
  // Number of stride-2 steps a branch takes after the shared 1/8 trunk.
  int branch_downsamples(int branch) const;

  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  // Reads the model keys of a shared document (leaves other keys unread).
  static ModelConfig from_doc(const KeyValueDoc& doc);
  void write_to(KeyValueDoc& doc) const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace mpresnet

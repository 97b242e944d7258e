#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mpresnet/label_map.hpp"

namespace mpresnet {

struct Rgb {
  uint8_t r = 0;
  uint8_t g = 0;
  uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

// Color of ignored (255) pixels; never used by a class.
inline constexpr Rgb kIgnoreColor{128, 128, 128};

// Distinct colors for classes 0..num_classes-1. The first six are water,
// built-up, industrial, grassland, barren and others; further classes get
// generated colors. Throws ConfigError outside 1..254 classes.
std::vector<Rgb> default_palette(int num_classes);

// Binary P6 pixel map of the label map. Throws DataError for a label with no
// palette entry.
std::string encode_ppm(const LabelMap& labels, const std::vector<Rgb>& palette);

// Runs one command ("synth", "split", "train", "eval", "predict", "analyze",
// "ablate") with its flags, e.g. {"split", "--items", "40", ...}. Progress
// goes to `out`. Failures print a single line "error: <kind>: <message>" to
// `err`, remove the command's partial outputs and return a non-zero status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mpresnet

#pragma once

#include <cstdint>
#include <vector>

namespace mpresnet {

inline constexpr int kIgnoreLabel = 255;

// height x width class ids, row-major. 255 marks ignored pixels.
struct LabelMap {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> data;

  LabelMap() = default;
  LabelMap(int64_t h, int64_t w, uint8_t fill = 0)
      : height(h), width(w), data(static_cast<size_t>(h * w), fill) {}

  uint8_t at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * width + c)]; }
  uint8_t& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * width + c)]; }
  bool operator==(const LabelMap&) const = default;
};

}  // namespace mpresnet

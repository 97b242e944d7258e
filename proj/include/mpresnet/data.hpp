#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mpresnet/label_map.hpp"
#include "mpresnet/tensor.hpp"

namespace mpresnet {

struct TileMetadata {
  std::string id;
  double ground_sample_distance_m = 0;
};

// Planar intensities (channel-major, row-major within a plane) plus an
// optional label map.
struct PolSarTile {
  int64_t channels = 4;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> data;
  std::optional<LabelMap> label;
  TileMetadata meta;

  float at(int64_t c, int64_t r, int64_t col) const {
    return data[static_cast<size_t>((c * height + r) * width + col)];
  }
  // Throws DataError for negative or non-finite intensities and ShapeError
  // for inconsistent extents.
  void validate() const;
};

// PSAR tile: "PSARTIL1" | u16 channels | u32 height | u32 width | f32 data.
std::string encode_tile(const PolSarTile& tile);
// Throws BadMagicError, TruncatedError or ExtentOverflowError.
PolSarTile decode_tile(const std::string& bytes);
void save_tile(const PolSarTile& tile, const std::string& path);
PolSarTile load_tile(const std::string& path);

// Label file: "PSARLBL1" | u32 height | u32 width | u8 class ids.
std::string encode_label(const LabelMap& label);
LabelMap decode_label(const std::string& bytes);
void save_label(const LabelMap& label, const std::string& path);
LabelMap load_label(const std::string& path);
// Throws DataError naming the first pixel outside [0, num_classes) u {255}.
void validate_labels(const LabelMap& label, int num_classes);

// Per channel: clip at the `clip_quantile` quantile q (linear interpolation
// between order statistics), then map [min, q] onto [0, 1]. A channel with
// q == min maps to all zeros. Returns [C, H, W].
Tensor<float> preprocess(const PolSarTile& tile, double clip_quantile = 0.99);

// Deterministic per-class, per-channel mean backscatter used by synth_scene.
float class_mean_backscatter(int class_id, int channel);

// Smooth random class map covering every class (extents >= 64), per-class
// channel means, multiplicative L-look gamma speckle (shape L, scale 1/L).
PolSarTile synth_scene(uint64_t seed, int64_t height, int64_t width, int num_classes, int looks);

struct FoldSpec {
  int fold = 0;
  uint64_t seed = 0;
  std::vector<int64_t> train_ids;
  std::vector<int64_t> val_ids;
};

// Independent resampled train/validation splits. Each fold draws
// ceil(n * val / (train + val)) validation items with its own derived seed.
std::vector<FoldSpec> kfold_split(int64_t num_items, int num_folds = 10, int ratio_train = 9, int ratio_val = 1,
                                  uint64_t seed = 0);

// One line per fold: "<fold> <seed> <id>,<id>,..." (validation ids).
std::string format_manifest(const std::vector<FoldSpec>& folds, int64_t num_items);
std::vector<FoldSpec> parse_manifest(const std::string& text, int64_t num_items);

// Synthetic dataset directory: tile_NNNN.psar / tile_NNNN.label and a
// dataset.txt description.
struct SyntheticDatasetSpec {
  uint64_t seed = 0;
  int64_t count = 20;
  int64_t size = 128;
  int looks = 2;
  int num_classes = 6;
};

void write_synthetic_dataset(const std::string& dir, const SyntheticDatasetSpec& spec);
// Tile ids (file stems) in the directory, sorted.
std::vector<std::string> list_tiles(const std::string& dir);
// Loads <dir>/<id>.psar and, when present, <dir>/<id>.label.
PolSarTile load_item(const std::string& dir, const std::string& id);

}  // namespace mpresnet

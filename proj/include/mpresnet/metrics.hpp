#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpresnet/label_map.hpp"

namespace mpresnet {

// s[i][j] = number of pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);
  // Row-major N*N counts; every entry must be >= 0.
  static ConfusionMatrix from_counts(int num_classes, std::vector<int64_t> counts);

  int num_classes() const { return n_; }
  int64_t at(int truth, int pred) const { return counts_[static_cast<size_t>(truth * n_ + pred)]; }
  void add(int truth, int pred, int64_t count = 1);
  int64_t total() const;
  int64_t row_sum(int truth) const;
  int64_t col_sum(int pred) const;
  int64_t trace() const;
  const std::vector<int64_t>& counts() const { return counts_; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_;
  std::vector<int64_t> counts_;
};

// Tallies every pixel whose truth is not `ignore_index`. Throws ShapeError on
// mismatched extents and DataError (with the pixel position) for labels out
// of range.
ConfusionMatrix accumulate_confusion(const LabelMap& pred, const LabelMap& truth, int num_classes,
                                     int ignore_index = kIgnoreLabel);
void accumulate_confusion(ConfusionMatrix& cm, std::span<const uint8_t> pred, std::span<const uint8_t> truth,
                          int64_t width, int ignore_index = kIgnoreLabel);

// All metric functions throw EmptyMatrixError when total() == 0.
double overall_accuracy(const ConfusionMatrix& cm);

struct ClassScore {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  // False when the class is absent from both truth and prediction; such
  // classes are excluded from the mean.
  bool in_mean = false;
};

struct F1Scores {
  std::vector<ClassScore> per_class;
  double mean_f1 = 0;
};

// precision = s_cc / column sum, recall = s_cc / row sum, F1 = 2PR/(P+R);
// a zero denominator gives 0.
F1Scores f1_scores(const ConfusionMatrix& cm);

// (1 / sum s) * sum_i row_i * s_ii / (row_i + col_i - s_ii), skipping classes
// with an empty row.
double fw_iou(const ConfusionMatrix& cm);

struct MetricsReport {
  double oa = 0;
  F1Scores f1;
  double fwiou = 0;
  ConfusionMatrix confusion{1};
};

MetricsReport evaluate(const ConfusionMatrix& cm);
// Fields: oa, per_class_f1[], precision[], recall[], mean_f1, fwiou,
// confusion (row-major), num_classes, conventions.
std::string metrics_to_json(const MetricsReport& report);

}  // namespace mpresnet

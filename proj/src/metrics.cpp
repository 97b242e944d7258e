#include "mpresnet/metrics.hpp"

#include "json.hpp"
#include "mpresnet/error.hpp"

namespace mpresnet {

namespace {

void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw EmptyMatrixError();
}

double ratio(int64_t num, int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_classes) : n_(num_classes) {
  if (num_classes < 1) throw ConfigError("confusion matrix needs at least one class");
  counts_.assign(static_cast<size_t>(n_) * static_cast<size_t>(n_), 0);
}

ConfusionMatrix ConfusionMatrix::from_counts(int num_classes, std::vector<int64_t> counts) {
  ConfusionMatrix cm(num_classes);
  if (counts.size() != cm.counts_.size()) {
    throw ShapeError("counts", "expected " + std::to_string(cm.counts_.size()) + " counts, got " +
                                   std::to_string(counts.size()));
  }
  for (int64_t c : counts) {
    if (c < 0) throw DataError("confusion counts must be non-negative");
  }
  cm.counts_ = std::move(counts);
  return cm;
}

void ConfusionMatrix::add(int truth, int pred, int64_t count) {
  if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_) {
    throw DataError("class pair (" + std::to_string(truth) + "," + std::to_string(pred) + ") out of range");
  }
  if (count < 0) throw DataError("negative confusion count");
  counts_[static_cast<size_t>(truth * n_ + pred)] += count;
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts_) t += c;
  return t;
}

int64_t ConfusionMatrix::row_sum(int truth) const {
  int64_t s = 0;
  for (int j = 0; j < n_; ++j) s += at(truth, j);
  return s;
}

int64_t ConfusionMatrix::col_sum(int pred) const {
  int64_t s = 0;
  for (int i = 0; i < n_; ++i) s += at(i, pred);
  return s;
}

int64_t ConfusionMatrix::trace() const {
  int64_t s = 0;
  for (int i = 0; i < n_; ++i) s += at(i, i);
  return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeError("num_classes", "cannot merge confusion matrices of different sizes");
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

void accumulate_confusion(ConfusionMatrix& cm, std::span<const uint8_t> pred, std::span<const uint8_t> truth,
                          int64_t width, int ignore_index) {
  if (pred.size() != truth.size()) {
    throw ShapeError("labels", "prediction has " + std::to_string(pred.size()) + " pixels, truth has " +
                                   std::to_string(truth.size()));
  }
  const int n = cm.num_classes();
  const int64_t w = width > 0 ? width : 1;
  for (size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    if (t == ignore_index) continue;
    const int64_t row = static_cast<int64_t>(i) / w, col = static_cast<int64_t>(i) % w;
    if (t >= n) {
      throw DataError("truth label " + std::to_string(t) + " out of range at (" + std::to_string(row) + "," +
                          std::to_string(col) + ")",
                      row, col);
    }
    const int p = pred[i];
    if (p >= n) {
      throw DataError("predicted label " + std::to_string(p) + " out of range at (" + std::to_string(row) + "," +
                          std::to_string(col) + ")",
                      row, col);
    }
    cm.add(t, p);
  }
}

ConfusionMatrix accumulate_confusion(const LabelMap& pred, const LabelMap& truth, int num_classes,
                                     int ignore_index) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw ShapeError("HW", "prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                               " does not match truth " + std::to_string(truth.height) + "x" +
                               std::to_string(truth.width));
  }
  ConfusionMatrix cm(num_classes);
  accumulate_confusion(cm, pred.data, truth.data, truth.width, ignore_index);
  return cm;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  return ratio(cm.trace(), cm.total());
}

F1Scores f1_scores(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  F1Scores out;
  double sum = 0;
  int counted = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    const int64_t tp = cm.at(c, c), row = cm.row_sum(c), col = cm.col_sum(c);
    ClassScore s;
    s.precision = ratio(tp, col);
    s.recall = ratio(tp, row);
    // 2PR/(P+R) = 2tp/(row+col), which avoids rounding in the quotient.
    s.f1 = ratio(2 * tp, row + col);
    s.in_mean = row + col > 0;
    if (s.in_mean) {
      sum += s.f1;
      ++counted;
    }
    out.per_class.push_back(s);
  }
  out.mean_f1 = counted ? sum / counted : 0.0;
  return out;
}

double fw_iou(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  double acc = 0;
  for (int i = 0; i < cm.num_classes(); ++i) {
    const int64_t row = cm.row_sum(i);
    if (row == 0) continue;
    const int64_t tp = cm.at(i, i);
    acc += ratio(row * tp, row + cm.col_sum(i) - tp);
  }
  return acc / static_cast<double>(cm.total());
}

MetricsReport evaluate(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.oa = overall_accuracy(cm);
  r.f1 = f1_scores(cm);
  r.fwiou = fw_iou(cm);
  r.confusion = cm;
  return r;
}

std::string metrics_to_json(const MetricsReport& report) {
  using nlohmann::json;
  json j;
  j["num_classes"] = report.confusion.num_classes();
  j["oa"] = report.oa;
  json f1 = json::array(), precision = json::array(), recall = json::array(), in_mean = json::array();
  for (const auto& s : report.f1.per_class) {
    f1.push_back(s.f1);
    precision.push_back(s.precision);
    recall.push_back(s.recall);
    in_mean.push_back(s.in_mean);
  }
  j["per_class_f1"] = f1;
  j["precision"] = precision;
  j["recall"] = recall;
  j["in_mean"] = in_mean;
  j["mean_f1"] = report.f1.mean_f1;
  j["fwiou"] = report.fwiou;
  j["confusion"] = report.confusion.counts();
  j["conventions"] = {
      {"confusion_layout", "row-major, rows = truth, columns = prediction"},
      {"mean_f1", "mean over classes present in truth or prediction"},
      {"zero_denominator", "precision, recall, F1 and IoU are 0 when their denominator is 0"},
      {"fwiou", "classes with an empty truth row are skipped"},
  };
  return j.dump(2) + "\n";
}

}  // namespace mpresnet

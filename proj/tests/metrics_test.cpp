#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "json.hpp"
#include "mpresnet/error.hpp"
#include "mpresnet/metrics.hpp"

namespace mpresnet {
namespace {

struct OracleMetrics {
  double oa = 0, mean_f1 = 0, fwiou = 0;
  std::vector<double> f1;
  std::vector<int64_t> counts;
};

// Direct per-pixel evaluation, independent of ConfusionMatrix.
OracleMetrics pixel_oracle(const LabelMap& pred, const LabelMap& truth, int n) {
  OracleMetrics m;
  m.counts.assign(static_cast<size_t>(n * n), 0);
  int64_t scored = 0, correct = 0;
  std::vector<int64_t> tp(n, 0), in_truth(n, 0), in_pred(n, 0), in_union(n, 0);
  for (size_t i = 0; i < truth.data.size(); ++i) {
    const int t = truth.data[i], p = pred.data[i];
    if (t == kIgnoreLabel) continue;
    ++scored;
    ++m.counts[static_cast<size_t>(t * n + p)];
    correct += t == p;
    for (int c = 0; c < n; ++c) {
      const bool a = t == c, b = p == c;
      tp[c] += a && b;
      in_truth[c] += a;
      in_pred[c] += b;
      in_union[c] += a || b;
    }
  }
  m.oa = static_cast<double>(correct) / static_cast<double>(scored);
  double sum = 0;
  int present = 0;
  for (int c = 0; c < n; ++c) {
    const double precision = in_pred[c] ? static_cast<double>(tp[c]) / static_cast<double>(in_pred[c]) : 0.0;
    const double recall = in_truth[c] ? static_cast<double>(tp[c]) / static_cast<double>(in_truth[c]) : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    m.f1.push_back(f1);
    if (in_truth[c] + in_pred[c] > 0) {
      sum += f1;
      ++present;
    }
    if (in_truth[c] > 0) {
      const double freq = static_cast<double>(in_truth[c]) / static_cast<double>(scored);
      m.fwiou += freq * static_cast<double>(tp[c]) / static_cast<double>(in_union[c]);
    }
  }
  m.mean_f1 = sum / present;
  return m;
}

std::pair<LabelMap, LabelMap> random_pair(std::mt19937_64& rng, int n, int64_t hw, double ignore_fraction) {
  std::uniform_int_distribution<int> cls(0, n - 1);
  std::bernoulli_distribution ignore(ignore_fraction), agree(0.6);
  LabelMap pred(hw, hw), truth(hw, hw);
  for (size_t i = 0; i < truth.data.size(); ++i) {
    truth.data[i] = static_cast<uint8_t>(cls(rng));
    pred.data[i] = agree(rng) ? truth.data[i] : static_cast<uint8_t>(cls(rng));
    if (ignore(rng)) truth.data[i] = kIgnoreLabel;
  }
  return {pred, truth};
}

TEST(ConfusionTest, SingleClassPerfectMap) {
  LabelMap m(10, 10, 2);
  const auto cm = accumulate_confusion(m, m, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(cm.at(i, j), i == 2 && j == 2 ? 100 : 0);
}

TEST(ConfusionTest, AllIgnoredGivesZeroMatrixAndMetricsRaise) {
  LabelMap pred(4, 4, 1), truth(4, 4, kIgnoreLabel);
  const auto cm = accumulate_confusion(pred, truth, 3);
  EXPECT_EQ(cm.total(), 0);
  EXPECT_THROW(overall_accuracy(cm), EmptyMatrixError);
  EXPECT_THROW(f1_scores(cm), EmptyMatrixError);
  EXPECT_THROW(fw_iou(cm), EmptyMatrixError);
  try {
    evaluate(cm);
    FAIL();
  } catch (const EmptyMatrixError& e) {
    EXPECT_STREQ(e.what(), "no scored pixels");
  }
}

TEST(ConfusionTest, MatchesPerPixelTally) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto [pred, truth] = random_pair(rng, 6, 32, 0.1);
    EXPECT_EQ(accumulate_confusion(pred, truth, 6).counts(), pixel_oracle(pred, truth, 6).counts);
  }
}

TEST(ConfusionTest, MergeEqualsPooled) {
  std::mt19937_64 rng(2);
  auto [p1, t1] = random_pair(rng, 5, 16, 0.1);
  auto [p2, t2] = random_pair(rng, 5, 16, 0.1);
  LabelMap pooled_p(32, 16), pooled_t(32, 16);
  std::copy(p1.data.begin(), p1.data.end(), pooled_p.data.begin());
  std::copy(p2.data.begin(), p2.data.end(), pooled_p.data.begin() + 256);
  std::copy(t1.data.begin(), t1.data.end(), pooled_t.data.begin());
  std::copy(t2.data.begin(), t2.data.end(), pooled_t.data.begin() + 256);
  auto merged = accumulate_confusion(p1, t1, 5);
  merged += accumulate_confusion(p2, t2, 5);
  const auto pooled = accumulate_confusion(pooled_p, pooled_t, 5);
  EXPECT_EQ(merged, pooled);
  const auto a = evaluate(merged), b = evaluate(pooled);
  EXPECT_EQ(a.oa, b.oa);
  EXPECT_EQ(a.fwiou, b.fwiou);
  EXPECT_EQ(a.f1.mean_f1, b.f1.mean_f1);
}

TEST(ConfusionTest, Errors) {
  EXPECT_THROW(accumulate_confusion(LabelMap(4, 4), LabelMap(4, 5), 3), ShapeError);
  LabelMap pred(4, 4, 0), truth(4, 4, 0);
  pred.at(2, 3) = 7;
  try {
    accumulate_confusion(pred, truth, 3);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.row(), 2);
    EXPECT_EQ(e.col(), 3);
  }
  pred.at(2, 3) = kIgnoreLabel;
  EXPECT_THROW(accumulate_confusion(pred, truth, 3), DataError);
  truth.at(1, 1) = 9;
  EXPECT_THROW(accumulate_confusion(LabelMap(4, 4, 0), truth, 3), DataError);
  EXPECT_THROW(ConfusionMatrix::from_counts(2, {1, -1, 0, 0}), DataError);
}

TEST(MetricsTest, HandEvaluatedTwoByTwo) {
  const auto cm = ConfusionMatrix::from_counts(2, {3, 1, 1, 3});
  EXPECT_EQ(overall_accuracy(cm), 0.75);
  const auto f1 = f1_scores(cm);
  EXPECT_EQ(f1.per_class[0].f1, 0.75);
  EXPECT_EQ(f1.per_class[1].f1, 0.75);
  EXPECT_EQ(f1.mean_f1, 0.75);
  EXPECT_EQ(fw_iou(cm), 0.6);
}

TEST(MetricsTest, DiagonalIsPerfect) {
  const auto cm = ConfusionMatrix::from_counts(3, {5, 0, 0, 0, 7, 0, 0, 0, 2});
  EXPECT_EQ(overall_accuracy(cm), 1.0);
  EXPECT_EQ(fw_iou(cm), 1.0);
  for (const auto& s : f1_scores(cm).per_class) EXPECT_EQ(s.f1, 1.0);
}

TEST(MetricsTest, AbsentClassPolicies) {
  // Class 2 never present and never predicted; class 1 present, never predicted.
  const auto cm = ConfusionMatrix::from_counts(3, {4, 0, 0, 2, 0, 0, 0, 0, 0});
  const auto f1 = f1_scores(cm);
  EXPECT_FALSE(f1.per_class[2].in_mean);
  EXPECT_TRUE(f1.per_class[1].in_mean);
  EXPECT_EQ(f1.per_class[1].f1, 0.0);
  EXPECT_DOUBLE_EQ(f1.mean_f1, (f1.per_class[0].f1 + 0.0) / 2);
  EXPECT_DOUBLE_EQ(f1.per_class[0].f1, 2.0 * 4 / (4 + 6));
}

TEST(MetricsTest, OracleEquivalence) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto [pred, truth] = random_pair(rng, 6, 32, 0.1);
    const auto r = evaluate(accumulate_confusion(pred, truth, 6));
    const auto o = pixel_oracle(pred, truth, 6);
    EXPECT_NEAR(r.oa, o.oa, 1e-12);
    EXPECT_NEAR(r.fwiou, o.fwiou, 1e-12);
    EXPECT_NEAR(r.f1.mean_f1, o.mean_f1, 1e-12);
    for (int c = 0; c < 6; ++c) EXPECT_NEAR(r.f1.per_class[c].f1, o.f1[c], 1e-12);
  }
}

TEST(MetricsTest, ScaleInvariance) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int64_t> d(0, 50);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int64_t> counts(16);
    for (auto& c : counts) c = d(rng) + 1;
    std::vector<int64_t> scaled = counts;
    for (auto& c : scaled) c *= 7;
    const auto a = evaluate(ConfusionMatrix::from_counts(4, counts));
    const auto b = evaluate(ConfusionMatrix::from_counts(4, scaled));
    EXPECT_NEAR(a.oa, b.oa, 1e-15);
    EXPECT_NEAR(a.fwiou, b.fwiou, 1e-15);
    EXPECT_NEAR(a.f1.mean_f1, b.f1.mean_f1, 1e-15);
  }
}

TEST(MetricsTest, PermutationInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int64_t> d(0, 30);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 5;
    std::vector<int64_t> counts(n * n);
    for (auto& c : counts) c = d(rng);
    counts[0] += 1;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int64_t> permuted(n * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) permuted[static_cast<size_t>(perm[i] * n + perm[j])] = counts[static_cast<size_t>(i * n + j)];
    const auto a = evaluate(ConfusionMatrix::from_counts(n, counts));
    const auto b = evaluate(ConfusionMatrix::from_counts(n, permuted));
    EXPECT_NEAR(a.oa, b.oa, 1e-12);
    EXPECT_NEAR(a.fwiou, b.fwiou, 1e-12);
    EXPECT_NEAR(a.f1.mean_f1, b.f1.mean_f1, 1e-12);
    for (int i = 0; i < n; ++i) EXPECT_NEAR(a.f1.per_class[i].f1, b.f1.per_class[perm[i]].f1, 1e-12);
  }
}

TEST(MetricsTest, RangeAndPerfectionProperty) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int64_t> d(0, 9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int64_t> counts(9);
    for (auto& c : counts) c = d(rng);
    for (int i = 0; i < 3; ++i) counts[static_cast<size_t>(4 * i)] += 1;  // every class present
    const bool diagonal = counts[1] + counts[2] + counts[3] + counts[5] + counts[6] + counts[7] == 0;
    const auto r = evaluate(ConfusionMatrix::from_counts(3, counts));
    for (double v : {r.oa, r.fwiou, r.f1.mean_f1}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      EXPECT_EQ(v == 1.0, diagonal);
    }
  }
}

TEST(MetricsTest, JsonDocument) {
  const auto r = evaluate(ConfusionMatrix::from_counts(2, {3, 1, 1, 3}));
  const auto j = nlohmann::json::parse(metrics_to_json(r));
  EXPECT_EQ(j["oa"].get<double>(), 0.75);
  EXPECT_EQ(j["fwiou"].get<double>(), 0.6);
  EXPECT_EQ(j["mean_f1"].get<double>(), 0.75);
  EXPECT_EQ(j["per_class_f1"].size(), 2u);
  EXPECT_EQ(j["confusion"].get<std::vector<int64_t>>(), (std::vector<int64_t>{3, 1, 1, 3}));
  EXPECT_TRUE(j.contains("conventions"));
}

}  // namespace
}  // namespace mpresnet

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "mpresnet/blocks.hpp"
#include "test_util.hpp"

namespace mpresnet {
namespace {

using testing::random_tensor;

int64_t trainable(const std::vector<ParamSpec>& specs) {
  int64_t n = 0;
  for (const auto& s : specs) {
    if (s.trainable()) n += numel(s.shape);
  }
  return n;
}

int64_t conv_weights(const std::vector<ParamSpec>& specs) {
  int64_t n = 0;
  for (const auto& s : specs) {
    if (s.role == ParamRole::kConvWeight || s.role == ParamRole::kConvTransposeWeight) n += numel(s.shape);
  }
  return n;
}

void zero_params_matching(ParamStore<double>& store, const std::string& needle) {
  for (auto& e : store.entries()) {
    if (e.spec.name.find(needle) != std::string::npos) {
      auto d = e.value.mutable_data();
      std::fill(d.begin(), d.end(), 0.0);
    }
  }
}

TEST(StemTest, QuarterResolution) {
  auto store = ParamStore<float>::initialize(stem_param_specs("stem", 4, 64), 1);
  std::mt19937_64 rng(1);
  auto y = stem_forward(random_tensor<float>({1, 4, 64, 64}, rng), store, 64);
  EXPECT_EQ(y.shape(), (Shape{1, 64, 16, 16}));
}

TEST(StemTest, ParameterCount) {
  const auto specs = stem_param_specs("stem", 4, 64);
  EXPECT_EQ(trainable(specs), 7 * 7 * 4 * 64 + 2 * 64);
  EXPECT_EQ(trainable(specs), 12672);
}

TEST(StemTest, IndivisibleExtentsRejected) {
  auto store = ParamStore<float>::initialize(stem_param_specs("stem", 4, 8), 1);
  std::mt19937_64 rng(1);
  EXPECT_THROW(stem_forward(random_tensor<float>({1, 4, 48, 64}, rng), store, 8), ConfigError);
  EXPECT_THROW(stem_forward(random_tensor<float>({1, 4, 64, 65}, rng), store, 8), ConfigError);
}

TEST(BasicBlockTest, ParameterCount64) {
  const auto specs = basic_block_param_specs("b", 64, 64, 1);
  EXPECT_EQ(trainable(specs), 2 * (3 * 3 * 64 * 64) + 2 * (2 * 64));
  EXPECT_EQ(trainable(specs), 73984);
}

TEST(BasicBlockTest, ProjectionOnlyWhenNeeded) {
  auto has_shortcut = [](const std::vector<ParamSpec>& specs) {
    for (const auto& s : specs) {
      if (s.name.find("shortcut") != std::string::npos) return true;
    }
    return false;
  };
  EXPECT_FALSE(has_shortcut(basic_block_param_specs("b", 8, 8, 1)));
  EXPECT_TRUE(has_shortcut(basic_block_param_specs("b", 8, 8, 2)));
  EXPECT_TRUE(has_shortcut(basic_block_param_specs("b", 8, 16, 1)));
}

TEST(BasicBlockTest, ZeroResidualIsReluOfInput) {
  auto store = ParamStore<double>::initialize(basic_block_param_specs("b", 6, 6, 1), 3);
  zero_params_matching(store, ".weight");
  std::mt19937_64 rng(5);
  auto x = random_tensor<double>({2, 6, 8, 8}, rng);
  auto y = basic_block_forward(x, store, 6, 1, BatchNormMode::kEval, "b");
  const auto xd = x.data();
  const auto yd = y.data();
  ASSERT_EQ(y.shape(), x.shape());
  for (size_t i = 0; i < xd.size(); ++i) EXPECT_EQ(yd[i], std::max(0.0, xd[i]));
}

TEST(BasicBlockTest, ZeroResidualWithProjectionIsReluOfShortcut) {
  auto store = ParamStore<double>::initialize(basic_block_param_specs("b", 4, 8, 2), 3);
  zero_params_matching(store, ".conv1.");
  zero_params_matching(store, ".conv2.");
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>({1, 4, 8, 8}, rng);
  auto y = basic_block_forward(x, store, 8, 2, BatchNormMode::kEval, "b");
  BatchNormStats<double> stats{store.at("b.shortcut.bn.running_mean"), store.at("b.shortcut.bn.running_var")};
  auto s = conv2d(x, store.at("b.shortcut.conv.weight"), Tensor<double>(), ConvSpec::square(4, 8, 1, 2));
  s = relu(batch_norm2d(s, store.at("b.shortcut.bn.gamma"), store.at("b.shortcut.bn.beta"), stats,
                        BatchNormMode::kEval, 0.1, 1e-5));
  ASSERT_EQ(y.shape(), s.shape());
  const auto a = y.data();
  const auto b = s.data();
  for (size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(BasicBlockTest, StrideTwoHalvesExactly) {
  std::mt19937_64 rng(7);
  for (int64_t hw : {2, 4, 6, 10, 32}) {
    auto store = ParamStore<float>::initialize(basic_block_param_specs("b", 3, 5, 2), 1);
    auto y = basic_block_forward(random_tensor<float>({3, 3, hw, hw + 2}, rng), store, 5, 2, BatchNormMode::kEval, "b");
    EXPECT_EQ(y.shape(), (Shape{3, 5, hw / 2, (hw + 2) / 2}));
  }
}

TEST(BasicBlockTest, RejectsStrideThree) {
  EXPECT_THROW(basic_block_param_specs("b", 4, 4, 3), ConfigError);
}

TEST(BasicBlockTest, GradientMatchesFiniteDifferences) {
  auto store = ParamStore<double>::initialize(basic_block_param_specs("b", 3, 4, 2), 11);
  std::mt19937_64 rng(12);
  auto x = random_tensor<double>({2, 3, 6, 6}, rng);
  auto probe = random_tensor<double>({2, 4, 3, 3}, rng);
  auto loss = [&] {
    return dot(basic_block_forward(x, store, 4, 2, BatchNormMode::kTrain, "b"), probe);
  };
  auto& w = store.at("b.conv1.weight");
  {
    auto y = basic_block_forward(x, store, 4, 2, BatchNormMode::kTrain, "b");
    auto l = sum(mul(y, probe));
    backward(l);
  }
  const auto analytic = std::vector<double>(w.grad().begin(), w.grad().end());
  NoGradGuard guard;
  const auto numeric = testing::finite_difference(w, loss, 1e-6);
  for (size_t i = 0; i < numeric.size(); ++i) {
    EXPECT_LT(testing::relative_error(analytic[i], numeric[i], 1e-6), 1e-5) << i;
  }
}

TEST(DeconvBlockTest, DoublesExtentsAndSetsWidth) {
  auto store = ParamStore<float>::initialize(deconv_block_param_specs("d", 512, 256), 1);
  std::mt19937_64 rng(2);
  auto y = deconv_block_forward(random_tensor<float>({1, 512, 16, 16}, rng), store, 256, BatchNormMode::kEval, "d");
  EXPECT_EQ(y.shape(), (Shape{1, 256, 32, 32}));
}

TEST(DeconvBlockTest, ParameterCount) {
  const auto specs = deconv_block_param_specs("d", 512, 256);
  EXPECT_EQ(conv_weights(specs), 512 * 128 + 3 * 3 * 128 * 128 + 128 * 256);
  EXPECT_EQ(conv_weights(specs), 245760);
  EXPECT_EQ(trainable(specs) - conv_weights(specs), 2 * 128 + 2 * 128 + 2 * 256);
}

TEST(DeconvBlockTest, ZeroExpandWeightsGiveZeroOutput) {
  auto store = ParamStore<double>::initialize(deconv_block_param_specs("d", 8, 4), 1);
  zero_params_matching(store, "d.expand.conv.weight");
  std::mt19937_64 rng(3);
  auto y = deconv_block_forward(random_tensor<double>({2, 8, 4, 4}, rng), store, 4, BatchNormMode::kEval, "d");
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(DeconvBlockTest, RejectsWidthNotDivisibleByFour) {
  EXPECT_THROW(deconv_block_param_specs("d", 6, 4), ConfigError);
}

TEST(BlockPropertyTest, ExtentsPreservedHalvedOrDoubled) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int64_t> small(1, 3), width(1, 3), extent(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = small(rng), c = 4 * width(rng), out = 4 * width(rng), h = 2 * extent(rng), w = 2 * extent(rng);
    const int64_t stride = trial % 2 ? 2 : 1;
    auto bstore = ParamStore<float>::initialize(basic_block_param_specs("b", c, out, stride), trial);
    auto x = random_tensor<float>({n, c, h, w}, rng);
    EXPECT_EQ(basic_block_forward(x, bstore, out, stride, BatchNormMode::kEval, "b").shape(), (Shape{n, out, h / stride, w / stride}));
    auto dstore = ParamStore<float>::initialize(deconv_block_param_specs("deconv", c, out), trial);
    EXPECT_EQ(deconv_block_forward(x, dstore, out).shape(), (Shape{n, out, 2 * h, 2 * w}));
  }
}

TEST(BlockPropertyTest, ParameterNamesUnique) {
  for (const auto& specs : {stem_param_specs("stem", 4, 64), basic_block_param_specs("b", 8, 16, 2),
                            deconv_block_param_specs("d", 16, 8)}) {
    std::set<std::string> names;
    for (const auto& s : specs) EXPECT_TRUE(names.insert(s.name).second) << s.name;
  }
}

}  // namespace
}  // namespace mpresnet

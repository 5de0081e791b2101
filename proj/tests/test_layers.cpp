#include <gtest/gtest.h>

#include <cmath>

#include "fictplay/layers.hpp"
#include "fictplay/optim.hpp"
#include "gradient_cases.hpp"
#include "test_util.hpp"

using namespace fictplay;
using test::random_tensor;

namespace {

// Direct nested-loop cross-correlation with zero padding.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, Index stride,
                           Index pad) {
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), F = w.dim(0), k = w.dim(2);
  const Index OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  Tensor<double> out({B, F, OH, OW});
  for (Index n = 0; n < B; ++n)
    for (Index f = 0; f < F; ++f)
      for (Index oy = 0; oy < OH; ++oy)
        for (Index ox = 0; ox < OW; ++ox) {
          double acc = b[f];
          for (Index c = 0; c < C; ++c)
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const Index iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy >= 0 && iy < H && ix >= 0 && ix < W) acc += w.at(f, c, ky, kx) * x.at(n, c, iy, ix);
              }
          out.at(n, f, oy, ox) = acc;
        }
  return out;
}

}  // namespace

TEST(Dense, MatchesExplicitSum) {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({3, 4}, rng));
  auto w = tape.leaf(random_tensor({4, 2}, rng));
  auto b = tape.leaf(random_tensor({2}, rng));
  auto y = dense(x, w, b);
  for (Index i = 0; i < 3; ++i)
    for (Index o = 0; o < 2; ++o) {
      double acc = b.value()[o];
      for (Index j = 0; j < 4; ++j) acc += x.value().at(i, j) * w.value().at(j, o);
      EXPECT_NEAR(y.value().at(i, o), acc, 1e-14);
    }
  EXPECT_THROW(dense(x, x, b), ShapeError);
}

class ConvOracle : public ::testing::TestWithParam<std::tuple<Index, Index, Padding>> {};

TEST_P(ConvOracle, MatchesNestedLoops) {
  const auto [k, stride, padding] = GetParam();
  std::mt19937_64 rng(static_cast<std::uint64_t>(k * 10 + stride));
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({2, 3, 7, 6}, rng));
  auto w = tape.leaf(random_tensor({4, 3, k, k}, rng));
  auto b = tape.leaf(random_tensor({4}, rng));
  auto y = conv2d(x, w, b, stride, padding);
  const Index pad = padding == Padding::Same ? (k - 1) / 2 : 0;
  const auto want = conv_oracle(x.value(), w.value(), b.value(), stride, pad);
  ASSERT_EQ(y.shape(), want.shape());
  EXPECT_LT((y.value().values() - want.values()).abs().maxCoeff(), 1e-12);
  EXPECT_EQ(y.shape()[2], conv_output_extent(7, k, stride, padding));
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Combine(::testing::Values(1, 3, 5), ::testing::Values(1, 2),
                                            ::testing::Values(Padding::Same, Padding::Valid)));

TEST(Conv, RejectsMismatchedChannels) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 2, 5, 5}));
  auto w = tape.leaf(Tensor<double>({1, 3, 3, 3}));
  auto b = tape.leaf(Tensor<double>({1}));
  EXPECT_THROW(conv2d(x, w, b, 1, Padding::Same), ShapeError);
  EXPECT_THROW(conv2d(x, tape.leaf(Tensor<double>({1, 2, 7, 7})), b, 1, Padding::Valid), ShapeError);
}

TEST(BatchNorm, TrainModeNormalisesAndUpdatesRunningStats) {
  std::mt19937_64 rng(4);
  const Index B = 3, C = 2, H = 2, W = 2, M = B * H * W;
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({B, C, H, W}, rng, 0, 4));
  auto gamma = tape.leaf(Tensor<double>({C}, {2.0, 0.5}));
  auto beta = tape.leaf(Tensor<double>({C}, {1.0, -1.0}));
  RunningStats<double> stats{Tensor<double>({C}, {0.0, 1.0}), Tensor<double>({C}, {1.0, 2.0})};
  auto y = batchnorm(x, gamma, beta, Mode::Train, &stats);
  for (Index c = 0; c < C; ++c) {
    double mean = 0, var = 0;
    for (Index n = 0; n < B; ++n)
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) mean += x.value().at(n, c, i, j) / M;
    for (Index n = 0; n < B; ++n)
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < W; ++j) var += std::pow(x.value().at(n, c, i, j) - mean, 2) / M;
    for (Index n = 0; n < B; ++n)
      EXPECT_NEAR(y.value().at(n, c, 1, 0),
                  gamma.value()[c] * (x.value().at(n, c, 1, 0) - mean) / std::sqrt(var + 1e-5) + beta.value()[c], 1e-12);
    const double old_mean = c == 0 ? 0.0 : 1.0, old_var = c == 0 ? 1.0 : 2.0;
    EXPECT_NEAR(stats.mean[c], 0.9 * old_mean + 0.1 * mean, 1e-12);
    EXPECT_NEAR(stats.var[c], 0.9 * old_var + 0.1 * var * M / (M - 1), 1e-12);
  }
}

TEST(BatchNorm, InferModeUsesRunningStats) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1, 1, 1, 2}, {3.0, 5.0}));
  auto gamma = tape.leaf(Tensor<double>({1}, {1.0}));
  auto beta = tape.leaf(Tensor<double>({1}, {0.0}));
  RunningStats<double> stats{Tensor<double>({1}, {1.0}), Tensor<double>({1}, {4.0 - 1e-5})};
  auto y = batchnorm(x, gamma, beta, Mode::Infer, &stats);
  EXPECT_NEAR(y.value()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.value()[1], 2.0, 1e-12);
  EXPECT_THROW(batchnorm<double>(x, gamma, beta, Mode::Train, nullptr), ShapeError);
  EXPECT_THROW(batchnorm<double>(x, gamma, beta, Mode::Infer, nullptr), ShapeError);
}

TEST(SoftmaxCrossEntropy, MatchesLogSumExp) {
  Tape<double> tape;
  auto z = tape.leaf(Tensor<double>({2, 3}, {1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0}));
  const std::vector<int> y{0, 0};
  auto loss = softmax_cross_entropy<double>(z, y);
  const double l0 = -(1.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = 0.0;  // the label carries all the mass
  EXPECT_NEAR(loss.value().item(), (l0 + l1) / 2, 1e-12);
  EXPECT_THROW(softmax_cross_entropy<double>(z, std::vector<int>{0, 3}), std::out_of_range);
  EXPECT_THROW(softmax_cross_entropy<double>(z, std::vector<int>{0}), ShapeError);
}

TEST(SoftmaxCrossEntropy, WeightedEqualsSumOfTerms) {
  std::mt19937_64 rng(6);
  Tape<double> tape;
  auto z = tape.leaf(random_tensor({3, 4}, rng, -2, 2));
  const std::vector<int> y{1, 3, 0};
  const std::vector<double> w{0.5, 0.2, 0.3};
  auto total = weighted_softmax_cross_entropy<double>(z, y, w);
  double expect = 0;
  for (Index b = 0; b < 3; ++b) {
    auto row = tape.leaf(Tensor<double>({1, 4}, z.value().values().segment(b * 4, 4)));
    expect += w[static_cast<std::size_t>(b)] *
              softmax_cross_entropy<double>(row, std::vector<int>{y[static_cast<std::size_t>(b)]}).value().item();
  }
  EXPECT_NEAR(total.value().item(), expect, 1e-14);
}

class GradientCheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradientCheck, EveryOpMatchesCentralDifferences) {
  for (const auto& c : test::gradient_cases(GetParam())) {
    SCOPED_TRACE(c.op);
    EXPECT_LT(test::gradient_error(c, GetParam() + 17), c.tolerance);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientCheck, ::testing::Range<std::uint64_t>(0, 5));

TEST(Optimizer, MomentumStepMatchesHandComputation) {
  TensorMap<double> params{{"w", Tensor<double>({2}, {1.0, -1.0})}};
  TensorMap<double> grads{{"w", Tensor<double>({2}, {0.5, 0.25})}};
  TensorMap<double> vel;
  sgd_momentum_step(params, grads, vel, 0.1, 0.9, 0.01);
  // v = g + wd·w; w -= lr·v
  EXPECT_DOUBLE_EQ(vel["w"][0], 0.5 + 0.01);
  EXPECT_DOUBLE_EQ(params["w"][0], 1.0 - 0.1 * 0.51);
  sgd_momentum_step(params, grads, vel, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(vel["w"][0], 0.9 * 0.51 + 0.5);
}

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
  TensorMap<double> params{{"w", Tensor<double>({2}, {1.0, -1.0})}};
  TensorMap<double> grads{{"w", Tensor<double>({2}, {3.0, 4.0})}};
  TensorMap<double> vel;
  const Tensor<double> before = params["w"];
  sgd_momentum_step(params, grads, vel, 0.0, 0.9, 0.1);
  EXPECT_EQ(params["w"], before);
}

TEST(LrSchedule, DecaysAtMilestones) {
  LrSchedule s(0.1, 0.1, {10, 20});
  EXPECT_DOUBLE_EQ(s.at(0), 0.1);
  EXPECT_DOUBLE_EQ(s.at(9), 0.1);
  EXPECT_NEAR(s.at(10), 0.01, 1e-15);
  EXPECT_NEAR(s.at(25), 0.001, 1e-16);
  EXPECT_THROW(LrSchedule(0.1, 0.1, {5, 5}), std::invalid_argument);
}

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fictplay/ops.hpp"
#include "test_util.hpp"

using namespace fictplay;
using test::random_tensor;

TEST(Tensor, ShapeAndRowMajorIndexing) {
  Tensor<double> t({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.at(1, 2), 5);
  EXPECT_EQ(t.at(0, 1), 1);
  EXPECT_EQ(t.reshaped({3, 2}).at(2, 0), 4);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_EQ(Tensor<double>::scalar(3.5).item(), 3.5);
  EXPECT_THROW(Tensor<double>({2}).item(), ShapeError);
}

TEST(Autodiff, SumOfSquaresGradientIsTwoX) {
  std::mt19937_64 rng(1);
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({3, 4}, rng), true, "x");
  auto g = backward(sum(square(x)));
  EXPECT_TRUE(((g["x"].values() - 2 * x.value().values()).abs() < 1e-15).all());
}

TEST(Autodiff, SharedNameLeavesSumTheirGradients) {
  // Two leaves bound under one name behave like one parameter used twice.
  Tape<double> tape;
  Tensor<double> v({2}, {1.0, -2.0});
  auto a = tape.leaf(v, true, "w");
  auto b = tape.leaf(v, true, "w");
  auto loss = add(sum(scale(a, 3.0)), sum(mul(b, b)));
  auto g = backward(loss);
  EXPECT_DOUBLE_EQ(g["w"][0], 3.0 + 2 * 1.0);
  EXPECT_DOUBLE_EQ(g["w"][1], 3.0 + 2 * -2.0);
}

TEST(Autodiff, UnusedLeafGetsZeroGradient) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::constant({2}, 1.0), true, "x");
  tape.leaf(Tensor<double>::constant({3}, 1.0), true, "y");
  auto g = backward(sum(x));
  EXPECT_EQ(g["y"], Tensor<double>::zeros({3}));
}

TEST(Autodiff, BackwardRejectsNonScalarLoss) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::constant({2}, 1.0), true, "x");
  EXPECT_THROW(backward(square(x)), ShapeError);
}

TEST(Autodiff, NonFiniteValuesAreRejected) {
  Tape<double> tape;
  Tensor<double> bad({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(tape.leaf(bad, true, "x"), NumericError);
  auto big = tape.leaf(Tensor<double>::constant({1}, 1e200), true, "big");
  EXPECT_THROW(square(big), NumericError);
}

TEST(Ops, LinearCombinationOfScalarLosses) {
  std::mt19937_64 rng(2);
  Tape<double> tape;
  auto a = tape.leaf(random_tensor({5}, rng), true, "a");
  auto b = tape.leaf(random_tensor({5}, rng), true, "b");
  std::vector<Var<double>> terms{sum(a), sum(square(b))};
  std::vector<double> w{0.25, 0.75};
  auto c = linear_combination<double>(terms, w);
  EXPECT_DOUBLE_EQ(c.value().item(), 0.25 * terms[0].value().item() + 0.75 * terms[1].value().item());
  auto g = backward(c);
  EXPECT_DOUBLE_EQ(g["a"][3], 0.25);
  EXPECT_DOUBLE_EQ(g["b"][3], 0.75 * 2 * b.value()[3]);
}

TEST(Ops, ClipUnitPassesGradientOnlyInside) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({4}, {-0.5, 0.2, 0.9, 1.3}), true, "x");
  auto y = clip_unit(x);
  EXPECT_EQ(y.value(), Tensor<double>({4}, {0.0, 0.2, 0.9, 1.0}));
  auto g = backward(sum(y));
  EXPECT_EQ(g["x"], Tensor<double>({4}, {0, 1, 1, 0}));
}

TEST(Ops, ClipExample) {
  // 0.9 + 0.2 saturates at the top of the pixel range.
  Tape<double> tape;
  auto img = tape.leaf(Tensor<double>({1, 1}, {0.9}));
  auto xi = tape.leaf(Tensor<double>({1}, {0.2}));
  EXPECT_DOUBLE_EQ(clip_unit(add_broadcast(img, xi)).value()[0], 1.0);
}

TEST(Ops, ReluGradientCheck) {
  std::mt19937_64 rng(3);
  // Keep values away from the kink.
  Tensor<double> x0 = random_tensor({3, 5}, rng);
  for (Index i = 0; i < x0.size(); ++i)
    if (std::abs(x0[i]) < 0.05) x0[i] = 0.3;
  auto f = [](const Tensor<double>& x) {
    Tape<double> tape;
    auto v = tape.leaf(x, true, "x");
    return sum(square(relu(v))).value().item();
  };
  Tape<double> tape;
  auto v = tape.leaf(x0, true, "x");
  auto g = backward(sum(square(relu(v))));
  EXPECT_LT(max_relative_error(g["x"], finite_difference_gradient(f, x0, 1e-6)), 1e-6);
}

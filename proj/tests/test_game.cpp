#include <gtest/gtest.h>

#include <algorithm>

#include "fictplay/errors.hpp"
#include "fictplay/game.hpp"

using namespace fictplay;

TEST(MatrixGame, RockPaperScissorsConvergesToUniform) {
  const auto r = fp_matrix_game(MatrixGame::rock_paper_scissors(), 50000);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(r.row_strategy[i], 1.0 / 3, 0.05);
    EXPECT_NEAR(r.col_strategy[i], 1.0 / 3, 0.05);
  }
  EXPECT_NEAR(r.value, 0.0, 0.02);
  EXPECT_NEAR(r.row_strategy.sum(), 1.0, 1e-12);
}

TEST(MatrixGame, MatchingPenniesValueIsZero) {
  const auto r = fp_matrix_game(MatrixGame::matching_pennies(), 50000);
  EXPECT_NEAR(r.value, 0.0, 0.02);
  EXPECT_NEAR(r.row_strategy[0], 0.5, 0.05);
}

TEST(MatrixGame, SaddlePointIsFoundImmediately) {
  const auto r = fp_matrix_game(MatrixGame::saddle(), 200);
  EXPECT_DOUBLE_EQ(r.row_strategy[0], 1.0);
  EXPECT_DOUBLE_EQ(r.col_strategy[0], 1.0);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_DOUBLE_EQ(r.exploitability.back(), 0.0);
}

TEST(MatrixGame, ExploitabilityShrinks) {
  const auto r = fp_matrix_game(MatrixGame::rock_paper_scissors(), 20000);
  ASSERT_EQ(r.exploitability.size(), 20000u);
  for (double e : r.exploitability) EXPECT_GE(e, -1e-12);
  const double early = *std::max_element(r.exploitability.begin() + 10, r.exploitability.begin() + 100);
  const double late = *std::max_element(r.exploitability.end() - 1000, r.exploitability.end());
  EXPECT_LT(late, early / 5);
}

TEST(MatrixGame, ExploitabilityOracle) {
  // Pure (R, R) in rock-paper-scissors: the column best-responds with paper.
  const auto g = MatrixGame::rock_paper_scissors();
  Eigen::VectorXd p = Eigen::VectorXd::Unit(3, 0), q = Eigen::VectorXd::Unit(3, 0);
  EXPECT_DOUBLE_EQ(exploitability(g, p, q), 2.0);
  Eigen::VectorXd u = Eigen::VectorXd::Constant(3, 1.0 / 3);
  EXPECT_NEAR(exploitability(g, u, u), 0.0, 1e-15);
}

TEST(MatrixGame, FirstMovesFollowTheTieBreakRule) {
  const auto r = fp_matrix_game(MatrixGame::rock_paper_scissors(), 3);
  EXPECT_EQ(r.row_actions[0], 0);
  EXPECT_EQ(r.col_actions[0], 0);
  Eigen::VectorXd v(3);
  v << 1, 3, 3;
  EXPECT_EQ(argmax_lowest(v), 1);
}

TEST(MatrixGame, BuiltinLookupAndValidation) {
  EXPECT_EQ(MatrixGame::builtin("pennies").rows(), 2);
  EXPECT_THROW(MatrixGame::builtin("chess"), ConfigError);
  EXPECT_ANY_THROW(MatrixGame(Eigen::MatrixXd(0, 2)));
  EXPECT_ANY_THROW(fp_matrix_game(MatrixGame::saddle(), 0));
}

#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fictplay {

/// Two-player zero-sum game; `payoff(i, j)` is what the row player receives.
struct MatrixGame {
  Eigen::MatrixXd payoff;

  explicit MatrixGame(Eigen::MatrixXd a);
  Eigen::Index rows() const { return payoff.rows(); }
  Eigen::Index cols() const { return payoff.cols(); }

  static MatrixGame rock_paper_scissors();
  static MatrixGame matching_pennies();
  /// Row 0 strictly dominates for the row player and column 0 for the column player.
  static MatrixGame saddle();
  static MatrixGame builtin(const std::string& name);
};

struct MatrixFpResult {
  Eigen::VectorXd row_strategy;  // normalized action counts
  Eigen::VectorXd col_strategy;
  std::vector<double> exploitability;  // duality gap after each iteration
  std::vector<Eigen::Index> row_actions;
  std::vector<Eigen::Index> col_actions;
  double value = 0;  // p̄ᵀ A q̄
};

/// Lowest index among the maxima.
Eigen::Index argmax_lowest(const Eigen::VectorXd& v);

/// max_i (A q)_i − min_j (pᵀ A)_j; zero exactly at an equilibrium.
double exploitability(const MatrixGame& game, const Eigen::VectorXd& p, const Eigen::VectorXd& q);

/// Simultaneous discrete fictitious play. Both players open with action 0,
/// afterwards each best-responds to the opponent's empirical counts.
MatrixFpResult fp_matrix_game(const MatrixGame& game, long iterations);

}  // namespace fictplay

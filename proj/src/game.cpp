#include "fictplay/game.hpp"

#include <stdexcept>

#include "fictplay/errors.hpp"

namespace fictplay {

MatrixGame::MatrixGame(Eigen::MatrixXd a) : payoff(std::move(a)) {
  if (payoff.size() == 0) throw ShapeError("matrix game: empty payoff");
  if (!payoff.allFinite()) throw NumericError("matrix game: non-finite payoff");
}

MatrixGame MatrixGame::rock_paper_scissors() {
  Eigen::MatrixXd a(3, 3);
  a << 0, -1, 1, 1, 0, -1, -1, 1, 0;
  return MatrixGame(a);
}

MatrixGame MatrixGame::matching_pennies() {
  Eigen::MatrixXd a(2, 2);
  a << 1, -1, -1, 1;
  return MatrixGame(a);
}

MatrixGame MatrixGame::saddle() {
  // row 0 dominates (rows), column 0 dominates for the minimizer.
  Eigen::MatrixXd a(3, 3);
  a << 1, 3, 4, 0, 2, 3, -1, 1, 2;
  return MatrixGame(a);
}

MatrixGame MatrixGame::builtin(const std::string& name) {
  if (name == "rps") return rock_paper_scissors();
  if (name == "pennies") return matching_pennies();
  if (name == "saddle") return saddle();
  throw ConfigError("unknown game '" + name + "' (rps, pennies, saddle)");
}

Eigen::Index argmax_lowest(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

double exploitability(const MatrixGame& game, const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  return (game.payoff * q).maxCoeff() - (game.payoff.transpose() * p).minCoeff();
}

MatrixFpResult fp_matrix_game(const MatrixGame& game, long iterations) {
  if (iterations < 1) throw std::invalid_argument("fp_matrix_game: iterations must be >= 1");
  const Eigen::Index m = game.rows(), k = game.cols();
  Eigen::VectorXd row_counts = Eigen::VectorXd::Zero(m), col_counts = Eigen::VectorXd::Zero(k);
  // Running payoffs of each pure action against the opponent's counts.
  Eigen::VectorXd row_payoff = Eigen::VectorXd::Zero(m), col_loss = Eigen::VectorXd::Zero(k);
  MatrixFpResult r;
  r.exploitability.reserve(static_cast<std::size_t>(iterations));
  r.row_actions.reserve(static_cast<std::size_t>(iterations));
  r.col_actions.reserve(static_cast<std::size_t>(iterations));
  for (long t = 0; t < iterations; ++t) {
    const Eigen::Index i = t == 0 ? 0 : argmax_lowest(row_payoff);
    const Eigen::Index j = t == 0 ? 0 : argmax_lowest(-col_loss);
    row_counts[i] += 1;
    col_counts[j] += 1;
    row_payoff += game.payoff.col(j);
    col_loss += game.payoff.row(i).transpose();
    r.row_actions.push_back(i);
    r.col_actions.push_back(j);
    const double n = static_cast<double>(t + 1);
    r.exploitability.push_back(row_payoff.maxCoeff() / n - col_loss.minCoeff() / n);
  }
  r.row_strategy = row_counts / static_cast<double>(iterations);
  r.col_strategy = col_counts / static_cast<double>(iterations);
  r.value = r.row_strategy.dot(game.payoff * r.col_strategy);
  return r;
}

}  // namespace fictplay

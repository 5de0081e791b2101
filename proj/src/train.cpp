#include "fictplay/train.hpp"

namespace fictplay {

std::vector<double> dataset_weights(int n, Weighting mode) {
  if (n < 0) throw std::invalid_argument("dataset_weights: n must be >= 0");
  if (n == 0) return {1.0};
  std::vector<double> w(static_cast<std::size_t>(n));
  if (mode == Weighting::Uniform) {
    std::fill(w.begin(), w.end(), 1.0 / n);
    return w;
  }
  // L^0 = L(D0) and L^i = (1/i) Σ_{j<i} L(D_j): D_j collects 1/i from every i > j.
  double tail = 0;
  for (int j = n - 1; j >= 0; --j) {
    tail += 1.0 / (j + 1);
    w[static_cast<std::size_t>(j)] = tail;
  }
  w[0] += 1.0;
  for (double& x : w) x /= n + 1;
  return w;
}

void TrainConfig::validate() const {
  if (outer_iterations < 1) throw std::invalid_argument("train: outer iterations must be >= 1");
  if (inner_steps < 0) throw std::invalid_argument("train: inner steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(lr >= 0) || !(momentum >= 0) || !(weight_decay >= 0) || !(lr_decay > 0))
    throw std::invalid_argument("train: lr, momentum, weight decay must be >= 0 and lr decay > 0");
  for (std::size_t i = 1; i < lr_milestones.size(); ++i)
    if (lr_milestones[i] <= lr_milestones[i - 1]) throw std::invalid_argument("train: milestones must increase");
  attack.universal.validate();
  attack.patch.validate();
}

}  // namespace fictplay

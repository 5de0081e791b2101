#pragma once

#include <map>
#include <string>
#include <vector>

#include "fictplay/autodiff.hpp"

namespace fictplay {

template <typename Scalar>
using TensorMap = std::map<std::string, Tensor<Scalar>>;

/// One step of SGD with heavy-ball momentum and L2 weight decay:
///   v ← momentum·v + (grad + weight_decay·param);  param ← param − lr·v
/// Missing velocity entries start at zero.
template <typename Scalar>
void sgd_momentum_step(TensorMap<Scalar>& params, const TensorMap<Scalar>& grads, TensorMap<Scalar>& velocity,
                       Scalar lr, Scalar momentum, Scalar weight_decay) {
  if (!(lr >= 0)) throw std::invalid_argument("sgd_momentum_step: learning rate must be non-negative");
  for (auto& [name, param] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ShapeError("sgd_momentum_step: no gradient for '" + name + "'");
    require_same_shape(param.shape(), g->second.shape(), "sgd_momentum_step");
    auto [v, inserted] = velocity.try_emplace(name, Tensor<Scalar>::zeros(param.shape()));
    if (!inserted) require_same_shape(param.shape(), v->second.shape(), "sgd_momentum_step");
    v->second.values() = momentum * v->second.values() + (g->second.values() + weight_decay * param.values());
    param.values() -= lr * v->second.values();
  }
}

/// Piecewise-constant schedule: the rate is multiplied by `decay` at every milestone step.
class LrSchedule {
 public:
  LrSchedule(double base, double decay, std::vector<long> milestones)
      : base_(base), decay_(decay), milestones_(std::move(milestones)) {
    for (std::size_t i = 1; i < milestones_.size(); ++i)
      if (milestones_[i] <= milestones_[i - 1])
        throw std::invalid_argument("LrSchedule: milestones must be strictly increasing");
  }

  /// Rate used for the optimizer step with zero-based index `step`.
  double at(long step) const {
    double lr = base_;
    for (long m : milestones_)
      if (step >= m) lr *= decay_;
    return lr;
  }

 private:
  double base_;
  double decay_;
  std::vector<long> milestones_;
};

}  // namespace fictplay

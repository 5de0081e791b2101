#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "fictplay/tensor.hpp"

namespace fictplay {

/// Central differences (f(x+h·e_i) − f(x−h·e_i)) / 2h for every coordinate of x.
template <typename Scalar, typename Fn>
Tensor<Scalar> finite_difference_gradient(Fn&& f, const Tensor<Scalar>& x, Scalar h) {
  if (!(h > 0)) throw std::invalid_argument("finite_difference_gradient: step must be positive");
  Tensor<Scalar> probe = x;
  Tensor<Scalar> grad(x.shape());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar orig = probe[i];
    probe[i] = orig + h;
    const Scalar up = f(static_cast<const Tensor<Scalar>&>(probe));
    probe[i] = orig - h;
    const Scalar down = f(static_cast<const Tensor<Scalar>&>(probe));
    probe[i] = orig;
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

/// max_i |a_i − b_i| / max(|a|_∞, |b|_∞, floor). The floor keeps all-zero
/// gradients from dividing by zero.
template <typename Scalar>
Scalar max_relative_error(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Scalar floor = Scalar(1e-8)) {
  require_same_shape(a.shape(), b.shape(), "max_relative_error");
  const Scalar scale = std::max({a.max_abs(), b.max_abs(), floor});
  return (a.values() - b.values()).abs().maxCoeff() / scale;
}

}  // namespace fictplay

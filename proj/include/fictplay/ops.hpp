#pragma once

#include <Eigen/Core>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fictplay/autodiff.hpp"

namespace fictplay {

enum class Mode { Train, Infer };
enum class Padding { Same, Valid };

namespace detail {

template <typename Scalar>
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename Scalar>
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline Index conv_padding(Padding padding, Index kernel) {
  return padding == Padding::Same ? (kernel - 1) / 2 : 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reduction primitives
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().values() + b.value().values());
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate(a, g);
                           t.accumulate(b, g);
                         },
                         "add");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value().values() * factor);
  return a.tape().record(std::move(out), {a},
                         [a, factor](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate_expr(a, g.values() * factor);
                         },
                         "scale");
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().values() * b.value().values());
  return a.tape().record(std::move(out), {a, b},
                         [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate_expr(a, g.values() * b.value().values());
                           t.accumulate_expr(b, g.values() * a.value().values());
                         },
                         "mul");
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  return mul(a, a);
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  auto out = Tensor<Scalar>::scalar(a.value().values().sum());
  return a.tape().record(std::move(out), {a},
                         [a](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate(a, Tensor<Scalar>::constant(a.shape(), g.item()));
                         },
                         "sum");
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  auto out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a},
                         [a](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate(a, g.reshaped(a.shape()));
                         },
                         "reshape");
}

/// [B, ...] -> [B, prod(...)]
template <typename Scalar>
Var<Scalar> flatten(const Var<Scalar>& a) {
  if (a.value().rank() < 2) throw ShapeError("flatten: need a batch axis");
  const Index batch = a.value().dim(0);
  return reshape(a, {batch, a.value().size() / batch});
}

/// Σ weights[i] · terms[i] over scalar nodes.
template <typename Scalar>
Var<Scalar> linear_combination(std::span<const Var<Scalar>> terms, std::span<const Scalar> weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw ShapeError("linear_combination: need matching non-empty terms and weights");
  Scalar acc = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) acc += weights[i] * terms[i].value().item();
  std::vector<Var<Scalar>> ts(terms.begin(), terms.end());
  std::vector<Scalar> ws(weights.begin(), weights.end());
  Tape<Scalar>& tape = terms.front().tape();
  return tape.record(Tensor<Scalar>::scalar(acc), ts,
                     [ts, ws](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                       for (std::size_t i = 0; i < ts.size(); ++i)
                         t.accumulate(ts[i], Tensor<Scalar>::constant(ts[i].shape(), ws[i] * g.item()));
                     },
                     "linear_combination");
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().values().max(Scalar(0)));
  return x.tape().record(std::move(out), {x},
                         [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           t.accumulate_expr(x, (x.value().values() > Scalar(0)).select(g.values(), Scalar(0)));
                         },
                         "relu");
}

/// Clamp to [0, 1]. Gradient passes where the input lies inside the closed
/// interval and is zero at saturated coordinates.
template <typename Scalar>
Var<Scalar> clip_unit(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().values().max(Scalar(0)).min(Scalar(1)));
  return x.tape().record(std::move(out), {x},
                         [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           const auto& v = x.value().values();
                           t.accumulate_expr(x, (v >= Scalar(0) && v <= Scalar(1)).select(g.values(), Scalar(0)));
                         },
                         "clip_unit");
}

/// batch [B, ...] + image [...], broadcast over the batch axis.
template <typename Scalar>
Var<Scalar> add_broadcast(const Var<Scalar>& batch, const Var<Scalar>& image) {
  const Shape& bs = batch.shape();
  if (bs.size() != image.shape().size() + 1 || !std::equal(image.shape().begin(), image.shape().end(), bs.begin() + 1))
    throw ShapeError("add_broadcast: " + shape_string(bs) + " + " + shape_string(image.shape()));
  const Index per = image.value().size();
  Tensor<Scalar> out = batch.value();
  for (Index b = 0; b < bs[0]; ++b) out.values().segment(b * per, per) += image.value().values();
  return batch.tape().record(std::move(out), {batch, image},
                             [batch, image, per](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                               t.accumulate(batch, g);
                               if (!t.needs_grad(image)) return;
                               typename Tensor<Scalar>::Array acc = Tensor<Scalar>::Array::Zero(per);
                               for (Index b = 0; b < g.size() / per; ++b) acc += g.values().segment(b * per, per);
                               t.accumulate(image, Tensor<Scalar>(image.shape(), std::move(acc)));
                             },
                             "add_broadcast");
}

}  // namespace fictplay

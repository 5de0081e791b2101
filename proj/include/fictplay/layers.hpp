#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "fictplay/ops.hpp"

namespace fictplay {

/// out[b,o] = Σ_i input[b,i]·weight[i,o] + bias[o]
template <typename Scalar>
Var<Scalar> dense(const Var<Scalar>& input, const Var<Scalar>& weight, const Var<Scalar>& bias) {
  const Tensor<Scalar>& x = input.value();
  const Tensor<Scalar>& w = weight.value();
  if (x.rank() != 2 || w.rank() != 2 || bias.value().rank() != 1 || x.dim(1) != w.dim(0) ||
      bias.value().dim(0) != w.dim(1))
    throw ShapeError("dense: input " + shape_string(x.shape()) + ", weight " + shape_string(w.shape()) +
                     ", bias " + shape_string(bias.shape()));
  const Index batch = x.dim(0), in = w.dim(0), out_dim = w.dim(1);
  Tensor<Scalar> out({batch, out_dim});
  {
    detail::ConstRowMajorMap<Scalar> X(x.data(), batch, in);
    detail::ConstRowMajorMap<Scalar> W(w.data(), in, out_dim);
    detail::RowMajorMap<Scalar> Y(out.data(), batch, out_dim);
    Y.noalias() = X * W;
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias.value().data(), out_dim);
  }
  return input.tape().record(
      std::move(out), {input, weight, bias},
      [input, weight, bias, batch, in, out_dim](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        detail::ConstRowMajorMap<Scalar> G(g.data(), batch, out_dim);
        if (t.needs_grad(input)) {
          Tensor<Scalar> gx({batch, in});
          detail::RowMajorMap<Scalar>(gx.data(), batch, in).noalias() =
              G * detail::ConstRowMajorMap<Scalar>(weight.value().data(), in, out_dim).transpose();
          t.accumulate(input, gx);
        }
        if (t.needs_grad(weight)) {
          Tensor<Scalar> gw({in, out_dim});
          detail::RowMajorMap<Scalar>(gw.data(), in, out_dim).noalias() =
              detail::ConstRowMajorMap<Scalar>(input.value().data(), batch, in).transpose() * G;
          t.accumulate(weight, gw);
        }
        if (t.needs_grad(bias)) {
          Tensor<Scalar> gb({out_dim});
          Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(gb.data(), out_dim) = G.colwise().sum();
          t.accumulate(bias, gb);
        }
      },
      "dense");
}

inline Index conv_output_extent(Index extent, Index kernel, Index stride, Padding padding) {
  const Index pad = detail::conv_padding(padding, kernel);
  return (extent + 2 * pad - kernel) / stride + 1;
}

namespace detail {

// Column matrix of a conv input: row (c,ky,kx), column (b,oy,ox). Padded taps stay zero.
template <typename Scalar>
void im2col(const Scalar* x, Index B, Index C, Index H, Index W, Index k, Index stride, Index pad, Index OH,
            Index OW, Scalar* cols) {
  const Index P = OH * OW, N = B * P;
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols + ((c * k + ky) * k + kx) * N;
        for (Index b = 0; b < B; ++b) {
          const Scalar* xin = x + ((b * C + c) * H) * W;
          for (Index oy = 0; oy < OH; ++oy) {
            const Index iy = oy * stride + ky - pad;
            Scalar* dst = row + b * P + oy * OW;
            if (iy < 0 || iy >= H) {
              std::fill(dst, dst + OW, Scalar(0));
              continue;
            }
            for (Index ox = 0; ox < OW; ++ox) {
              const Index ix = ox * stride + kx - pad;
              dst[ox] = (ix < 0 || ix >= W) ? Scalar(0) : xin[iy * W + ix];
            }
          }
        }
      }
}

// Adjoint of im2col: scatter-adds column gradients back into the input layout.
template <typename Scalar>
void col2im(const Scalar* cols, Index B, Index C, Index H, Index W, Index k, Index stride, Index pad, Index OH,
            Index OW, Scalar* gx) {
  const Index P = OH * OW, N = B * P;
  for (Index c = 0; c < C; ++c)
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols + ((c * k + ky) * k + kx) * N;
        for (Index b = 0; b < B; ++b) {
          Scalar* gin = gx + ((b * C + c) * H) * W;
          for (Index oy = 0; oy < OH; ++oy) {
            const Index iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            const Scalar* src = row + b * P + oy * OW;
            for (Index ox = 0; ox < OW; ++ox) {
              const Index ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < W) gin[iy * W + ix] += src[ox];
            }
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of [B,C,H,W] with [F,C,k,k] kernels, lowered to one GEMM
/// over an im2col buffer.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& input, const Var<Scalar>& kernel, const Var<Scalar>& bias, Index stride,
                   Padding padding) {
  const Tensor<Scalar>& x = input.value();
  const Tensor<Scalar>& w = kernel.value();
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3) ||
      bias.value().rank() != 1 || bias.value().dim(0) != w.dim(0))
    throw ShapeError("conv2d: input " + shape_string(x.shape()) + ", kernel " + shape_string(w.shape()) +
                     ", bias " + shape_string(bias.shape()));
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index F = w.dim(0), k = w.dim(2);
  const Index pad = detail::conv_padding(padding, k);
  if (k > H + 2 * pad || k > W + 2 * pad) throw ShapeError("conv2d: kernel larger than padded input");
  const Index OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  const Index P = OH * OW, N = B * P, R = C * k * k;

  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto cols = std::make_shared<Mat>(R, N);
  detail::im2col(x.data(), B, C, H, W, k, stride, pad, OH, OW, cols->data());
  Mat y(F, N);
  y.noalias() = detail::ConstRowMajorMap<Scalar>(w.data(), F, R) * *cols;

  Tensor<Scalar> out({B, F, OH, OW});
  for (Index b = 0; b < B; ++b)
    for (Index f = 0; f < F; ++f) {
      Scalar* dst = out.data() + (b * F + f) * P;
      const Scalar* src = y.data() + f * N + b * P;
      const Scalar bf = bias.value()[f];
      for (Index p = 0; p < P; ++p) dst[p] = src[p] + bf;
    }

  return input.tape().record(
      std::move(out), {input, kernel, bias},
      [=](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        // Regroup the output gradient as [F, (b,p)] to match the column layout.
        Mat gy(F, N);
        for (Index b = 0; b < B; ++b)
          for (Index f = 0; f < F; ++f)
            std::copy_n(g.data() + (b * F + f) * P, P, gy.data() + f * N + b * P);
        if (t.needs_grad(kernel)) {
          Tensor<Scalar> gw(kernel.shape());
          detail::RowMajorMap<Scalar>(gw.data(), F, R).noalias() = gy * cols->transpose();
          t.accumulate(kernel, gw);
        }
        if (t.needs_grad(input)) {
          Mat gcols(R, N);
          gcols.noalias() = detail::ConstRowMajorMap<Scalar>(kernel.value().data(), F, R).transpose() * gy;
          Tensor<Scalar> gx(input.shape());
          detail::col2im(gcols.data(), B, C, H, W, k, stride, pad, OH, OW, gx.data());
          t.accumulate(input, gx);
        }
        if (t.needs_grad(bias)) {
          Tensor<Scalar> gb({F});
          for (Index f = 0; f < F; ++f) gb[f] = gy.row(f).sum();
          t.accumulate(bias, gb);
        }
      },
      "conv2d");
}

/// Running statistics owned by a batch-norm layer.
template <typename Scalar>
struct RunningStats {
  Tensor<Scalar> mean;
  Tensor<Scalar> var;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

/// Batch normalisation over [B,C,H,W] with per-channel statistics.
///
/// Train mode normalises with the batch mean and biased batch variance and, when
/// `stats` is non-null, folds them into the running estimates as
/// running = 0.9·running + 0.1·batch (unbiased variance). Infer mode reads the
/// running estimates from `stats`, which must then be non-null.
template <typename Scalar>
Var<Scalar> batchnorm(const Var<Scalar>& input, const Var<Scalar>& gamma, const Var<Scalar>& beta, Mode mode,
                      RunningStats<Scalar>* stats) {
  const Tensor<Scalar>& x = input.value();
  if (x.rank() != 4 || gamma.value().rank() != 1 || gamma.value().dim(0) != x.dim(1) ||
      beta.shape() != gamma.shape())
    throw ShapeError("batchnorm: input " + shape_string(x.shape()) + ", gamma " + shape_string(gamma.shape()));
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const Index M = B * HW;
  const auto eps = static_cast<Scalar>(kBatchNormEpsilon);
  if (mode == Mode::Train && B < 2) throw ShapeError("batchnorm: train mode needs batch >= 2");
  if (mode == Mode::Infer && stats == nullptr) throw ShapeError("batchnorm: infer mode needs running stats");

  using Array = typename Tensor<Scalar>::Array;
  Array mean(C), inv_std(C);
  if (mode == Mode::Train) {
    Array var(C);
    for (Index c = 0; c < C; ++c) {
      Scalar s = 0;
      for (Index b = 0; b < B; ++b) s += x.values().segment((b * C + c) * HW, HW).sum();
      mean[c] = s / static_cast<Scalar>(M);
      Scalar ss = 0;
      for (Index b = 0; b < B; ++b) ss += (x.values().segment((b * C + c) * HW, HW) - mean[c]).square().sum();
      var[c] = ss / static_cast<Scalar>(M);
    }
    inv_std = (var + eps).rsqrt();
    if (stats != nullptr) {
      const auto m = static_cast<Scalar>(kBatchNormMomentum);
      stats->mean.values() = m * stats->mean.values() + (Scalar(1) - m) * mean;
      const Scalar unbias = static_cast<Scalar>(M) / static_cast<Scalar>(M - 1);
      stats->var.values() = m * stats->var.values() + (Scalar(1) - m) * (var * unbias);
    }
  } else {
    mean = stats->mean.values();
    inv_std = (stats->var.values() + eps).rsqrt();
  }

  Tensor<Scalar> xhat(x.shape());
  Tensor<Scalar> out(x.shape());
  for (Index b = 0; b < B; ++b)
    for (Index c = 0; c < C; ++c) {
      const Index off = (b * C + c) * HW;
      xhat.values().segment(off, HW) = (x.values().segment(off, HW) - mean[c]) * inv_std[c];
      out.values().segment(off, HW) = xhat.values().segment(off, HW) * gamma.value()[c] + beta.value()[c];
    }

  return input.tape().record(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, mode, xhat = std::move(xhat), inv_std, B, C, HW, M](Tape<Scalar>& t,
                                                                               const Tensor<Scalar>& g) {
        Array sum_g = Array::Zero(C), sum_gx = Array::Zero(C);
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            const Index off = (b * C + c) * HW;
            sum_g[c] += g.values().segment(off, HW).sum();
            sum_gx[c] += (g.values().segment(off, HW) * xhat.values().segment(off, HW)).sum();
          }
        if (t.needs_grad(gamma)) t.accumulate(gamma, Tensor<Scalar>(gamma.shape(), sum_gx));
        if (t.needs_grad(beta)) t.accumulate(beta, Tensor<Scalar>(beta.shape(), sum_g));
        if (!t.needs_grad(input)) return;
        Tensor<Scalar> gx(input.shape());
        const auto inv_m = Scalar(1) / static_cast<Scalar>(M);
        for (Index b = 0; b < B; ++b)
          for (Index c = 0; c < C; ++c) {
            const Index off = (b * C + c) * HW;
            const Scalar k = gamma.value()[c] * inv_std[c];
            if (mode == Mode::Train)
              gx.values().segment(off, HW) =
                  k * (g.values().segment(off, HW) - sum_g[c] * inv_m - xhat.values().segment(off, HW) * (sum_gx[c] * inv_m));
            else
              gx.values().segment(off, HW) = k * g.values().segment(off, HW);
          }
        t.accumulate(input, gx);
      },
      "batchnorm");
}

namespace detail {

/// Row-wise log-softmax of a [B,C] tensor.
template <typename Scalar>
Tensor<Scalar> log_softmax_rows(const Tensor<Scalar>& logits) {
  const Index B = logits.dim(0), C = logits.dim(1);
  Tensor<Scalar> out(logits.shape());
  for (Index b = 0; b < B; ++b) {
    auto row = logits.values().segment(b * C, C);
    const Scalar m = row.maxCoeff();
    const Scalar lse = m + std::log((row - m).exp().sum());
    out.values().segment(b * C, C) = row - lse;
  }
  return out;
}

template <typename Scalar>
void check_labels(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || static_cast<Index>(labels.size()) != logits.dim(0))
    throw ShapeError("softmax_cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                     std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= logits.dim(1))
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                              std::to_string(logits.dim(1)) + ")");
}

}  // namespace detail

/// Per-sample weighted cross-entropy Σ_b weights[b]·(−log softmax(logits_b)[y_b]).
template <typename Scalar>
Var<Scalar> weighted_softmax_cross_entropy(const Var<Scalar>& logits, std::span<const int> labels,
                                           std::span<const Scalar> weights) {
  detail::check_labels(logits.value(), labels);
  if (weights.size() != labels.size()) throw ShapeError("weighted_softmax_cross_entropy: weights/labels size");
  const Index B = logits.value().dim(0), C = logits.value().dim(1);
  Tensor<Scalar> logp = detail::log_softmax_rows(logits.value());
  Scalar loss = 0;
  for (Index b = 0; b < B; ++b) loss -= weights[static_cast<std::size_t>(b)] * logp[b * C + labels[static_cast<std::size_t>(b)]];
  std::vector<int> ys(labels.begin(), labels.end());
  std::vector<Scalar> ws(weights.begin(), weights.end());
  return logits.tape().record(
      Tensor<Scalar>::scalar(loss), {logits},
      [logits, ys = std::move(ys), ws = std::move(ws), logp = std::move(logp), B, C](Tape<Scalar>& t,
                                                                                   const Tensor<Scalar>& g) {
        Tensor<Scalar> gl(logits.shape());
        const Scalar up = g.item();
        for (Index b = 0; b < B; ++b) {
          const auto bi = static_cast<std::size_t>(b);
          gl.values().segment(b * C, C) = logp.values().segment(b * C, C).exp() * (ws[bi] * up);
          gl[b * C + ys[bi]] -= ws[bi] * up;
        }
        t.accumulate(logits, gl);
      },
      "weighted_softmax_cross_entropy");
}

/// Mean over the batch of −log softmax(logits)[label]; gradient (softmax − onehot)/B.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  detail::check_labels(logits.value(), labels);
  const Index B = logits.value().dim(0);
  std::vector<Scalar> w(static_cast<std::size_t>(B), Scalar(1) / static_cast<Scalar>(B));
  return weighted_softmax_cross_entropy(logits, labels, std::span<const Scalar>(w));
}

/// Softmax probabilities of a [B,C] logit tensor (no tape).
template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& logits) {
  Tensor<Scalar> p = detail::log_softmax_rows(logits);
  p.values() = p.values().exp();
  return p;
}

}  // namespace fictplay

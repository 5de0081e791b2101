#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fictplay/model.hpp"
#include "fictplay/view.hpp"

namespace fictplay {

struct UniversalAttackConfig {
  double epsilon = 16.0 / 255.0;  // L∞ budget, fraction of the pixel range
  double alpha = 0.004;           // step size
  long iterations = 2000;
  Index batch_size = 100;

  void validate() const {
    if (!(epsilon > 0) || !(alpha > 0)) throw std::invalid_argument("universal attack: epsilon and alpha must be > 0");
    if (iterations < 0 || batch_size < 1) throw std::invalid_argument("universal attack: bad iterations/batch size");
  }
};

struct PatchAttackConfig {
  Index side = 16;        // canonical patch resolution P
  double chi = 0.4;       // placed diameter / image side
  double theta_max = 20.0 * std::numbers::pi / 180.0;
  Index placements = 4;   // Monte Carlo placements per sample and step
  double alpha = 1.0;
  long iterations = 1000;
  Index batch_size = 100;
  std::optional<int> target_class;
  double lambda = 0.0;    // weight of the fixed-class term

  void validate() const {
    if (!(chi > 0 && chi <= 1)) throw std::invalid_argument("patch attack: chi must lie in (0,1]");
    if (placements < 1 || side < 1 || batch_size < 1 || iterations < 0)
      throw std::invalid_argument("patch attack: bad placements/side/batch/iterations");
    if (!(alpha > 0)) throw std::invalid_argument("patch attack: alpha must be > 0");
    if (!(lambda >= 0 && lambda <= 1)) throw std::invalid_argument("patch attack: lambda must lie in [0,1]");
    if (!target_class && lambda != 0) throw std::invalid_argument("patch attack: lambda > 0 needs a target class");
  }
};

struct PgdConfig {
  double epsilon = 16.0 / 255.0;
  double step_size = 4.0 / 255.0;
  int steps = 7;
  bool random_init = true;

  void validate() const {
    if (steps < 0) throw std::invalid_argument("pgd: steps must be >= 0");
    if (!(epsilon >= 0) || !(step_size >= 0)) throw std::invalid_argument("pgd: epsilon and step size must be >= 0");
  }
};

/// Γ_ε: coordinatewise clamp to [−ε, ε].
template <typename Scalar>
Tensor<Scalar> project_linf(const Tensor<Scalar>& xi, double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("project_linf: epsilon must be positive");
  const auto e = static_cast<Scalar>(epsilon);
  return Tensor<Scalar>(xi.shape(), xi.values().max(-e).min(e));
}

/// Per-sample input gradients of the target's expected loss at clip(x + ξ),
/// with zero gradient at saturated pixels. Row b holds ∇ξ l(f(clip(x_b+ξ)), y_b)
/// up to a positive factor shared by all samples.
template <typename Scalar, typename Target>
Tensor<Scalar> universal_input_gradients(const Tensor<Scalar>& xi, const Target& target, const Tensor<Scalar>& batch,
                                         std::span<const int> labels) {
  const Index per = xi.size();
  if (batch.size() % per != 0 || batch.dim(0) * per != batch.size())
    throw ShapeError("universal step: batch " + shape_string(batch.shape()) + " vs xi " + shape_string(xi.shape()));
  Tensor<Scalar> raw = batch;
  for (Index b = 0; b < batch.dim(0); ++b) raw.values().segment(b * per, per) += xi.values();
  Tape<Scalar> tape;
  auto shifted = tape.leaf(std::move(raw), true, "input");
  auto loss = expected_loss(tape, target, clip_unit(shifted), labels);
  tape.backward(loss);
  return tape.grad(shifted);
}

/// ξ ← Γ_ε(ξ + α/|B| Σ_i sgn(∇ξ l(f(x_i+ξ), y_i))). The sign is taken per
/// sample before averaging.
template <typename Scalar, typename Target>
Tensor<Scalar> universal_step(const Tensor<Scalar>& xi, const Target& target, const Tensor<Scalar>& batch,
                              std::span<const int> labels, double alpha, double epsilon) {
  if (xi.max_abs() > static_cast<Scalar>(epsilon)) throw std::invalid_argument("universal_step: input exceeds budget");
  const Tensor<Scalar> grads = universal_input_gradients(xi, target, batch, labels);
  const Index per = xi.size(), B = batch.dim(0);
  typename Tensor<Scalar>::Array signs = Tensor<Scalar>::Array::Zero(per);
  for (Index b = 0; b < B; ++b) signs += grads.values().segment(b * per, per).sign();
  Tensor<Scalar> next(xi.shape(), xi.values() + static_cast<Scalar>(alpha / static_cast<double>(B)) * signs);
  return project_linf(next, epsilon);
}

/// Projected sign-gradient ascent from ξ = 0 over random batches of `data`.
template <typename Scalar, typename Target>
PerturbationSpec<Scalar> learn_universal(const Target& target, const Dataset<Scalar>& data,
                                         const UniversalAttackConfig& cfg, Rng& rng) {
  cfg.validate();
  Tensor<Scalar> xi = Tensor<Scalar>::zeros(data.image_shape());
  if (cfg.iterations > 0) {
    BatchSampler sampler(data.size(), rng());
    const Index bs = std::min(cfg.batch_size, data.size());
    for (long k = 0; k < cfg.iterations; ++k) {
      auto batch = sample_batch(data, bs, sampler);
      xi = universal_step(xi, target, batch.images, batch.labels, cfg.alpha, cfg.epsilon);
    }
  }
  return PerturbationSpec<Scalar>::universal(std::move(xi), cfg.epsilon);
}

/// Ascent objective on logits: (1−λ)·CE(logits, y) − λ·CE(logits, t).
template <typename Scalar>
Var<Scalar> patch_objective(const Var<Scalar>& logits, std::span<const int> labels,
                            std::span<const int> target_labels, double lambda) {
  if (lambda == 0) return softmax_cross_entropy(logits, labels);
  auto toward = softmax_cross_entropy(logits, target_labels);
  if (lambda == 1) return scale(toward, Scalar(-1));
  auto away = softmax_cross_entropy(logits, labels);
  const Var<Scalar> terms[] = {away, toward};
  const Scalar w[] = {static_cast<Scalar>(1 - lambda), static_cast<Scalar>(-lambda)};
  return linear_combination(std::span<const Var<Scalar>>(terms), std::span<const Scalar>(w));
}

/// Gradient of the mean patch objective over the expanded batch with respect
/// to the patch pixels. `images`/`labels` hold one row per (sample, placement).
template <typename Scalar, typename Target>
Tensor<Scalar> patch_gradient(const Tensor<Scalar>& xi, const Target& target, const Tensor<Scalar>& images,
                              std::span<const int> labels, std::span<const PatchPlacement> placements,
                              std::optional<int> target_class, double lambda) {
  Tape<Scalar> tape;
  auto patch = tape.leaf(xi, true, "patch");
  auto placed = overlay_patch(tape.constant(images), patch, placements);
  std::vector<int> tlabels(labels.size(), target_class.value_or(0));
  auto objective = mixture_objective(tape, target, placed, [&](const Var<Scalar>& z) {
    return patch_objective(z, labels, std::span<const int>(tlabels), lambda);
  });
  tape.backward(objective);
  return tape.grad(patch);
}

/// ξ ← clip_[0,1](ξ + α·mask ⊙ ∇ξ J) for explicit placements (one per row of
/// the expanded batch). Pixels outside the disc mask never move.
template <typename Scalar, typename Target>
Tensor<Scalar> patch_step(const PerturbationSpec<Scalar>& spec, const Target& target, const Tensor<Scalar>& images,
                          std::span<const int> labels, std::span<const PatchPlacement> placements,
                          const PatchAttackConfig& cfg) {
  cfg.validate();
  Tensor<Scalar> g = patch_gradient(spec.xi(), target, images, labels, placements, cfg.target_class, cfg.lambda);
  const Index C = spec.xi().dim(0), PP = spec.side() * spec.side();
  for (Index c = 0; c < C; ++c) g.values().segment(c * PP, PP) *= spec.mask().values();
  return Tensor<Scalar>(spec.xi().shape(),
                        (spec.xi().values() + static_cast<Scalar>(cfg.alpha) * g.values()).max(Scalar(0)).min(Scalar(1)));
}

/// Repeats each sample `cfg.placements` times with fresh random placements and steps.
template <typename Scalar, typename Target>
Tensor<Scalar> patch_step(const PerturbationSpec<Scalar>& spec, const Target& target, const Tensor<Scalar>& batch,
                          std::span<const int> labels, const PatchAttackConfig& cfg, Rng& rng) {
  const Index B = batch.dim(0), S = cfg.placements, per = batch.size() / B;
  Tensor<Scalar> images({B * S, batch.dim(1), batch.dim(2), batch.dim(3)});
  std::vector<int> ys;
  std::vector<PatchPlacement> placements;
  for (Index b = 0; b < B; ++b)
    for (Index s = 0; s < S; ++s) {
      images.values().segment((b * S + s) * per, per) = batch.values().segment(b * per, per);
      ys.push_back(labels[static_cast<std::size_t>(b)]);
      placements.push_back(sample_placement(rng, batch.dim(2), batch.dim(3), spec.chi(), spec.theta_max()));
    }
  return patch_step(spec, target, images, ys, placements, cfg);
}

/// Gradient ascent on a mid-grey disc patch over random batches of `data`.
template <typename Scalar, typename Target>
PerturbationSpec<Scalar> learn_patch(const Target& target, const Dataset<Scalar>& data, const PatchAttackConfig& cfg,
                                     Rng& rng) {
  cfg.validate();
  auto spec = PerturbationSpec<Scalar>::gray_patch(data.channels(), cfg.side, cfg.chi, cfg.theta_max);
  if (cfg.iterations > 0) {
    BatchSampler sampler(data.size(), rng());
    const Index bs = std::min(cfg.batch_size, data.size());
    for (long k = 0; k < cfg.iterations; ++k) {
      auto batch = sample_batch(data, bs, sampler);
      spec.set_xi(patch_step(spec, target, batch.images, batch.labels, cfg, rng));
    }
  }
  return spec;
}

/// Per-sample L∞ PGD: optional uniform start in the ε-ball, then
/// x̃ ← clip_[0,1](Π_ε(x̃ + step·sgn ∇x l(f(x̃), y))).
template <typename Scalar, typename Target>
Tensor<Scalar> pgd_per_sample(const Target& target, const Tensor<Scalar>& batch, std::span<const int> labels,
                              const PgdConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto eps = static_cast<Scalar>(cfg.epsilon);
  const auto lo = (batch.values() - eps).max(Scalar(0)).eval();
  const auto hi = (batch.values() + eps).min(Scalar(1)).eval();
  Tensor<Scalar> adv = batch;
  if (cfg.random_init && cfg.epsilon > 0) {
    std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
    for (Index i = 0; i < adv.size(); ++i) adv[i] += static_cast<Scalar>(u(rng));
    adv.values() = adv.values().max(lo).min(hi);
  }
  for (int s = 0; s < cfg.steps; ++s) {
    Tape<Scalar> tape;
    auto x = tape.leaf(adv, true, "input");
    tape.backward(expected_loss(tape, target, x, labels));
    const Tensor<Scalar> g = tape.grad(x);
    adv.values() = (adv.values() + static_cast<Scalar>(cfg.step_size) * g.values().sign()).max(lo).min(hi);
  }
  return adv;
}

// ---------------------------------------------------------------------------
// Perturbation container
// ---------------------------------------------------------------------------

inline constexpr char kPerturbationMagic[9] = "FPLYPERT";
inline constexpr std::uint32_t kPerturbationVersion = 1;

/// Layout (little-endian): magic "FPLYPERT" | u32 version | u8 kind (0 universal,
/// 1 patch) | universal: f32 ε  /  patch: u32 P, f32 χ, f32 θmax (radians) |
/// u32 rank | u32 extents[rank] | f32 payload
template <typename Scalar>
void save_perturbation(const std::string& path, const PerturbationSpec<Scalar>& spec) {
  auto os = io::open_out(path);
  io::write_magic(os, kPerturbationMagic);
  io::write_u32(os, kPerturbationVersion);
  const bool patch = spec.kind() == PerturbationKind::Patch;
  io::write_u8(os, patch ? 1 : 0);
  if (patch) {
    io::write_u32(os, static_cast<std::uint32_t>(spec.side()));
    io::write_f32(os, static_cast<float>(spec.chi()));
    io::write_f32(os, static_cast<float>(spec.theta_max()));
  } else {
    io::write_f32(os, static_cast<float>(spec.epsilon()));
  }
  const Tensor<Scalar>& xi = spec.xi();
  io::write_u32(os, static_cast<std::uint32_t>(xi.rank()));
  for (Index e : xi.shape()) io::write_u32(os, static_cast<std::uint32_t>(e));
  for (Index i = 0; i < xi.size(); ++i) io::write_f32(os, static_cast<float>(xi[i]));
  os.flush();
  if (!os) throw IoError("failed writing perturbation '" + path + "'");
}

template <typename Scalar>
PerturbationSpec<Scalar> load_perturbation(const std::string& path) {
  auto is = io::open_in(path);
  io::expect_magic(is, kPerturbationMagic, "perturbation '" + path + "'");
  if (io::read_u32(is) != kPerturbationVersion) throw IoError("perturbation '" + path + "': unsupported version");
  const std::uint8_t kind = io::read_u8(is);
  if (kind > 1) throw IoError("perturbation '" + path + "': bad kind");
  std::uint32_t side = 0;
  float chi = 0, theta = 0, eps = 0;
  if (kind == 1) {
    side = io::read_u32(is);
    chi = io::read_f32(is);
    theta = io::read_f32(is);
  } else {
    eps = io::read_f32(is);
  }
  const std::uint32_t rank = io::read_u32(is);
  if (rank != 3) throw IoError("perturbation '" + path + "': payload must be rank 3");
  Shape shape(rank);
  for (auto& e : shape) {
    e = io::read_u32(is);
    if (e < 1 || e > 4096) throw IoError("perturbation '" + path + "': bad extent");
  }
  const auto values = io::read_f32_array(is, static_cast<std::size_t>(shape_size(shape)));
  typename Tensor<Scalar>::Array a(shape_size(shape));
  for (Index i = 0; i < a.size(); ++i) a[i] = static_cast<Scalar>(values[static_cast<std::size_t>(i)]);
  try {
    Tensor<Scalar> xi(std::move(shape), std::move(a));
    if (kind == 1) {
      if (xi.dim(1) != static_cast<Index>(side)) throw IoError("perturbation '" + path + "': side mismatch");
      return PerturbationSpec<Scalar>::patch(std::move(xi), chi, theta);
    }
    return PerturbationSpec<Scalar>::universal(std::move(xi), eps);
  } catch (const std::invalid_argument& e) {
    throw IoError("perturbation '" + path + "': " + e.what());
  }
}

}  // namespace fictplay

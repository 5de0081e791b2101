#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fictplay/attack.hpp"
#include "fictplay/report.hpp"

namespace fictplay {

/// How the nested per-iteration classifier losses are folded into one weight per dataset.
enum class Weighting {
  Literal,  // expand (1/(n+1)) Σ_{i=0}^{n} L^i with L^0 = L(D₀), L^i = (1/i) Σ_{j<i} L(D_j)
  Uniform,  // equal weight on every pooled dataset
};

enum class FpMode { Approximate, Exact };

/// Weight of each of the n pooled datasets D₀..D_{n−1} (n = 0 is treated as
/// the clean dataset alone). Weights are non-negative and sum to 1.
std::vector<double> dataset_weights(int n, Weighting mode);

struct AttackSettings {
  PerturbationKind kind = PerturbationKind::Universal;
  UniversalAttackConfig universal;
  PatchAttackConfig patch;
};

struct TrainConfig {
  int outer_iterations = 8;  // N
  long inner_steps = 300;    // K
  Index batch_size = 64;
  double lr = 0.05;
  double lr_decay = 0.1;
  std::vector<long> lr_milestones;  // optimizer steps at which lr *= lr_decay
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::uint64_t seed = 0;
  Weighting weighting = Weighting::Literal;
  AttackSettings attack;  // crafting the pooled perturbations (FP)
  PgdConfig pgd;          // per-sample examples (AT)
  std::string snapshot_dir;  // exact FP: keep snapshots on disk here ("" keeps them in memory)

  void validate() const;
};

struct StepInfo {
  long step = 0;
  int outer = 0;
  double loss = 0;
  double clean_loss = 0;  // AT only
  double adv_loss = 0;    // AT only
};

template <typename Scalar>
struct TrainHooks {
  /// After every optimizer step.
  std::function<void(const StepInfo&, const Params<Scalar>&)> on_step;
  /// After every outer iteration; returned rows go into the report. `pool` is
  /// non-null in exact FP mode and `latest` is the perturbation crafted in this
  /// iteration (FP only).
  std::function<std::vector<MetricsRow>(int n, const Params<Scalar>&, const ClassifierPool<Scalar>* pool,
                                        const PerturbationSpec<Scalar>* latest)>
      on_outer;
};

/// Fictitious-play bookkeeping: the current classifier, the crafted
/// perturbations ξ₁..ξ_{n} (D₀ is implicit), and in exact mode the snapshots f₀..f_n.
template <typename Scalar>
struct FPState {
  Params<Scalar> params;
  std::vector<std::shared_ptr<const PerturbationSpec<Scalar>>> perturbations;
  std::vector<std::uint64_t> view_seeds;
  std::optional<ClassifierPool<Scalar>> classifiers;
  int n = 0;
  Weighting weighting = Weighting::Literal;

  /// D₀ followed by one view per pooled perturbation.
  std::vector<PerturbedView<Scalar>> views(const Dataset<Scalar>& data) const {
    std::vector<PerturbedView<Scalar>> out;
    out.emplace_back(data);
    for (std::size_t i = 0; i < perturbations.size(); ++i) out.emplace_back(data, perturbations[i], view_seeds[i]);
    return out;
  }

  std::size_t perturbation_bytes() const {
    std::size_t bytes = 0;
    for (const auto& p : perturbations) bytes += sizeof(*p) + p->storage_bytes();
    return bytes + view_seeds.capacity() * sizeof(std::uint64_t);
  }
};

template <typename Scalar>
struct TrainResult {
  Params<Scalar> params;
  std::optional<ClassifierPool<Scalar>> classifiers;  // exact FP
  std::vector<std::shared_ptr<const PerturbationSpec<Scalar>>> perturbations;  // FP
  std::vector<MetricsRow> report;
};

namespace detail {

/// SGD-with-momentum state shared by the three training procedures.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer(Params<Scalar>& params, const TrainConfig& cfg)
      : params_(params), cfg_(cfg), schedule_(cfg.lr, cfg.lr_decay, cfg.lr_milestones) {}

  void apply(const Gradients<Scalar>& grads) {
    sgd_momentum_step(params_.weights, grads.map(), velocity_, static_cast<Scalar>(schedule_.at(step_)),
                      static_cast<Scalar>(cfg_.momentum), static_cast<Scalar>(cfg_.weight_decay));
    ++step_;
  }

  long step() const { return step_; }
  double lr() const { return schedule_.at(step_); }

 private:
  Params<Scalar>& params_;
  const TrainConfig& cfg_;
  LrSchedule schedule_;
  TensorMap<Scalar> velocity_;
  long step_ = 0;
};

template <typename Fn>
auto at_outer_iteration(int n, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError("outer iteration " + std::to_string(n) + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError("outer iteration " + std::to_string(n) + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error("outer iteration " + std::to_string(n) + ": " + e.what());
  }
}

template <typename Scalar>
std::vector<MetricsRow> report_outer(const TrainHooks<Scalar>& hooks, int n, const Params<Scalar>& params,
                                     const ClassifierPool<Scalar>* pool, const PerturbationSpec<Scalar>* latest) {
  return hooks.on_outer ? hooks.on_outer(n, params, pool, latest) : std::vector<MetricsRow>{};
}

}  // namespace detail

/// Σ_g w_g · L(f, materialize(view_g, indices)) where views with identical
/// effect are merged (their weights summed). A single remaining group is the
/// plain mean cross-entropy on that view. Train mode normalises with the
/// statistics of the concatenated batch and updates running statistics.
template <typename Scalar>
Var<Scalar> classifier_pool_loss(Tape<Scalar>& tape, Params<Scalar>& params,
                                 std::span<const PerturbedView<Scalar>> views, std::span<const double> weights,
                                 std::span<const Index> indices, std::uint64_t draw, Mode mode = Mode::Train) {
  if (views.empty() || views.size() != weights.size())
    throw std::invalid_argument("classifier_pool_loss: need one weight per view");
  struct Group {
    std::size_t view;
    double weight;
  };
  std::vector<Group> groups;
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (weights[v] == 0) continue;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) { return views[g.view].same_effect(views[v]); });
    if (it == groups.end())
      groups.push_back({v, weights[v]});
    else
      it->weight += weights[v];
  }
  if (groups.empty()) throw std::invalid_argument("classifier_pool_loss: all weights are zero");
  const std::vector<int> labels = views.front().base().gather_labels(indices);
  auto run = [&](const Tensor<Scalar>& batch) {
    auto x = tape.constant(batch);
    return mode == Mode::Train ? forward_train(tape, params, x) : forward(tape, params, x);
  };
  if (groups.size() == 1) {
    return softmax_cross_entropy(run(materialize(views[groups[0].view], indices, draw)), labels);
  }
  const auto B = static_cast<Index>(indices.size());
  const PerturbedView<Scalar>& first = views[groups[0].view];
  const Index per = first.base().image_size();
  Tensor<Scalar> all({B * static_cast<Index>(groups.size()), first.base().channels(), first.base().height(),
                      first.base().width()});
  std::vector<int> all_labels;
  std::vector<Scalar> sample_weights;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const Tensor<Scalar> part = materialize(views[groups[g].view], indices, draw);
    all.values().segment(static_cast<Index>(g) * B * per, B * per) = part.values();
    all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    sample_weights.insert(sample_weights.end(), static_cast<std::size_t>(B),
                          static_cast<Scalar>(groups[g].weight / static_cast<double>(B)));
  }
  return weighted_softmax_cross_entropy(run(all), all_labels, std::span<const Scalar>(sample_weights));
}

/// Plain SGD on the clean loss for N·K steps.
template <typename Scalar>
TrainResult<Scalar> sgd_train(const Dataset<Scalar>& data, Params<Scalar> initial, const TrainConfig& cfg,
                              const TrainHooks<Scalar>& hooks = {}) {
  cfg.validate();
  TrainResult<Scalar> result;
  result.params = std::move(initial);
  Params<Scalar>& params = result.params;
  detail::Optimizer<Scalar> opt(params, cfg);
  BatchSampler sampler(data.size(), derive_seed(cfg.seed, stream::kBatches));
  for (int n = 1; n <= cfg.outer_iterations; ++n) {
    detail::at_outer_iteration(n, [&] {
      for (long k = 0; k < cfg.inner_steps; ++k) {
        auto batch = sample_batch(data, cfg.batch_size, sampler);
        Tape<Scalar> tape;
        auto loss = softmax_cross_entropy(forward_train(tape, params, tape.constant(batch.images)), batch.labels);
        opt.apply(tape.backward(loss));
        if (hooks.on_step) hooks.on_step({opt.step() - 1, n, loss.value().item(), 0, 0}, params);
      }
      auto rows = detail::report_outer<Scalar>(hooks, n, params, nullptr, nullptr);
      result.report.insert(result.report.end(), rows.begin(), rows.end());
      return 0;
    });
  }
  return result;
}

/// Adversarial training: each step crafts per-sample PGD examples against the
/// current classifier (inference mode) and descends on ½·clean + ½·adversarial
/// loss. Running statistics are updated from the clean half only.
template <typename Scalar>
TrainResult<Scalar> at_train(const Dataset<Scalar>& data, Params<Scalar> initial, const TrainConfig& cfg,
                             const TrainHooks<Scalar>& hooks = {}) {
  cfg.validate();
  cfg.pgd.validate();
  TrainResult<Scalar> result;
  result.params = std::move(initial);
  Params<Scalar>& params = result.params;
  detail::Optimizer<Scalar> opt(params, cfg);
  BatchSampler sampler(data.size(), derive_seed(cfg.seed, stream::kBatches));
  Rng pgd_rng(derive_seed(cfg.seed, stream::kPgd));
  for (int n = 1; n <= cfg.outer_iterations; ++n) {
    detail::at_outer_iteration(n, [&] {
      for (long k = 0; k < cfg.inner_steps; ++k) {
        auto batch = sample_batch(data, cfg.batch_size, sampler);
        const Tensor<Scalar> adv = pgd_per_sample(params, batch.images, batch.labels, cfg.pgd, pgd_rng);
        Tape<Scalar> tape;
        auto clean = softmax_cross_entropy(forward_train(tape, params, tape.constant(batch.images)), batch.labels);
        auto perturbed =
            softmax_cross_entropy(forward_train(tape, params, tape.constant(adv), false), batch.labels);
        const Var<Scalar> terms[] = {clean, perturbed};
        const Scalar half[] = {Scalar(0.5), Scalar(0.5)};
        auto loss = linear_combination(std::span<const Var<Scalar>>(terms), std::span<const Scalar>(half));
        opt.apply(tape.backward(loss));
        if (hooks.on_step)
          hooks.on_step({opt.step() - 1, n, loss.value().item(), clean.value().item(), perturbed.value().item()},
                        params);
      }
      auto rows = detail::report_outer<Scalar>(hooks, n, params, nullptr, nullptr);
      result.report.insert(result.report.end(), rows.begin(), rows.end());
      return 0;
    });
  }
  return result;
}

/// Crafts one perturbation against `target` with the configured attack family.
template <typename Scalar, typename Target>
PerturbationSpec<Scalar> craft_perturbation(const Target& target, const Dataset<Scalar>& data,
                                            const AttackSettings& attack, Rng& rng) {
  if (attack.kind == PerturbationKind::Universal) return learn_universal(target, data, attack.universal, rng);
  return learn_patch(target, data, attack.patch, rng);
}

/// Fictitious play. For n = 1..N: K SGD steps on the weighted loss over
/// D₀..D_{n−1} (one index batch per step, evaluated under every pooled view),
/// then a perturbation ξ_n crafted against the current classifier
/// (approximate) or the snapshot pool f₀..f_n (exact) is appended.
template <typename Scalar>
TrainResult<Scalar> fp_train(const Dataset<Scalar>& data, Params<Scalar> initial, const TrainConfig& cfg,
                             FpMode mode = FpMode::Approximate, const TrainHooks<Scalar>& hooks = {}) {
  cfg.validate();
  FPState<Scalar> state;
  state.params = std::move(initial);
  state.weighting = cfg.weighting;
  Params<Scalar>& params = state.params;
  auto snapshot = [&](int iteration) {
    if (cfg.snapshot_dir.empty()) return ClassifierSnapshot<Scalar>(iteration, params, "fp exact");
    char name[64];
    std::snprintf(name, sizeof name, "/snapshot_%04d.fplyckpt", iteration);
    return ClassifierSnapshot<Scalar>::on_disk(iteration, params, cfg.snapshot_dir + name, "fp exact");
  };
  if (mode == FpMode::Exact) {
    state.classifiers.emplace();
    state.classifiers->add(snapshot(0));
  }
  detail::Optimizer<Scalar> opt(params, cfg);
  BatchSampler sampler(data.size(), derive_seed(cfg.seed, stream::kBatches));
  TrainResult<Scalar> result;
  for (int n = 1; n <= cfg.outer_iterations; ++n) {
    detail::at_outer_iteration(n, [&] {
      state.n = n;
      const auto views = state.views(data);
      const auto weights = dataset_weights(n, cfg.weighting);
      for (long k = 0; k < cfg.inner_steps; ++k) {
        const auto indices = sampler.next(cfg.batch_size);
        Tape<Scalar> tape;
        auto loss = classifier_pool_loss(tape, params, std::span<const PerturbedView<Scalar>>(views),
                                         std::span<const double>(weights), std::span<const Index>(indices),
                                         static_cast<std::uint64_t>(opt.step()));
        opt.apply(tape.backward(loss));
        if (hooks.on_step) hooks.on_step({opt.step() - 1, n, loss.value().item(), 0, 0}, params);
      }
      Rng attack_rng(derive_seed(derive_seed(cfg.seed, stream::kAttack), static_cast<std::uint64_t>(n)));
      std::shared_ptr<const PerturbationSpec<Scalar>> xi;
      if (mode == FpMode::Exact) {
        state.classifiers->add(snapshot(n));
        xi = std::make_shared<const PerturbationSpec<Scalar>>(
            craft_perturbation(*state.classifiers, data, cfg.attack, attack_rng));
      } else {
        xi = std::make_shared<const PerturbationSpec<Scalar>>(craft_perturbation(params, data, cfg.attack, attack_rng));
      }
      state.perturbations.push_back(xi);
      state.view_seeds.push_back(derive_seed(derive_seed(cfg.seed, stream::kPlacement), static_cast<std::uint64_t>(n)));
      auto rows = detail::report_outer<Scalar>(hooks, n, params, state.classifiers ? &*state.classifiers : nullptr,
                                               xi.get());
      result.report.insert(result.report.end(), rows.begin(), rows.end());
      return 0;
    });
  }
  result.params = std::move(state.params);
  result.classifiers = std::move(state.classifiers);
  result.perturbations = std::move(state.perturbations);
  return result;
}

}  // namespace fictplay

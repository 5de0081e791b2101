#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fictplay/train.hpp"

namespace fictplay {

struct EvalConfig {
  AttackSettings attack;
  Index sample_size = 2000;  // capped at the split size
  Index chunk = 500;         // forward batch size
  bool record_seconds = false;
};

/// Sorted subset of 0..n−1 of size min(n, sample_size); the full range when it fits.
std::vector<Index> sample_indices(Index n, Index sample_size, std::uint64_t seed);

template <typename Scalar, typename Target>
std::vector<int> predict_view(const Target& target, const PerturbedView<Scalar>& view, std::span<const Index> indices,
                              Index chunk = 500) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(chunk)) {
    const auto part = indices.subspan(at, std::min<std::size_t>(static_cast<std::size_t>(chunk), indices.size() - at));
    const auto p = predict(target, materialize(view, part));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// Fraction of `indices` whose prediction under `view` equals the label.
template <typename Scalar, typename Target>
double view_accuracy(const Target& target, const PerturbedView<Scalar>& view, std::span<const Index> indices,
                     Index chunk = 500) {
  if (indices.empty()) throw std::invalid_argument("accuracy: empty dataset");
  const auto pred = predict_view(target, view, indices, chunk);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) hits += pred[i] == view.base().labels[static_cast<std::size_t>(indices[i])];
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

template <typename Scalar, typename Target>
double accuracy(const Target& target, const Dataset<Scalar>& data, Index sample_size, std::uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  const auto idx = sample_indices(data.size(), sample_size, seed);
  return view_accuracy(target, PerturbedView<Scalar>(data), std::span<const Index>(idx));
}

/// Accuracy with `spec` applied; patch placements are drawn from `placement_seed`.
template <typename Scalar, typename Target>
double perturbed_accuracy(const Target& target, const Dataset<Scalar>& data, const PerturbationSpec<Scalar>& spec,
                          std::span<const Index> indices, std::uint64_t placement_seed) {
  auto shared = std::make_shared<const PerturbationSpec<Scalar>>(spec);
  return view_accuracy(target, PerturbedView<Scalar>(data, shared, placement_seed), indices);
}

/// Fraction of samples not already of class `target_class` that are predicted as it under `spec`.
template <typename Scalar, typename Target>
double target_hit_rate(const Target& target, const Dataset<Scalar>& data, const PerturbationSpec<Scalar>& spec,
                       std::span<const Index> indices, int target_class, std::uint64_t placement_seed) {
  std::vector<Index> others;
  for (Index i : indices)
    if (data.labels[static_cast<std::size_t>(i)] != target_class) others.push_back(i);
  if (others.empty()) throw std::invalid_argument("target_hit_rate: every sample already has the target class");
  auto shared = std::make_shared<const PerturbationSpec<Scalar>>(spec);
  const auto pred = predict_view(target, PerturbedView<Scalar>(data, shared, placement_seed),
                                 std::span<const Index>(others));
  const auto hits = std::count(pred.begin(), pred.end(), target_class);
  return static_cast<double>(hits) / static_cast<double>(others.size());
}

template <typename Scalar>
struct AdvResult {
  double accuracy = 0;
  PerturbationSpec<Scalar> perturbation;
};

/// Crafts a fresh perturbation against `target` on `craft_on` with an
/// evaluation-only RNG stream, then measures accuracy on `evaluate_on`.
template <typename Scalar, typename Target>
AdvResult<Scalar> adv_accuracy(const Target& target, const Dataset<Scalar>& craft_on,
                               const Dataset<Scalar>& evaluate_on, const AttackSettings& attack, Index sample_size,
                               std::uint64_t seed) {
  Rng rng(derive_seed(seed, stream::kEval));
  auto spec = craft_perturbation(target, craft_on, attack, rng);
  const auto idx = sample_indices(evaluate_on.size(), sample_size, derive_seed(seed, stream::kData));
  const double acc =
      perturbed_accuracy(target, evaluate_on, spec, std::span<const Index>(idx), derive_seed(seed, stream::kPlacement));
  return {acc, std::move(spec)};
}

/// Clean and fresh-attack rows for each split; the attack is crafted once on `splits.front()`.
template <typename Scalar, typename Target>
std::vector<MetricsRow> evaluate_splits(const Target& target, int iteration,
                                        const std::vector<const Dataset<Scalar>*>& splits, const EvalConfig& cfg,
                                        std::uint64_t seed) {
  if (splits.empty()) throw std::invalid_argument("evaluate: no splits");
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(seed, stream::kEval));
  const auto spec = std::make_shared<const PerturbationSpec<Scalar>>(
      craft_perturbation(target, *splits.front(), cfg.attack, rng));
  std::vector<MetricsRow> rows;
  for (const auto* ds : splits) {
    const auto idx = sample_indices(ds->size(), cfg.sample_size, derive_seed(seed, stream::kData));
    const std::span<const Index> s(idx);
    MetricsRow row;
    row.iteration = iteration;
    row.split = ds->split;
    row.clean_acc = view_accuracy(target, PerturbedView<Scalar>(*ds), s, cfg.chunk);
    row.adv_acc = view_accuracy(target, PerturbedView<Scalar>(*ds, spec, derive_seed(seed, stream::kPlacement)), s,
                                cfg.chunk);
    row.attack = kind_name(cfg.attack.kind);
    if (cfg.record_seconds)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
  }
  return rows;
}

/// Checkpoint files (`*.fplyckpt`) in `dir`, ordered by stored iteration then name.
std::vector<std::string> list_checkpoints(const std::string& dir);

/// One row per checkpoint per split with a perturbation crafted fresh for each checkpoint.
template <typename Scalar>
std::vector<MetricsRow> evaluate_checkpoint_series(const std::string& dir,
                                                   const std::vector<const Dataset<Scalar>*>& splits,
                                                   const EvalConfig& cfg, std::uint64_t seed) {
  const auto files = list_checkpoints(dir);
  if (files.empty()) throw IoError("no checkpoints in '" + dir + "'");
  std::vector<MetricsRow> rows;
  for (const auto& f : files) {
    const auto ck = load_checkpoint<Scalar>(f);
    auto part = evaluate_splits(ck.params, ck.iteration, splits, cfg,
                                derive_seed(seed, static_cast<std::uint64_t>(ck.iteration)));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

}  // namespace fictplay

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fictplay/attack.hpp"
#include "test_util.hpp"

using namespace fictplay;
using test::random_tensor;

namespace {

Params<double> small_model(std::uint64_t seed) {
  return build_model<double>(ModelConfig::parse("input=3x8x8 classes=3 layers=conv(4,3,2,same);bn;relu;dense(3)"), seed);
}

Params<double> linear_model(std::uint64_t seed) {
  auto p = build_model<double>(ModelConfig::parse("input=1x2x2 classes=3 layers=dense(3)"), seed);
  std::mt19937_64 rng(seed);
  p.weights["dense0.bias"] = random_tensor({3}, rng);
  return p;
}

double mean_loss(const Params<double>& p, const Tensor<double>& x, const std::vector<int>& y) {
  Tape<double> tape;
  return softmax_cross_entropy(forward(tape, p, tape.constant(x)), std::span<const int>(y)).value().item();
}

}  // namespace

TEST(Universal, ProjectionClampsCoordinatewise) {
  Tensor<double> xi({1, 1, 3}, {-0.5, 0.05, 0.3});
  EXPECT_EQ(project_linf(xi, 0.1), Tensor<double>({1, 1, 3}, {-0.1, 0.05, 0.1}));
  EXPECT_THROW(project_linf(xi, 0.0), std::invalid_argument);
}

TEST(Universal, StepAveragesPerSampleSignsOfTheLinearModelGradient) {
  // For logits = xW + b the input gradient of CE is W(p − onehot).
  const auto p = linear_model(2);
  const Tensor<double> x({2, 1, 2, 2}, {0.3, 0.4, 0.5, 0.6, 0.2, 0.7, 0.4, 0.5});
  const std::vector<int> y{0, 2};
  const auto& W = p.weights.at("dense0.weight");
  const auto& b = p.weights.at("dense0.bias");
  Eigen::ArrayXd signs = Eigen::ArrayXd::Zero(4);
  for (Index n = 0; n < 2; ++n) {
    Eigen::ArrayXd z(3);
    for (Index k = 0; k < 3; ++k) {
      z[k] = b[k];
      for (Index i = 0; i < 4; ++i) z[k] += x[n * 4 + i] * W.at(i, k);
    }
    Eigen::ArrayXd prob = (z - z.maxCoeff()).exp();
    prob /= prob.sum();
    prob[y[static_cast<std::size_t>(n)]] -= 1;
    for (Index i = 0; i < 4; ++i) {
      double g = 0;
      for (Index k = 0; k < 3; ++k) g += W.at(i, k) * prob[k];
      signs[i] += g > 0 ? 1 : (g < 0 ? -1 : 0);
    }
  }
  const double alpha = 0.01, eps = 0.2;
  const auto xi0 = Tensor<double>::zeros({1, 2, 2});
  const auto xi1 = universal_step(xi0, p, x, y, alpha, eps);
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(xi1[i], alpha / 2 * signs[i], 1e-15);
}

TEST(Universal, BudgetHoldsAfterEveryStep) {
  const auto p = small_model(1);
  const auto ds = make_synthetic<double>(3, 6, 8, 0);
  std::mt19937_64 rng(5);
  Rng batch_rng(6);
  BatchSampler sampler(ds.size(), 7);
  for (int trial = 0; trial < 200; ++trial) {
    const double eps = std::uniform_real_distribution<double>(0.001, 0.2)(rng);
    const double alpha = std::uniform_real_distribution<double>(0.0001, 0.5)(rng);
    Tensor<double> xi = project_linf(random_tensor(ds.image_shape(), rng, -0.3, 0.3), eps);
    auto batch = sample_batch(ds, 4, sampler);
    xi = universal_step(xi, p, batch.images, batch.labels, alpha, eps);
    EXPECT_LE(xi.max_abs(), eps);
  }
}

TEST(Universal, LearnedPerturbationRaisesLoss) {
  const auto p = small_model(3);
  const auto ds = make_synthetic<double>(3, 10, 8, 0);
  Rng rng(1);
  UniversalAttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.alpha = 0.01;
  cfg.iterations = 30;
  cfg.batch_size = 10;
  const auto spec = learn_universal(p, ds, cfg, rng);
  EXPECT_LE(spec.xi().max_abs(), 0.1);
  EXPECT_GT(mean_loss(p, apply_universal(ds.images, spec.xi(), 0.1), ds.labels), mean_loss(p, ds.images, ds.labels));
}

TEST(Universal, ZeroIterationsGiveZeroPerturbation) {
  const auto ds = make_synthetic<double>(3, 2, 8, 0);
  UniversalAttackConfig cfg;
  cfg.iterations = 0;
  Rng rng(1);
  EXPECT_TRUE(learn_universal(small_model(1), ds, cfg, rng).is_zero_universal());
}

TEST(Patch, ObjectiveMixesSourceAndTargetTerms) {
  Tape<double> tape;
  auto z = tape.leaf(Tensor<double>({2, 3}, {0.1, 0.5, -0.2, 1.0, 0.0, 0.3}));
  const std::vector<int> y{0, 1}, t{2, 2};
  const double ce_y = softmax_cross_entropy<double>(z, y).value().item();
  const double ce_t = softmax_cross_entropy<double>(z, t).value().item();
  EXPECT_DOUBLE_EQ(patch_objective<double>(z, y, t, 0.0).value().item(), ce_y);
  EXPECT_DOUBLE_EQ(patch_objective<double>(z, y, t, 1.0).value().item(), -ce_t);
  EXPECT_NEAR(patch_objective<double>(z, y, t, 0.25).value().item(), 0.75 * ce_y - 0.25 * ce_t, 1e-15);
}

TEST(Patch, StepsKeepPixelsInRangeAndOutsideMaskFixed) {
  const auto p = small_model(2);
  const auto ds = make_synthetic<double>(3, 6, 8, 0);
  std::mt19937_64 rng(8);
  Rng prng(9);
  BatchSampler sampler(ds.size(), 1);
  PatchAttackConfig cfg;
  cfg.side = 6;
  cfg.placements = 2;
  cfg.target_class = 1;
  for (int trial = 0; trial < 100; ++trial) {
    cfg.alpha = std::uniform_real_distribution<double>(0.1, 50)(rng);
    cfg.lambda = std::uniform_real_distribution<double>(0, 1)(rng);
    auto spec = PerturbationSpec<double>::patch(random_tensor({3, 6, 6}, rng, 0, 1), 0.5, 0.3);
    auto batch = sample_batch(ds, 3, sampler);
    const auto next = patch_step(spec, p, batch.images, batch.labels, cfg, prng);
    EXPECT_GE(next.values().minCoeff(), 0.0);
    EXPECT_LE(next.values().maxCoeff(), 1.0);
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < 36; ++i)
        if (spec.mask()[i] == 0) {
          EXPECT_EQ(next[c * 36 + i], spec.xi()[c * 36 + i]);
        }
  }
}

TEST(Patch, TargetedAscentRaisesTargetProbability) {
  const auto p = small_model(4);
  const auto ds = make_synthetic<double>(3, 8, 8, 0);
  Rng rng(2);
  PatchAttackConfig cfg;
  cfg.side = 8;
  cfg.chi = 0.75;
  cfg.iterations = 20;
  cfg.batch_size = 8;
  cfg.placements = 2;
  cfg.alpha = 2.0;
  cfg.target_class = 2;
  cfg.lambda = 1.0;
  const auto spec = learn_patch(p, ds, cfg, rng);
  auto target_mass = [&](const PerturbationSpec<double>& s) {
    Rng place(5);
    double mass = 0;
    for (Index i = 0; i < ds.size(); ++i) {
      const std::vector<Index> idx{i};
      const auto img = apply_patch(ds.gather(idx).reshaped(ds.image_shape()), s.xi(),
                                   sample_placement(place, 8, 8, s.chi(), s.theta_max()));
      mass += softmax_rows(logits(p, img.reshaped({1, 3, 8, 8}))).at(0, 2);
    }
    return mass;
  };
  EXPECT_GT(target_mass(spec), target_mass(PerturbationSpec<double>::gray_patch(3, 8, cfg.chi, cfg.theta_max)));
}

TEST(Patch, ConfigRejectsInconsistentSettings) {
  PatchAttackConfig cfg;
  cfg.lambda = 0.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.target_class = 1;
  EXPECT_NO_THROW(cfg.validate());
  cfg.chi = 1.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Pgd, StaysInsideBallAndPixelRange) {
  const auto p = small_model(5);
  const auto ds = make_synthetic<double>(3, 4, 8, 0);
  Rng rng(3);
  PgdConfig cfg;
  cfg.epsilon = 0.05;
  cfg.step_size = 0.02;
  cfg.steps = 5;
  const auto adv = pgd_per_sample(p, ds.images, ds.labels, cfg, rng);
  EXPECT_LE((adv.values() - ds.images.values()).abs().maxCoeff(), 0.05 + 1e-15);
  EXPECT_GE(adv.values().minCoeff(), 0.0);
  EXPECT_LE(adv.values().maxCoeff(), 1.0);
  EXPECT_GT(mean_loss(p, adv, ds.labels), mean_loss(p, ds.images, ds.labels));
}

TEST(Pgd, ZeroStepsWithoutInitIsIdentity) {
  const auto ds = make_synthetic<double>(3, 2, 8, 0);
  PgdConfig cfg;
  cfg.steps = 0;
  cfg.random_init = false;
  Rng rng(1);
  EXPECT_EQ(pgd_per_sample(small_model(1), ds.images, ds.labels, cfg, rng), ds.images);
}

TEST(Container, RoundTripsBothKinds) {
  const auto dir = test::scratch_dir("pert");
  std::mt19937_64 rng(3);
  const auto u = PerturbationSpec<float>::universal(random_tensor({3, 4, 4}, rng, -0.05, 0.05).cast<float>(), 0.05);
  save_perturbation(dir + "/u.fplypert", u);
  const auto u2 = load_perturbation<float>(dir + "/u.fplypert");
  EXPECT_EQ(u2.kind(), PerturbationKind::Universal);
  EXPECT_EQ(u2.xi(), u.xi());
  EXPECT_FLOAT_EQ(static_cast<float>(u2.epsilon()), 0.05f);

  const auto pt = PerturbationSpec<float>::patch(random_tensor({3, 5, 5}, rng, 0, 1).cast<float>(), 0.4, 0.349);
  save_perturbation(dir + "/p.fplypert", pt);
  const auto p2 = load_perturbation<float>(dir + "/p.fplypert");
  EXPECT_EQ(p2.kind(), PerturbationKind::Patch);
  EXPECT_EQ(p2.xi(), pt.xi());
  EXPECT_FLOAT_EQ(static_cast<float>(p2.chi()), 0.4f);
  EXPECT_FLOAT_EQ(static_cast<float>(p2.theta_max()), 0.349f);
}

TEST(Container, CorruptFilesAreIoErrors) {
  const auto dir = test::scratch_dir("pert_bad");
  save_perturbation(dir + "/u.fplypert", PerturbationSpec<float>::zero_universal({3, 4, 4}, 0.1));
  std::filesystem::copy_file(dir + "/u.fplypert", dir + "/short.fplypert");
  std::filesystem::resize_file(dir + "/short.fplypert", std::filesystem::file_size(dir + "/u.fplypert") - 1);
  EXPECT_THROW(load_perturbation<float>(dir + "/short.fplypert"), IoError);
  {
    std::ofstream os(dir + "/junk.fplypert", std::ios::binary);
    os << "FPLYCKPT.............";
  }
  EXPECT_THROW(load_perturbation<float>(dir + "/junk.fplypert"), IoError);
}

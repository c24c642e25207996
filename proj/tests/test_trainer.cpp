#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "gsn/chain.hpp"
#include "gsn/oracle.hpp"
#include "gsn/trainer.hpp"

using gsn::GsnModel;
using gsn::HeadKind;
using gsn::LayerNoise;
using gsn::RngStream;
using gsn::Tensor2;
using gsn::TrainConfig;
using gsn::Vector;
using gsn::Walkback;

namespace {

Tensor2 random_binary_data(std::size_t n, std::size_t d, RngStream& rng) {
  Tensor2 x(n, d);
  for (double& v : x.data()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return x;
}

GsnModel small_model(std::size_t d, std::size_t h, std::size_t alpha_steps, std::uint64_t seed) {
  RngStream rng(seed);
  return GsnModel::initialized({d, h}, HeadKind::Bernoulli, {LayerNoise{}}, alpha_steps, rng);
}

double p_one_given(const GsnModel& m, double xt) {
  RngStream unused(0);
  const auto enc = gsn::encode_step(m, gsn::ChainState::zeros(m), Vector{xt}, unused);
  return gsn::mean(gsn::decode_hidden(m, enc.h[0]), 0, m.alphas())[0];
}

}  // namespace

TEST(Walkback, ParseAndPrint) {
  EXPECT_EQ(Walkback::parse("none"), Walkback::none());
  EXPECT_EQ(Walkback::parse("geom:0.5"), Walkback::geometric(0.5));
  EXPECT_EQ(Walkback::parse("fixed:4"), Walkback::fixed(4));
  EXPECT_EQ(Walkback::parse("fixed:4").to_string(), "fixed:4");
  EXPECT_EQ(Walkback::parse(Walkback::geometric(0.25).to_string()), Walkback::geometric(0.25));
  EXPECT_THROW(Walkback::parse("geom"), gsn::ParameterError);
  EXPECT_THROW(Walkback::parse("geom:x"), gsn::ParameterError);
  EXPECT_THROW(Walkback::parse("walk:2"), gsn::ParameterError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), gsn::ParameterError);
  c = {};
  c.walkback = Walkback::geometric(0.0);
  EXPECT_THROW(c.validate(), gsn::ParameterError);
  c = {};
  c.walkback = Walkback::fixed(0);
  EXPECT_THROW(c.validate(), gsn::ParameterError);
  c = {};
  c.walkback = Walkback::geometric(0.5);
  EXPECT_EQ(c.alpha_steps(), 20u);
}

TEST(WalkbackRollout, CountsPairs) {
  RngStream rng(1);
  const GsnModel m = small_model(5, 4, 3, 2);
  const Vector x0{1, 0, 1, 1, 0};
  const auto one = gsn::walkback_rollout(m, gsn::SaltPepper{0.5}, x0, 1, true, rng);
  ASSERT_EQ(one.size(), 1u);
  const auto three = gsn::walkback_rollout(m, gsn::SaltPepper{0.5}, x0, 3, true, rng);
  ASSERT_EQ(three.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(three[j].target, x0);
    EXPECT_EQ(three[j].step, j);
  }
  EXPECT_EQ(gsn::walkback_rollout(m, gsn::SaltPepper{0.5}, x0, 3, false, rng).size(), 1u);
}

TEST(WalkbackRollout, FirstPairIsPlainCorruption) {
  const GsnModel m = small_model(5, 4, 3, 2);
  const Vector x0{1, 0, 1, 1, 0};
  RngStream a(3), b(3);
  const auto pairs = gsn::walkback_rollout(m, gsn::SaltPepper{0.5}, x0, 1, true, a);
  EXPECT_EQ(pairs[0].x_tilde, gsn::corrupt(gsn::SaltPepper{0.5}, x0, b).values);
}

TEST(WalkbackRollout, TabularTwoStepMatchesExactComposition) {
  RngStream rng(4);
  const Tensor2 c = gsn::random_column_stochastic(3, 3, rng);
  const Tensor2 q = gsn::random_column_stochastic(3, 3, rng);
  const gsn::TabularDae dae(c, q);
  const auto exact = gsn::walkback_corruptions(c, q, 2);
  const std::size_t n = 1000000;
  for (std::size_t x0 = 0; x0 < 3; ++x0) {
    Vector hist(3, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto pairs = gsn::walkback_rollout<std::size_t>(
          [&](std::size_t x, RngStream& r) { return dae.corrupt_state(x, r); },
          [&](std::size_t xt, std::size_t, RngStream& r) { return dae.reconstruct_state(xt, r); }, x0, 2,
          false, rng);
      hist[pairs[0].x_tilde] += 1.0 / static_cast<double>(n);
    }
    EXPECT_LT(gsn::total_variation(hist, exact[1].column(x0)), 0.005);
  }
}

TEST(SgdUpdate, PlainStepAndMomentumRecurrence) {
  GsnModel m({2, 1}, HeadKind::Bernoulli, {LayerNoise{}});
  gsn::ParamSet g = m.params().zeros_like();
  g.weights[0](0, 0) = 1.0;
  g.biases[0][1] = -2.0;
  auto v = m.params().zeros_like();
  gsn::sgd_update(m.params(), g, v, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(m.params().weights[0](0, 0), -0.1);
  EXPECT_DOUBLE_EQ(m.params().biases[0][1], 0.2);

  GsnModel m2({2, 1}, HeadKind::Bernoulli, {LayerNoise{}});
  auto v2 = m2.params().zeros_like();
  gsn::sgd_update(m2.params(), g, v2, 1.0, 0.5);
  gsn::sgd_update(m2.params(), g, v2, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(m2.params().weights[0](0, 0), -2.5);
  EXPECT_DOUBLE_EQ(m2.params().biases[0][1], 5.0);

  const auto zero = m2.params().zeros_like();
  const double before = v2.weights[0](0, 0);
  gsn::sgd_update(m2.params(), zero, v2, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(v2.weights[0](0, 0), 0.5 * before);
}

TEST(Trainer, ZeroLearningRateLeavesParametersUnchanged) {
  RngStream rng(5);
  const Tensor2 data = random_binary_data(20, 6, rng);
  GsnModel m = small_model(6, 5, 1, 6);
  const GsnModel before = m;
  TrainConfig cfg;
  cfg.lr = 0.0;
  gsn::Trainer t(m, gsn::SaltPepper{0.5}, cfg);
  const auto rep = t.train_epoch(data, rng);
  EXPECT_EQ(m, before);
  EXPECT_GT(rep.mean_nll, 0.0);
  EXPECT_TRUE(std::isfinite(rep.mean_nll));
}

TEST(Trainer, SingleStepWalkbackEqualsPlainDenoising) {
  RngStream drng(7);
  const Tensor2 data = random_binary_data(30, 6, drng);
  GsnModel a = small_model(6, 5, 1, 8), b = small_model(6, 5, 1, 8);
  TrainConfig ca, cb;
  ca.walkback = Walkback::none();
  cb.walkback = Walkback::fixed(1);
  cb.collect_intermediate = false;
  gsn::Trainer ta(a, gsn::SaltPepper{0.5}, ca), tb(b, gsn::SaltPepper{0.5}, cb);
  RngStream ra(9), rb(9);
  for (int e = 0; e < 3; ++e) EXPECT_EQ(ta.train_epoch(data, ra).mean_nll, tb.train_epoch(data, rb).mean_nll);
  EXPECT_EQ(a, b);
}

TEST(Trainer, MemorizesSingleExample) {
  RngStream rng(10);
  const Tensor2 data(1, 8, Vector{1, 0, 0, 1, 1, 0, 1, 0});
  GsnModel m = small_model(8, 10, 1, 11);
  TrainConfig cfg;
  cfg.walkback = Walkback::fixed(1);
  cfg.lr_decay = 1.0;
  gsn::Trainer t(m, gsn::SaltPepper{0.0}, cfg);
  double last = 0.0;
  for (int e = 0; e < 500; ++e) last = t.train_epoch(data, rng).mean_nll;
  EXPECT_LT(last, 0.01 * 8);
}

TEST(Trainer, LearningRateDecays) {
  RngStream rng(12);
  const Tensor2 data = random_binary_data(4, 3, rng);
  GsnModel m = small_model(3, 2, 1, 13);
  TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.lr_decay = 0.5;
  gsn::Trainer t(m, gsn::SaltPepper{0.5}, cfg);
  EXPECT_DOUBLE_EQ(t.train_epoch(data, rng).lr_used, 0.1);
  EXPECT_DOUBLE_EQ(t.train_epoch(data, rng).lr_used, 0.05);
  EXPECT_EQ(t.epochs_done(), 2u);
}

TEST(Trainer, DataShapeErrors) {
  RngStream rng(14);
  GsnModel m = small_model(3, 2, 1, 15);
  gsn::Trainer t(m, gsn::SaltPepper{0.5}, TrainConfig{});
  EXPECT_THROW(t.train_epoch(Tensor2(0, 3), rng), gsn::ParameterError);
  EXPECT_THROW(t.train_epoch(Tensor2(2, 4), rng), gsn::ShapeError);
}

TEST(Trainer, GeometricStepsAreTruncated) {
  GsnModel m = small_model(3, 2, 20, 16);
  TrainConfig cfg;
  cfg.walkback = Walkback::geometric(0.01);
  cfg.k_max = 5;
  gsn::Trainer t(m, gsn::SaltPepper{0.5}, cfg);
  RngStream rng(17);
  for (int i = 0; i < 1000; ++i) EXPECT_LE(t.draw_steps(rng), 5u);
}

TEST(Trainer, PersistentHiddenStateTraining) {
  RngStream rng(18);
  const Tensor2 data = random_binary_data(10, 4, rng);
  RngStream init(19);
  GsnModel m = GsnModel::initialized({4, 5, 3}, HeadKind::Bernoulli, gsn::noise_above_first(2, 1.0), 3, init);
  TrainConfig cfg;
  cfg.walkback = Walkback::fixed(3);
  cfg.h0_policy = gsn::H0Policy::Persist;
  gsn::Trainer t(m, gsn::SaltPepper{0.5}, cfg);
  for (int e = 0; e < 3; ++e) EXPECT_TRUE(std::isfinite(t.train_epoch(data, rng).mean_nll));
}

TEST(Trainer, TwoStateModelLearnsBayesPosterior) {
  // One visible unit with P(X=1) = 0.3, salt-and-pepper 0.5.
  const double p1 = 0.3;
  Tensor2 data(1000, 1);
  for (std::size_t i = 0; i < 300; ++i) data(i, 0) = 1.0;
  const Tensor2 c{2, 2, Vector{0.75, 0.25, 0.25, 0.75}};
  const Tensor2 exact = gsn::bayes_posterior(Vector{1 - p1, p1}, c);

  GsnModel m = small_model(1, 4, 1, 20);
  TrainConfig cfg;
  cfg.lr = 0.5;
  cfg.minibatch = 50;
  cfg.lr_decay = 0.997;
  gsn::Trainer t(m, gsn::SaltPepper{0.5}, cfg);
  RngStream rng(21);
  for (int e = 0; e < 1500; ++e) t.train_epoch(data, rng);
  // SGD on fresh corruptions leaves a few 1e-3 of sampling noise.
  EXPECT_NEAR(p_one_given(m, 0.0), exact(1, 0), 5e-3);
  EXPECT_NEAR(p_one_given(m, 1.0), exact(1, 1), 5e-3);
}

TEST(Trainer, TwoStateCountingFitMatchesBayesPosterior) {
  const Tensor2 c{2, 2, Vector{0.75, 0.25, 0.25, 0.75}};
  const Tensor2 exact = gsn::bayes_posterior(Vector{0.7, 0.3}, c);
  std::vector<std::size_t> data(1000, 0);
  for (std::size_t i = 0; i < 300; ++i) data[i] = 1;
  RngStream rng(22);
  const gsn::TabularDae dae = gsn::fit_tabular_dae(data, c, 10000, rng);
  for (std::size_t x = 0; x < 2; ++x)
    for (std::size_t xt = 0; xt < 2; ++xt) EXPECT_NEAR(dae.reconstruction()(x, xt), exact(x, xt), 1e-3);
}

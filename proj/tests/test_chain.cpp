#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "gsn/chain.hpp"
#include "gsn/oracle.hpp"
#include "gsn/parzen.hpp"

using gsn::ChainRun;
using gsn::Clamp;
using gsn::GsnModel;
using gsn::RngStream;
using gsn::Tensor2;
using gsn::Vector;

namespace {

GsnModel trained_like_model(std::uint64_t seed) {
  RngStream rng(seed);
  GsnModel m = GsnModel::initialized({8, 6}, gsn::HeadKind::Bernoulli, {gsn::LayerNoise{}}, 1, rng);
  for (double& v : m.params().weights[0].data()) v *= 3.0;
  return m;
}

}  // namespace

TEST(RunChain, ZeroSamplesGivesEmptyMatrices) {
  const GsnModel m = trained_like_model(1);
  ChainRun run;
  run.n_samples = 0;
  const auto out = gsn::run_chain(m, gsn::SaltPepper{0.5}, run);
  EXPECT_EQ(out.samples.rows(), 0u);
  EXPECT_EQ(out.samples.cols(), 8u);
  EXPECT_EQ(out.means.rows(), 0u);
}

TEST(RunChain, ThinZeroRejected) {
  const GsnModel m = trained_like_model(1);
  ChainRun run;
  run.n_samples = 1;
  run.thin = 0;
  EXPECT_THROW(gsn::run_chain(m, gsn::SaltPepper{0.5}, run), gsn::ParameterError);
}

TEST(RunChain, FixedSeedIsDeterministic) {
  const GsnModel m = trained_like_model(2);
  ChainRun run;
  run.burn_in = 10;
  run.n_samples = 50;
  run.thin = 2;
  run.seed = 7;
  const auto a = gsn::run_chain(m, gsn::SaltPepper{0.5}, run);
  const auto b = gsn::run_chain(m, gsn::SaltPepper{0.5}, run);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.means, b.means);
  run.seed = 8;
  EXPECT_NE(gsn::run_chain(m, gsn::SaltPepper{0.5}, run).samples, a.samples);
}

TEST(RunChain, ParallelChainsMatchSequentialRuns) {
  const GsnModel m = trained_like_model(3);
  const gsn::GsnSampler sampler(m, gsn::SaltPepper{0.5});
  std::vector<ChainRun> runs(3);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    runs[i].burn_in = 5;
    runs[i].n_samples = 20;
    runs[i].seed = 100 + i;
  }
  const auto par = gsn::run_chains_parallel(sampler, runs);
  for (std::size_t i = 0; i < runs.size(); ++i) EXPECT_EQ(par[i].samples, gsn::run_chain(sampler, runs[i]).samples);
}

TEST(RunChain, TabularBayesChainMatchesStationary) {
  RngStream rng(4);
  const gsn::FiniteSystem sys = gsn::random_finite_system(3, rng);
  const gsn::TabularDae dae(sys.c, gsn::bayes_posterior(sys));
  const Vector pi = gsn::stationary(gsn::dae_transition(sys, gsn::bayes_posterior(sys)));
  ChainRun run;
  run.burn_in = 100;
  run.n_samples = 1000000;
  run.seed = 5;
  const auto out = gsn::run_chain(dae, run);
  EXPECT_LT(gsn::histogram_tv(gsn::index_column(out.samples), pi), 0.005);
}

TEST(RunChain, TabularStationaryIsFixedByOneStep) {
  RngStream rng(6);
  const gsn::FiniteSystem sys = gsn::random_finite_system(5, rng);
  const auto k = gsn::dae_transition(sys, gsn::bayes_posterior(sys));
  EXPECT_LT(gsn::stationarity_residual(k, gsn::stationary(k)), 1e-12);
}

TEST(Clamp, Validation) {
  EXPECT_THROW(gsn::validate_clamp(Clamp{{0, 1}, {1.0}}, 3), gsn::ParameterError);
  EXPECT_THROW(gsn::validate_clamp(Clamp{{1, 1}, {1.0, 0.0}}, 3), gsn::ParameterError);
  EXPECT_THROW(gsn::validate_clamp(Clamp{{3}, {1.0}}, 3), gsn::RangeError);
  EXPECT_NO_THROW(gsn::validate_clamp(Clamp{{2, 0}, {1.0, 0.0}}, 3));
  const GsnModel m = trained_like_model(7);
  ChainRun run;
  run.n_samples = 1;
  EXPECT_THROW(gsn::run_clamped_chain(m, gsn::SaltPepper{0.5}, run), gsn::ParameterError);
  run.clamp = Clamp{};
  EXPECT_THROW(gsn::run_clamped_chain(m, gsn::SaltPepper{0.5}, run), gsn::ParameterError);
}

TEST(ClampedChain, ClampAllCoordinates) {
  const GsnModel m = trained_like_model(8);
  const Vector target{1, 0, 0, 1, 1, 1, 0, 1};
  Clamp c;
  for (std::size_t i = 0; i < 8; ++i) c.indices.push_back(i);
  c.values = target;
  ChainRun run;
  run.burn_in = 3;
  run.n_samples = 40;
  run.clamp = c;
  const auto out = gsn::run_clamped_chain(m, gsn::SaltPepper{0.5}, run);
  for (std::size_t r = 0; r < out.samples.rows(); ++r) {
    EXPECT_EQ(Vector(out.samples.row(r).begin(), out.samples.row(r).end()), target);
    EXPECT_EQ(Vector(out.means.row(r).begin(), out.means.row(r).end()), target);
  }
}

TEST(ClampedChain, ClampedCoordinatesNeverChangeOthersDo) {
  const GsnModel m = trained_like_model(9);
  ChainRun run;
  run.burn_in = 0;
  run.n_samples = 50;
  run.clamp = Clamp{{4, 5, 6, 7}, {1, 0, 1, 0}};
  const auto out = gsn::run_clamped_chain(m, gsn::SaltPepper{0.5}, run);
  for (std::size_t j = 0; j < 8; ++j) {
    std::set<double> seen;
    for (std::size_t r = 0; r < out.samples.rows(); ++r) seen.insert(out.samples(r, j));
    if (j >= 4)
      EXPECT_EQ(seen, (std::set<double>{run.clamp->values[j - 4]}));
    else
      EXPECT_GE(seen.size(), 2u);
  }
}

TEST(ClampedChain, TabularCompatibleSystemGivesConditional) {
  RngStream rng(10);
  const gsn::FiniteSystem sys = gsn::random_compatible_system(4, 3, rng);
  const gsn::TabularGsn chain(*sys.f, *sys.g);
  const Tensor2 joint = gsn::gsn_stationary_joint(*sys.f, *sys.g);
  // Clamp bit 0 = 1: states 1 and 3.
  double p1 = 0.0, p3 = 0.0;
  for (std::size_t h = 0; h < 3; ++h) {
    p1 += joint(1, h);
    p3 += joint(3, h);
  }
  const Vector target{p1 / (p1 + p3), p3 / (p1 + p3)};
  ChainRun run;
  run.burn_in = 100;
  run.n_samples = 1000000;
  run.clamp = Clamp{{0}, {1.0}};
  run.seed = 11;
  const auto out = gsn::run_clamped_chain(chain, run);
  Vector bit1(2, 0.0);
  for (std::size_t r = 0; r < out.samples.rows(); ++r) {
    ASSERT_EQ(out.samples(r, 0), 1.0);
    bit1[static_cast<std::size_t>(out.samples(r, 1))] += 1.0 / static_cast<double>(out.samples.rows());
  }
  EXPECT_LT(gsn::total_variation(bit1, target), 0.005);
}

TEST(TabularDae, FitByCountingRecoversDistribution) {
  RngStream rng(12);
  const Vector p = gsn::random_simplex(10, rng);
  const Tensor2 c = gsn::random_column_stochastic(10, 10, rng);
  std::vector<std::size_t> data(5000);
  for (auto& x : data) x = rng.categorical(p);
  const gsn::TabularDae dae = gsn::fit_tabular_dae(data, c, 20, rng);
  ChainRun run;
  run.burn_in = 100;
  run.n_samples = 5000;
  run.thin = 5;
  run.seed = 13;
  EXPECT_LT(gsn::histogram_tv(gsn::index_column(gsn::run_chain(dae, run).samples), p), 0.05);
}

TEST(TabularDae, RejectsInvalidTables) {
  EXPECT_THROW(gsn::TabularDae(Tensor2::identity(3), Tensor2::identity(2)), gsn::ShapeError);
  EXPECT_THROW(gsn::TabularDae(Tensor2(2, 2, 0.3), Tensor2::identity(2)), gsn::DomainError);
  RngStream rng(14);
  const std::vector<std::size_t> bad{0, 5};
  EXPECT_THROW(gsn::fit_tabular_dae(bad, Tensor2::identity(3), 1, rng), gsn::RangeError);
}

TEST(Bits, RoundTrip) {
  EXPECT_EQ(gsn::bits_for(10), 4u);
  EXPECT_EQ(gsn::bits_for(2), 1u);
  EXPECT_EQ(gsn::bits_for(1), 1u);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(gsn::bits_to_index(gsn::index_to_bits(i, 4)), i);
  EXPECT_EQ(gsn::index_to_bits(6, 3), (Vector{0, 1, 1}));
}

TEST(DependencyNet, SingleVariableIsIid) {
  const std::vector<gsn::TableConditional> conds{{0, Vector{0.3}}};
  ChainRun run;
  run.burn_in = 0;
  run.n_samples = 1000000;
  run.seed = 15;
  const auto out = gsn::run_depnet_chain(conds, run);
  EXPECT_LT(gsn::histogram_tv(out.samples, Vector{0.7, 0.3}), 0.005);
}

TEST(DependencyNet, ConsistentConditionalsRecoverJoint) {
  const Vector joint{0.1, 0.2, 0.3, 0.4};
  ChainRun run;
  run.burn_in = 100;
  run.n_samples = 1000000;
  run.seed = 16;
  const auto out = gsn::run_depnet_chain(gsn::conditionals_from_joint(joint, 2), run);
  EXPECT_LT(gsn::histogram_tv(gsn::index_column(out.samples), joint), 0.005);
}

TEST(DependencyNet, InconsistentConditionalsMatchScanStationary) {
  // P(x0=1|x1) and P(x1=1|x0) chosen so that no joint has both.
  const std::vector<gsn::TableConditional> conds{{0, Vector{0.9, 0.2}}, {1, Vector{0.1, 0.8}}};
  const Vector pi = gsn::stationary(gsn::depnet_transition(conds));
  ChainRun run;
  run.burn_in = 100;
  run.n_samples = 1000000;
  run.seed = 17;
  const auto out = gsn::run_depnet_chain(conds, run);
  EXPECT_LT(gsn::histogram_tv(gsn::index_column(out.samples), pi), 0.005);
}

TEST(DependencyNet, ClampedVariableStaysFixed) {
  const std::vector<gsn::TableConditional> conds{{0, Vector{0.9, 0.2}}, {1, Vector{0.1, 0.8}}};
  ChainRun run;
  run.burn_in = 10;
  run.n_samples = 1000;
  run.clamp = Clamp{{1}, {1.0}};
  const auto out = gsn::run_depnet_chain(conds, run);
  double ones = 0.0;
  for (std::size_t r = 0; r < out.samples.rows(); ++r) {
    ASSERT_EQ(out.samples(r, 1), 1.0);
    ones += out.samples(r, 0);
  }
  EXPECT_NEAR(ones / 1000.0, 0.2, 0.05);
}

TEST(TableConditional, ContextIndexSkipsOwnVariable) {
  EXPECT_EQ(gsn::TableConditional::context_index(Vector{1, 1, 0}, 1), 1u);
  EXPECT_EQ(gsn::TableConditional::context_index(Vector{0, 1, 1}, 0), 3u);
  const gsn::TableConditional c{0, Vector{0.5}};
  EXPECT_THROW(c(Vector{0, 1}), gsn::RangeError);
}

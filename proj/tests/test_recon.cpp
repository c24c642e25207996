#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "gsn/recon.hpp"

using gsn::ReconParams;
using gsn::RngStream;
using gsn::ScalingFactors;
using gsn::Vector;

namespace {

Vector bits(std::size_t index, std::size_t d) {
  Vector x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = static_cast<double>((index >> i) & 1u);
  return x;
}

ReconParams random_params(gsn::HeadKind kind, std::size_t d, RngStream& rng) {
  Vector a(d), ls(d);
  for (double& v : a) v = 2.0 * rng.normal();
  for (double& v : ls) v = 0.5 * rng.normal();
  return kind == gsn::HeadKind::Bernoulli ? ReconParams::bernoulli(a) : ReconParams::gaussian(a, ls);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)}); }

}  // namespace

TEST(Nll, BernoulliZeroLogits) {
  for (std::size_t d : {1u, 3u, 10u}) {
    const auto r = gsn::nll(ReconParams::bernoulli(Vector(d, 0.0)), 0, ScalingFactors(), bits(5, d));
    EXPECT_NEAR(r.loss, static_cast<double>(d) * std::log(2.0), 1e-12);
  }
}

TEST(Nll, GaussianAtMean) {
  const std::size_t d = 6;
  const Vector mu{0.1, -2, 3, 0, 1, 1};
  const auto r = gsn::nll(ReconParams::gaussian(mu, Vector(d, 0.0)), 0, ScalingFactors(), mu);
  EXPECT_NEAR(r.loss, 0.5 * d * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(Nll, NonBinaryTargetThrows) {
  EXPECT_THROW(gsn::nll(ReconParams::bernoulli(Vector{0.0}), 0, ScalingFactors(), Vector{0.5}),
               gsn::DomainError);
  EXPECT_THROW(gsn::nll(ReconParams::bernoulli(Vector{0.0}), 0, ScalingFactors(), Vector{1, 0}),
               gsn::ShapeError);
}

TEST(Nll, ClippedProbabilitiesStayFinite) {
  const auto r = gsn::nll(ReconParams::bernoulli(Vector{800.0, -800.0}), 0, ScalingFactors(), Vector{0, 1});
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_NEAR(r.loss, -2.0 * std::log(1e-7), 1e-6);
}

TEST(Nll, ProperDistributionOverBinarySpace) {
  RngStream rng(1);
  for (std::size_t d = 1; d <= 4; ++d) {
    const ReconParams p = random_params(gsn::HeadKind::Bernoulli, d, rng);
    const ScalingFactors alphas(Vector{0.3, -0.2});
    for (std::size_t step : {0u, 1u, 5u}) {
      double s = 0.0;
      for (std::size_t t = 0; t < (std::size_t{1} << d); ++t) s += std::exp(-gsn::nll(p, step, alphas, bits(t, d)).loss);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Nll, GradientsMatchFiniteDifferences) {
  RngStream rng(2);
  const double h = 1e-6;
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto kind = inst % 2 == 0 ? gsn::HeadKind::Bernoulli : gsn::HeadKind::Gaussian;
    const std::size_t d = 1 + rng.below(6);
    ReconParams p = random_params(kind, d, rng);
    ScalingFactors alphas(Vector{0.5 * rng.normal(), 0.5 * rng.normal()});
    const std::size_t step = rng.below(3);
    Vector target(d);
    for (double& v : target) v = kind == gsn::HeadKind::Bernoulli ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : rng.normal();
    const auto r = gsn::nll(p, step, alphas, target);
    auto loss = [&] { return gsn::nll(p, step, alphas, target).loss; };
    for (std::size_t i = 0; i < d; ++i) {
      const double keep = p.a[i];
      p.a[i] = keep + h;
      const double lp = loss();
      p.a[i] = keep - h;
      const double lm = loss();
      p.a[i] = keep;
      worst = std::max(worst, rel_err(r.grads.d_a[i], (lp - lm) / (2 * h)));
      if (kind == gsn::HeadKind::Gaussian) {
        const double ks = p.log_sigma[i];
        p.log_sigma[i] = ks + h;
        const double sp = loss();
        p.log_sigma[i] = ks - h;
        const double sm = loss();
        p.log_sigma[i] = ks;
        worst = std::max(worst, rel_err(r.grads.d_log_sigma[i], (sp - sm) / (2 * h)));
      }
    }
    double& la = alphas.log_alpha()[r.grads.alpha_index];
    const double keep = la;
    la = keep + h;
    const double lp = loss();
    la = keep - h;
    const double lm = loss();
    la = keep;
    worst = std::max(worst, rel_err(r.grads.d_log_alpha, (lp - lm) / (2 * h)));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Sample, SaturatedLogitGivesOnes) {
  RngStream rng(3);
  const Vector x = gsn::sample(ReconParams::bernoulli(Vector(1000, 30.0)), 0, ScalingFactors(), rng);
  for (double v : x) EXPECT_EQ(v, 1.0);
}

TEST(Sample, GaussianFloorStaysNearMean) {
  RngStream rng(4);
  const ReconParams p = ReconParams::gaussian(Vector{1.5}, Vector{-50.0});
  for (int i = 0; i < 10000; ++i)
    ASSERT_LE(std::abs(gsn::sample(p, 0, ScalingFactors(), rng)[0] - 1.5), 5.0 * gsn::kSigmaFloor);
}

TEST(Sample, ZeroLogitMean) {
  RngStream rng(5);
  const Vector x = gsn::sample(ReconParams::bernoulli(Vector(1000000, 0.0)), 0, ScalingFactors(), rng);
  double s = 0.0;
  for (double v : x) s += v;
  EXPECT_NEAR(s / 1e6, 0.5, 0.002);
}

TEST(Mean, Examples) {
  EXPECT_EQ(gsn::mean(ReconParams::bernoulli(Vector(3, 0.0)), 0, ScalingFactors()), Vector(3, 0.5));
  const ScalingFactors two(Vector{std::log(2.0)});
  EXPECT_NEAR(gsn::mean(ReconParams::bernoulli(Vector{1.0}), 0, two)[0], 0.880797077977882, 1e-12);
  const Vector mu{0.3, -1.0};
  EXPECT_EQ(gsn::mean(ReconParams::gaussian(mu, Vector{0, 0}), 0, two), mu);
}

TEST(ScalingFactors, StepsPastEndReuseLast) {
  const ScalingFactors s(Vector{0.1, 0.2, 0.3});
  EXPECT_DOUBLE_EQ(s.alpha(7), std::exp(0.3));
  EXPECT_EQ(s.index(7), 2u);
  EXPECT_THROW(ScalingFactors(Vector{}), gsn::ParameterError);
}

TEST(Entropy, MonotoneInAlpha) {
  RngStream rng(6);
  const ReconParams b = random_params(gsn::HeadKind::Bernoulli, 5, rng);
  const ReconParams g = random_params(gsn::HeadKind::Gaussian, 5, rng);
  double prev_b = 1e300, prev_g = -1e300;
  for (double la = -2.0; la <= 2.0; la += 0.25) {
    const ScalingFactors s(Vector{la});
    const double eb = gsn::entropy(b, 0, s), eg = gsn::entropy(g, 0, s);
    EXPECT_LT(eb, prev_b);
    EXPECT_GT(eg, prev_g);
    prev_b = eb;
    prev_g = eg;
  }
}

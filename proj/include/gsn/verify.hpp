#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "gsn/oracle.hpp"
#include "gsn/rng.hpp"

namespace gsn {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

template <class Fn>
CheckResult timed_check(std::string name, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r{std::move(name), false, "", 0.0};
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace detail

/// Bayes-optimal DAE chains on random systems with n_x in [2, 10] keep p_x.
inline CheckResult check_dae_recovers_px(std::uint64_t seed, std::size_t systems = 100) {
  return detail::timed_check("dae stationary equals p_x", [&](CheckResult& r) {
    RngStream rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < systems; ++t) {
      const FiniteSystem sys = random_finite_system(2 + rng.below(9), rng);
      const Vector pi = stationary(dae_transition(sys, bayes_posterior(sys)));
      worst = std::max(worst, total_variation(pi, sys.p_x));
    }
    r.passed = worst < 1e-10;
    r.detail = std::to_string(systems) + " systems, max TV " + detail::fmt(worst);
  });
}

/// Walkback refitting on a 3-state problem reaches a fixed point whose chain
/// keeps p_x.
inline CheckResult check_walkback_fixed_point(std::uint64_t seed, double p = 0.5) {
  return detail::timed_check("walkback fixed point", [&](CheckResult& r) {
    RngStream rng(seed);
    const FiniteSystem sys = random_finite_system(3, rng);
    const WalkbackFixedPoint fp = walkback_fixed_point(sys.p_x, sys.c, p);
    const Vector pi = stationary(dae_transition(sys.c, fp.q));
    const double tv = total_variation(pi, sys.p_x);
    r.passed = fp.last_change < 1e-6 && tv < 1e-3;
    r.detail = std::to_string(fp.iterations) + " refits, last change " + detail::fmt(fp.last_change) +
               ", TV " + detail::fmt(tv);
  });
}

/// Random perturbation pairs on 2..8 states never violate the bound.
inline CheckResult check_schweitzer(std::uint64_t seed, std::size_t pairs = 1000) {
  return detail::timed_check("perturbation bound", [&](CheckResult& r) {
    RngStream rng(seed);
    std::size_t violations = 0;
    double tightest = 0.0;
    for (std::size_t t = 0; t < pairs; ++t) {
      const std::size_t n = 2 + rng.below(7);
      const Tensor2 k = random_column_stochastic(n, n, rng);
      const Tensor2 other = random_column_stochastic(n, n, rng);
      const double eps = std::pow(10.0, -6.0 * rng.uniform());
      Tensor2 kt(n, n);
      for (std::size_t i = 0; i < k.size(); ++i)
        kt.data()[i] = (1.0 - eps) * k.data()[i] + eps * other.data()[i];
      const SchweitzerReport s = schweitzer_bound(TransitionMatrix(k), TransitionMatrix(kt));
      if (s.lhs > s.rhs) ++violations;
      if (s.rhs > 0.0) tightest = std::max(tightest, s.lhs / s.rhs);
    }
    r.passed = violations == 0;
    r.detail = std::to_string(pairs) + " pairs, " + std::to_string(violations) +
               " violations, max lhs/rhs " + detail::fmt(tightest);
  });
}

/// Compatible (f, g) satisfy the clamping condition for every subset of a
/// 4-state visible space; an incompatible pair is caught.
inline CheckResult check_clamping(std::uint64_t seed, std::size_t systems = 100) {
  return detail::timed_check("clamping conditions", [&](CheckResult& r) {
    RngStream rng(seed);
    double worst_tv = 0.0, worst_cond = 0.0;
    for (std::size_t t = 0; t < systems; ++t) {
      const FiniteSystem sys = random_compatible_system(4, 2 + rng.below(4), rng);
      for (const auto& s : all_subsets(4)) {
        const ConditionReport c = check_clamp_condition(sys, s);
        worst_tv = std::max(worst_tv, c.stationary_tv);
        worst_cond = std::max(worst_cond, c.max_violation);
      }
    }
    // Independently drawn conditionals are almost surely incompatible.
    double incompatible_violation = 0.0, incompatible_tv = 0.0;
    for (std::size_t t = 0; t < 20 && incompatible_violation <= 1e-3; ++t) {
      FiniteSystem bad{Vector(4, 0.25), {}, random_column_stochastic(3, 4, rng),
                       random_column_stochastic(4, 3, rng)};
      for (const auto& s : all_subsets(4)) {
        const ConditionReport c = check_clamp_condition(bad, s);
        // Singletons always match trivially, so look for a subset where both fail.
        if (c.stationary_tv > 1e-8 && c.max_violation > incompatible_violation) {
          incompatible_violation = c.max_violation;
          incompatible_tv = c.stationary_tv;
        }
      }
    }
    r.passed = worst_tv < 1e-8 && worst_cond < 1e-10 && incompatible_violation > 1e-3 &&
               incompatible_tv > 1e-8;
    r.detail = "compatible: max TV " + detail::fmt(worst_tv) + ", max violation " +
               detail::fmt(worst_cond) + "; incompatible: violation " +
               detail::fmt(incompatible_violation) + ", TV " + detail::fmt(incompatible_tv);
  });
}

/// Exact random-scan transition built from a joint's conditionals keeps the joint.
inline CheckResult check_depnet_consistent(std::uint64_t seed) {
  return detail::timed_check("dependency net keeps consistent joint", [&](CheckResult& r) {
    RngStream rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < 20; ++t) {
      const std::size_t n = 1 + rng.below(4);
      const Vector joint = random_simplex(std::size_t{1} << n, rng);
      const Vector pi = stationary(depnet_transition(conditionals_from_joint(joint, n)));
      worst = std::max(worst, total_variation(pi, joint));
    }
    r.passed = worst < 1e-10;
    r.detail = "max TV " + detail::fmt(worst);
  });
}

/// A chain whose (f, g) come from one joint leaves P(X_t, H_t) unchanged.
inline CheckResult check_joint_preserved(std::uint64_t seed) {
  return detail::timed_check("latent chain preserves joint", [&](CheckResult& r) {
    RngStream rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < 20; ++t) {
      const std::size_t nx = 2 + rng.below(5), nh = 2 + rng.below(5);
      const Tensor2 joint(nx, nh, random_simplex(nx * nh, rng));
      const auto [f, g] = conditionals_of_joint(joint);
      for (const Tensor2& jt : propagate_joint(f, g, joint, 5))
        for (std::size_t i = 0; i < jt.size(); ++i)
          worst = std::max(worst, std::abs(jt.data()[i] - joint.data()[i]));
    }
    r.passed = worst < 1e-10;
    r.detail = "max abs deviation " + detail::fmt(worst);
  });
}

/// Expected NLL gap to the Bayes posterior equals the expected posterior KL.
inline CheckResult check_nll_kl_identity(std::uint64_t seed) {
  return detail::timed_check("nll gap equals posterior KL", [&](CheckResult& r) {
    RngStream rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < 50; ++t) {
      const FiniteSystem sys = random_finite_system(2 + rng.below(7), rng);
      const Tensor2 q = random_column_stochastic(sys.n_x(), sys.n_x(), rng);
      const double gap = expected_nll(sys.p_x, sys.c, q) -
                         expected_nll(sys.p_x, sys.c, bayes_posterior(sys));
      worst = std::max(worst, std::abs(gap - expected_posterior_kl(sys.p_x, sys.c, q)));
    }
    r.passed = worst < 1e-10;
    r.detail = "max abs difference " + detail::fmt(worst);
  });
}

inline std::vector<CheckResult> run_oracle_suite(std::uint64_t seed) {
  return {check_dae_recovers_px(seed),    check_walkback_fixed_point(seed + 1),
          check_schweitzer(seed + 2),     check_clamping(seed + 3),
          check_depnet_consistent(seed + 4), check_joint_preserved(seed + 5),
          check_nll_kl_identity(seed + 6)};
}

}  // namespace gsn

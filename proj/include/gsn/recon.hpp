#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gsn/corruption.hpp"
#include "gsn/error.hpp"
#include "gsn/numkit.hpp"
#include "gsn/rng.hpp"

namespace gsn {

enum class HeadKind { Bernoulli, Gaussian };

inline const char* to_string(HeadKind k) noexcept {
  return k == HeadKind::Bernoulli ? "bernoulli" : "gaussian";
}

inline constexpr double kSigmaFloor = 1e-3;
inline constexpr double kProbClip = 1e-7;

/// Parameters of a factorized reconstruction distribution.
///
/// Bernoulli: `a` holds the logits f_i.
/// Gaussian: `a` holds the means, `log_sigma` the per-coordinate log scale.
/// The effective scale is max(exp(log_sigma), kSigmaFloor).
struct ReconParams {
  HeadKind kind = HeadKind::Bernoulli;
  Vector a;
  Vector log_sigma;

  static ReconParams bernoulli(Vector logits) {
    return {HeadKind::Bernoulli, std::move(logits), {}};
  }
  static ReconParams gaussian(Vector mu, Vector log_sigma) {
    if (mu.size() != log_sigma.size())
      throw ShapeError("gaussian head: mu has " + std::to_string(mu.size()) +
                       " entries, log_sigma " + std::to_string(log_sigma.size()));
    return {HeadKind::Gaussian, std::move(mu), std::move(log_sigma)};
  }

  std::size_t dim() const noexcept { return a.size(); }
};

/// Per-walkback-step multipliers alpha_k = exp(log_alpha[k]). Steps past the
/// end reuse the last factor.
class ScalingFactors {
 public:
  ScalingFactors() : log_alpha_(1, 0.0) {}
  explicit ScalingFactors(std::size_t steps) : log_alpha_(std::max<std::size_t>(steps, 1), 0.0) {}
  explicit ScalingFactors(Vector log_alpha) : log_alpha_(std::move(log_alpha)) {
    if (log_alpha_.empty()) throw ParameterError("ScalingFactors needs at least one step");
  }

  std::size_t size() const noexcept { return log_alpha_.size(); }
  std::size_t index(std::size_t step) const noexcept { return std::min(step, log_alpha_.size() - 1); }
  double alpha(std::size_t step) const noexcept { return std::exp(log_alpha_[index(step)]); }
  double log_alpha(std::size_t step) const noexcept { return log_alpha_[index(step)]; }

  Vector& log_alpha() noexcept { return log_alpha_; }
  const Vector& log_alpha() const noexcept { return log_alpha_; }

  friend bool operator==(const ScalingFactors&, const ScalingFactors&) = default;

 private:
  Vector log_alpha_;
};

/// Gradients of the reconstruction NLL.
struct ReconGrads {
  Vector d_a;          // w.r.t. logits or mu
  Vector d_log_sigma;  // Gaussian only
  std::size_t alpha_index = 0;
  double d_log_alpha = 0.0;
};

struct NllResult {
  double loss = 0.0;
  ReconGrads grads;
};

namespace detail {

inline double clip_prob(double p) noexcept { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

inline double effective_sigma(double log_sigma) noexcept {
  return std::max(std::exp(log_sigma), kSigmaFloor);
}

inline void check_dims(const ReconParams& p, std::size_t n, const char* op) {
  if (p.a.size() != n)
    throw ShapeError(std::string(op) + ": params of dimension " + std::to_string(p.a.size()) +
                     " vs vector of dimension " + std::to_string(n));
  if (p.kind == HeadKind::Gaussian && p.log_sigma.size() != p.a.size())
    throw ShapeError(std::string(op) + ": gaussian head with mismatched log_sigma");
}

}  // namespace detail

/// Negative log-likelihood of `target` under the step-`step` scaled head,
/// with gradients for the head parameters and for log_alpha of that step.
inline NllResult nll(const ReconParams& params, std::size_t step, const ScalingFactors& alphas,
                     std::span<const double> target) {
  detail::check_dims(params, target.size(), "nll");
  const double alpha = alphas.alpha(step);
  NllResult r;
  r.grads.alpha_index = alphas.index(step);
  r.grads.d_a.assign(params.dim(), 0.0);
  if (params.kind == HeadKind::Bernoulli) {
    if (!is_binary(target)) throw DomainError("nll: bernoulli head needs a binary target");
    for (std::size_t i = 0; i < params.dim(); ++i) {
      const double z = alpha * params.a[i];
      const double raw = sigmoid(z);
      const double p = detail::clip_prob(raw);
      const double t = target[i];
      r.loss -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
      if (p == raw) {
        const double dz = raw - t;
        r.grads.d_a[i] = alpha * dz;
        r.grads.d_log_alpha += z * dz;
      }
    }
  } else {
    r.grads.d_log_sigma.assign(params.dim(), 0.0);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < params.dim(); ++i) {
      const double sigma = detail::effective_sigma(params.log_sigma[i]);
      const double var = alpha * sigma * sigma;
      const double diff = target[i] - params.a[i];
      const double q = diff * diff / var;
      r.loss += 0.5 * (log2pi + std::log(var) + q);
      r.grads.d_a[i] = -diff / var;
      if (std::exp(params.log_sigma[i]) > kSigmaFloor) r.grads.d_log_sigma[i] = 1.0 - q;
      r.grads.d_log_alpha += 0.5 * (1.0 - q);
    }
  }
  return r;
}

/// Mean of the scaled head: sigmoid(alpha_k * logit) or mu.
inline Vector mean(const ReconParams& params, std::size_t step, const ScalingFactors& alphas) {
  Vector m(params.a);
  if (params.kind == HeadKind::Bernoulli) {
    const double alpha = alphas.alpha(step);
    for (double& v : m) v = sigmoid(alpha * v);
  }
  return m;
}

/// Independent draw of every coordinate from the scaled head.
inline Vector sample(const ReconParams& params, std::size_t step, const ScalingFactors& alphas,
                     RngStream& rng) {
  detail::check_dims(params, params.dim(), "sample");
  const double alpha = alphas.alpha(step);
  Vector x(params.dim());
  if (params.kind == HeadKind::Bernoulli) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = rng.uniform() < sigmoid(alpha * params.a[i]) ? 1.0 : 0.0;
  } else {
    const double sa = std::sqrt(alpha);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = params.a[i] + sa * detail::effective_sigma(params.log_sigma[i]) * rng.normal();
  }
  return x;
}

/// Differential (Gaussian) or Shannon (Bernoulli) entropy in nats.
inline double entropy(const ReconParams& params, std::size_t step, const ScalingFactors& alphas) {
  const double alpha = alphas.alpha(step);
  double h = 0.0;
  if (params.kind == HeadKind::Bernoulli) {
    for (double f : params.a) {
      const double p = detail::clip_prob(sigmoid(alpha * f));
      h -= p * std::log(p) + (1.0 - p) * std::log1p(-p);
    }
  } else {
    for (double ls : params.log_sigma) {
      const double s = detail::effective_sigma(ls);
      h += 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * alpha * s * s);
    }
  }
  return h;
}

}  // namespace gsn

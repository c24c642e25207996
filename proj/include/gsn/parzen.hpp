#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gsn/error.hpp"
#include "gsn/numkit.hpp"

namespace gsn {

/// Isotropic Gaussian kernel density over a set of generated samples.
class ParzenModel {
 public:
  ParzenModel(Tensor2 centers, double sigma) : centers_(std::move(centers)), sigma_(sigma) {
    if (centers_.rows() == 0) throw ParameterError("ParzenModel: needs at least one center");
    if (!(sigma_ > 0.0)) throw ParameterError("ParzenModel: sigma must be > 0");
  }
  const Tensor2& centers() const noexcept { return centers_; }
  double sigma() const noexcept { return sigma_; }

 private:
  Tensor2 centers_;
  double sigma_;
};

struct LogLik {
  double mean = 0.0;
  double std_err = 0.0;
  Vector per_point;
};

/// D(i, j) = ||test_i - center_j||^2. Rows are independent, so they are split
/// across `threads` workers without changing the result.
inline Tensor2 squared_distances(const Tensor2& centers, const Tensor2& test, unsigned threads = 1) {
  if (centers.cols() != test.cols())
    throw ShapeError("parzen: centers " + centers.shape_string() + " vs test " + test.shape_string());
  Tensor2 d(test.rows(), centers.rows());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto x = test.row(i);
      for (std::size_t j = 0; j < centers.rows(); ++j) {
        const auto c = centers.row(j);
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
          const double diff = x[k] - c[k];
          s += diff * diff;
        }
        d(i, j) = s;
      }
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1 || test.rows() < 2 * threads) {
    work(0, test.rows());
    return d;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (test.rows() + threads - 1) / threads;
  for (std::size_t b = 0; b < test.rows(); b += chunk)
    pool.emplace_back(work, b, std::min(test.rows(), b + chunk));
  return d;
}

/// log((1/n) sum_j N(x_i; c_j, sigma^2 I)) for every row of a distance
/// matrix, via log-sum-exp.
inline LogLik loglik_from_distances(const Tensor2& sq_dist, std::size_t dim, double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("parzen: sigma must be > 0");
  const std::size_t n = sq_dist.cols();
  if (n == 0) throw ParameterError("parzen: no centers");
  const double norm = -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi * sigma * sigma) -
                      std::log(static_cast<double>(n));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  LogLik r;
  r.per_point.resize(sq_dist.rows());
  for (std::size_t i = 0; i < sq_dist.rows(); ++i) {
    const auto row = sq_dist.row(i);
    double best = std::numeric_limits<double>::infinity();
    for (double v : row) best = std::min(best, v);
    double s = 0.0;
    for (double v : row) s += std::exp(-(v - best) * inv);
    r.per_point[i] = norm - best * inv + std::log(s);
  }
  const double m = static_cast<double>(r.per_point.size());
  if (m == 0) return r;
  for (double v : r.per_point) r.mean += v;
  r.mean /= m;
  if (m > 1) {
    double var = 0.0;
    for (double v : r.per_point) var += (v - r.mean) * (v - r.mean);
    r.std_err = std::sqrt(var / (m - 1.0) / m);
  }
  return r;
}

inline LogLik loglik(const ParzenModel& model, const Tensor2& test, unsigned threads = 1) {
  return loglik_from_distances(squared_distances(model.centers(), test, threads), test.cols(),
                               model.sigma());
}

/// 20 log-spaced bandwidths from 0.05 to 1.0.
inline Vector default_sigma_grid() {
  Vector g(20);
  const double lo = std::log(0.05), hi = std::log(1.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(g.size() - 1));
  return g;
}

struct SigmaSelection {
  double sigma = 0.0;
  Vector scores;  // mean validation log-likelihood per grid entry
};

/// Grid bandwidth with the highest mean validation log-likelihood; ties go
/// to the smaller sigma. Distances are computed once for the whole grid.
inline SigmaSelection crossval_sigma(const Tensor2& centers, const Tensor2& validation,
                                     std::span<const double> grid, unsigned threads = 1) {
  if (grid.empty()) throw ParameterError("crossval_sigma: empty grid");
  if (centers.rows() == 0) throw ParameterError("crossval_sigma: no centers");
  const Tensor2 d = squared_distances(centers, validation, threads);
  SigmaSelection r;
  double best = -std::numeric_limits<double>::infinity();
  for (double s : grid) {
    const double ll = loglik_from_distances(d, validation.cols(), s).mean;
    r.scores.push_back(ll);
    if (ll > best || (ll == best && s < r.sigma)) {
      best = ll;
      r.sigma = s;
    }
  }
  return r;
}

/// TV distance between the empirical frequencies of integer-valued samples
/// (first column) and a reference distribution.
inline double histogram_tv(const Tensor2& samples, std::span<const double> reference) {
  if (samples.rows() == 0) throw ParameterError("histogram_tv: no samples");
  if (samples.cols() != 1) throw ShapeError("histogram_tv: samples must be a single column");
  Vector freq(reference.size(), 0.0);
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const double v = samples(i, 0);
    if (!(v >= 0.0) || v != std::floor(v) || v >= static_cast<double>(reference.size()))
      throw RangeError("histogram_tv: sample value " + std::to_string(v) + " is not a state index");
    freq[static_cast<std::size_t>(v)] += 1.0;
  }
  for (double& f : freq) f /= static_cast<double>(samples.rows());
  return total_variation(freq, reference);
}

}  // namespace gsn

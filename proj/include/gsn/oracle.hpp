#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gsn/chain.hpp"
#include "gsn/error.hpp"
#include "gsn/numkit.hpp"
#include "gsn/rng.hpp"

namespace gsn {

inline constexpr double kStochasticTol = 1e-12;

/// Tabular P(X), C(X_tilde | X) and optionally f(h | x), g(x | h). Every
/// conditional matrix is column-stochastic: column j is the distribution
/// given state j.
struct FiniteSystem {
  Vector p_x;
  Tensor2 c;
  std::optional<Tensor2> f;  // n_h x n_x
  std::optional<Tensor2> g;  // n_x x n_h

  std::size_t n_x() const noexcept { return p_x.size(); }
  std::size_t n_h() const noexcept { return f ? f->rows() : 0; }

  void validate() const {
    double s = 0.0;
    for (double v : p_x) {
      if (!(v >= 0.0)) throw DomainError("FiniteSystem: p_x has a negative or NaN entry");
      s += v;
    }
    if (std::abs(s - 1.0) > kStochasticTol)
      throw DomainError("FiniteSystem: p_x sums to " + std::to_string(s));
    if (!c.empty()) {
      if (c.cols() != n_x()) throw ShapeError("FiniteSystem: c is " + c.shape_string());
      check_column_stochastic(c, kStochasticTol, "FiniteSystem corruption");
    }
    if (f.has_value() != g.has_value()) throw ShapeError("FiniteSystem: f and g come together");
    if (f) {
      if (f->cols() != n_x() || g->rows() != n_x() || g->cols() != f->rows())
        throw ShapeError("FiniteSystem: f " + f->shape_string() + " g " + g->shape_string());
      check_column_stochastic(*f, kStochasticTol, "FiniteSystem encoder");
      check_column_stochastic(*g, kStochasticTol, "FiniteSystem decoder");
    }
  }
};

/// Validated column-stochastic square matrix.
class TransitionMatrix {
 public:
  explicit TransitionMatrix(Tensor2 k) : k_(std::move(k)) {
    if (k_.rows() != k_.cols()) throw ShapeError("TransitionMatrix: non-square " + k_.shape_string());
    check_column_stochastic(k_, kStochasticTol, "TransitionMatrix");
  }
  std::size_t size() const noexcept { return k_.rows(); }
  const Tensor2& matrix() const noexcept { return k_; }
  double operator()(std::size_t to, std::size_t from) const noexcept { return k_(to, from); }

 private:
  Tensor2 k_;
};

// ---------------------------------------------------------------------------
// Random instances.

/// Dirichlet(1, ..., 1) draw.
inline Vector random_simplex(std::size_t n, RngStream& rng) {
  Vector v(n);
  double s = 0.0;
  for (double& x : v) s += (x = -std::log(rng.uniform_positive()));
  for (double& x : v) x /= s;
  return v;
}

inline Tensor2 random_column_stochastic(std::size_t rows, std::size_t cols, RngStream& rng) {
  Tensor2 m(rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    const Vector col = random_simplex(rows, rng);
    for (std::size_t r = 0; r < rows; ++r) m(r, c) = col[r];
  }
  return m;
}

/// Random p_x and corruption with full support.
inline FiniteSystem random_finite_system(std::size_t n_x, RngStream& rng) {
  return {random_simplex(n_x, rng), random_column_stochastic(n_x, n_x, rng), {}, {}};
}

/// Conditionals f(h|x) = J(x,h)/J(x) and g(x|h) = J(x,h)/J(h) of a joint J
/// given as an n_x x n_h table.
inline std::pair<Tensor2, Tensor2> conditionals_of_joint(const Tensor2& joint) {
  const std::size_t nx = joint.rows(), nh = joint.cols();
  Tensor2 f(nh, nx), g(nx, nh);
  for (std::size_t x = 0; x < nx; ++x) {
    double px = 0.0;
    for (std::size_t h = 0; h < nh; ++h) px += joint(x, h);
    if (!(px > 0.0)) throw DegenerateSupportError("conditionals_of_joint: zero-mass visible state");
    for (std::size_t h = 0; h < nh; ++h) f(h, x) = joint(x, h) / px;
  }
  for (std::size_t h = 0; h < nh; ++h) {
    double ph = 0.0;
    for (std::size_t x = 0; x < nx; ++x) ph += joint(x, h);
    if (!(ph > 0.0)) throw DegenerateSupportError("conditionals_of_joint: zero-mass hidden state");
    for (std::size_t x = 0; x < nx; ++x) g(x, h) = joint(x, h) / ph;
  }
  return {std::move(f), std::move(g)};
}

/// FiniteSystem whose (f, g) are the two conditionals of one random joint.
inline FiniteSystem random_compatible_system(std::size_t n_x, std::size_t n_h, RngStream& rng) {
  const Vector flat = random_simplex(n_x * n_h, rng);
  Tensor2 joint(n_x, n_h, flat);
  auto [f, g] = conditionals_of_joint(joint);
  Vector px(n_x, 0.0);
  for (std::size_t x = 0; x < n_x; ++x)
    for (std::size_t h = 0; h < n_h; ++h) px[x] += joint(x, h);
  return {std::move(px), {}, std::move(f), std::move(g)};
}

// ---------------------------------------------------------------------------
// Denoising chains.

/// Exact P(X | X_tilde) = C(X_tilde | X) P(X) / z, as an n_x x n_xt matrix.
inline Tensor2 bayes_posterior(const Vector& p_x, const Tensor2& c) {
  if (c.cols() != p_x.size())
    throw ShapeError("bayes_posterior: c is " + c.shape_string() + " for " +
                     std::to_string(p_x.size()) + " states");
  const std::size_t nx = p_x.size(), nxt = c.rows();
  Tensor2 post(nx, nxt);
  for (std::size_t xt = 0; xt < nxt; ++xt) {
    double z = 0.0;
    for (std::size_t x = 0; x < nx; ++x) z += c(xt, x) * p_x[x];
    if (!(z > 0.0))
      throw DegenerateSupportError("bayes_posterior: corrupted state " + std::to_string(xt) +
                                   " is unreachable");
    for (std::size_t x = 0; x < nx; ++x) post(x, xt) = c(xt, x) * p_x[x] / z;
  }
  return post;
}

inline Tensor2 bayes_posterior(const FiniteSystem& sys) {
  sys.validate();
  return bayes_posterior(sys.p_x, sys.c);
}

/// K[x', x] = sum_xt posterior[x', xt] C[xt, x].
inline TransitionMatrix dae_transition(const Tensor2& c, const Tensor2& posterior) {
  if (posterior.cols() != c.rows() || posterior.rows() != c.cols())
    throw ShapeError("dae_transition: posterior " + posterior.shape_string() + " vs corruption " +
                     c.shape_string());
  return TransitionMatrix(matmul(posterior, c));
}

inline TransitionMatrix dae_transition(const FiniteSystem& sys, const Tensor2& posterior) {
  return dae_transition(sys.c, posterior);
}

// ---------------------------------------------------------------------------
// Stationary distributions.

namespace detail {

using Pattern = std::vector<std::vector<bool>>;

inline Pattern pattern_of(const Tensor2& k) {
  Pattern p(k.rows(), std::vector<bool>(k.cols()));
  for (std::size_t i = 0; i < k.rows(); ++i)
    for (std::size_t j = 0; j < k.cols(); ++j) p[i][j] = k(i, j) > 0.0;
  return p;
}

inline Pattern pattern_product(const Pattern& a, const Pattern& b) {
  const std::size_t n = a.size();
  Pattern out(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      if (a[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (b[k][j]) out[i][j] = true;
  return out;
}

inline bool all_true(const Pattern& p) {
  return std::all_of(p.begin(), p.end(),
                     [](const auto& row) { return std::all_of(row.begin(), row.end(), [](bool v) { return v; }); });
}

}  // namespace detail

/// Throws ErgodicityError unless k is irreducible and aperiodic. Irreducible:
/// (I + K)^(n-1) > 0. Aperiodic (given irreducible): K^m > 0 for some
/// m >= (n-1)^2 + 1.
inline void check_ergodic(const TransitionMatrix& k) {
  const std::size_t n = k.size();
  if (n == 1) return;
  detail::Pattern reach = detail::pattern_of(k.matrix());
  for (std::size_t i = 0; i < n; ++i) reach[i][i] = true;
  for (std::size_t len = 1; len < n - 1; len *= 2) reach = detail::pattern_product(reach, reach);
  if (!detail::all_true(reach)) throw ErgodicityError("chain is reducible");
  detail::Pattern power = detail::pattern_of(k.matrix());
  const std::size_t wielandt = (n - 1) * (n - 1) + 1;
  for (std::size_t m = 1; m < wielandt; m *= 2) power = detail::pattern_product(power, power);
  if (!detail::all_true(power)) throw ErgodicityError("chain is periodic");
}

struct StationaryOptions {
  double tol = 1e-12;
  std::size_t max_iter = 1'000'000;
};

/// Power iteration from the uniform vector until ||K pi - pi||_1 < tol.
inline Vector stationary(const TransitionMatrix& k, StationaryOptions opt = {}) {
  check_ergodic(k);
  const std::size_t n = k.size();
  Vector pi(n, 1.0 / static_cast<double>(n)), next(n);
  double residual = 0.0;
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    kernel::accumulate_transposed(pi, k.matrix(), next);
    const double s = std::accumulate(next.begin(), next.end(), 0.0);
    residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      next[i] /= s;
      residual += std::abs(next[i] - pi[i]);
    }
    pi.swap(next);
    if (residual < opt.tol) return pi;
  }
  throw IterationLimitError("stationary: no convergence, residual " + std::to_string(residual),
                            residual);
}

/// Direct solve of (K - I) pi = 0 with sum(pi) = 1 replacing the last row.
inline Vector stationary_direct(const TransitionMatrix& k) {
  const std::size_t n = k.size();
  Tensor2 a = k.matrix();
  for (std::size_t i = 0; i < n; ++i) a(i, i) -= 1.0;
  for (std::size_t j = 0; j < n; ++j) a(n - 1, j) = 1.0;
  Vector b(n, 0.0);
  b[n - 1] = 1.0;
  return solve(std::move(a), std::move(b));
}

/// ||K pi - pi||_1.
inline double stationarity_residual(const TransitionMatrix& k, std::span<const double> pi) {
  const Vector kp = matvec(k.matrix(), pi);
  double r = 0.0;
  for (std::size_t i = 0; i < kp.size(); ++i) r += std::abs(kp[i] - pi[i]);
  return r;
}

// ---------------------------------------------------------------------------
// Perturbation bound.

struct SchweitzerReport {
  double lhs = 0.0;  // ||pi - pi_tilde||_1
  double rhs = 0.0;  // ||Z|| * ||K - K_tilde||
  double z_norm = 0.0;
  double k_diff_norm = 0.0;
  Vector pi;
  Vector pi_tilde;
};

/// ||pi - pi_tilde||_1 <= ||Z||_inf ||K - K_tilde||_inf with Z = (I - K + C)^-1.
/// The bound is stated for row-stochastic matrices acting on row vectors, so
/// it is evaluated on the transposes of the column-stochastic inputs.
inline SchweitzerReport schweitzer_bound(const TransitionMatrix& k, const TransitionMatrix& k_tilde) {
  if (k.size() != k_tilde.size()) throw ShapeError("schweitzer_bound: chains of different size");
  const std::size_t n = k.size();
  SchweitzerReport r;
  r.pi = stationary(k);
  r.pi_tilde = stationary(k_tilde);
  const Tensor2 p = k.matrix().transposed();
  Tensor2 a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = (i == j ? 1.0 : 0.0) - p(i, j) + r.pi[j];
  const Tensor2 z = inverse(std::move(a));
  Tensor2 diff(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) diff(i, j) = k(j, i) - k_tilde(j, i);
  r.z_norm = norm_inf(z);
  r.k_diff_norm = norm_inf(diff);
  r.rhs = r.z_norm * r.k_diff_norm;
  for (std::size_t i = 0; i < n; ++i) r.lhs += std::abs(r.pi[i] - r.pi_tilde[i]);
  return r;
}

// ---------------------------------------------------------------------------
// Latent-variable chains and clamping.

/// Visible-state kernel of the chain x -> h ~ f(.|x) -> x' ~ g(.|h).
inline TransitionMatrix gibbs_visible_transition(const Tensor2& f, const Tensor2& g) {
  return TransitionMatrix(matmul(g, f));
}

/// Stationary joint pi(x, h) of the chain (X_t, H_t), as an n_x x n_h table:
/// pi(x', h') = g(x'|h') sum_x pi(x) f(h'|x).
inline Tensor2 gsn_stationary_joint(const Tensor2& f, const Tensor2& g) {
  const Vector px = stationary(gibbs_visible_transition(f, g));
  const Vector ph = matvec(f, px);
  Tensor2 joint(g.rows(), g.cols());
  for (std::size_t x = 0; x < g.rows(); ++x)
    for (std::size_t h = 0; h < g.cols(); ++h) joint(x, h) = g(x, h) * ph[h];
  return joint;
}

/// Every nonempty subset of {0..n-1}, as sorted state lists.
inline std::vector<std::vector<std::size_t>> all_subsets(std::size_t n) {
  if (n >= 20) throw ParameterError("all_subsets: too many states");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1U) s.push_back(i);
    out.push_back(std::move(s));
  }
  return out;
}

struct ConditionReport {
  bool holds = false;
  double max_violation = 0.0;
  Vector clamped_stationary;  // over the subset, in subset order
  Vector target_conditional;  // pi(x | x in S), in subset order
  double stationary_tv = 0.0;
};

namespace detail {

inline void check_latent_system(const FiniteSystem& sys, std::span<const std::size_t> subset) {
  if (!sys.f || !sys.g) throw ParameterError("clamping checks need f and g");
  check_column_stochastic(*sys.f, kStochasticTol, "encoder");
  check_column_stochastic(*sys.g, kStochasticTol, "decoder");
  if (sys.f->cols() != sys.g->rows() || sys.f->rows() != sys.g->cols())
    throw ShapeError("encoder " + sys.f->shape_string() + " vs decoder " + sys.g->shape_string());
  if (subset.empty()) throw DomainError("subset must be nonempty");
  std::vector<bool> seen(sys.g->rows(), false);
  for (std::size_t x : subset) {
    if (x >= seen.size()) throw RangeError("subset state " + std::to_string(x) + " out of range");
    if (seen[x]) throw ParameterError("subset states must be distinct");
    seen[x] = true;
  }
}

/// Decoder restricted to the subset and renormalized, |S| x n_h. Columns of
/// hidden states with no mass on S are left zero.
inline Tensor2 restricted_decoder(const Tensor2& g, std::span<const std::size_t> subset) {
  Tensor2 gs(subset.size(), g.cols());
  for (std::size_t h = 0; h < g.cols(); ++h) {
    double z = 0.0;
    for (std::size_t x : subset) z += g(x, h);
    if (z > 0.0)
      for (std::size_t i = 0; i < subset.size(); ++i) gs(i, h) = g(subset[i], h) / z;
  }
  return gs;
}

inline Tensor2 restricted_encoder(const Tensor2& f, std::span<const std::size_t> subset) {
  Tensor2 fs(f.rows(), subset.size());
  for (std::size_t h = 0; h < f.rows(); ++h)
    for (std::size_t i = 0; i < subset.size(); ++i) fs(h, i) = f(h, subset[i]);
  return fs;
}

/// Chain alternating f and the restricted decoder, over subset states.
inline TransitionMatrix clamped_transition(const Tensor2& f, const Tensor2& g,
                                           std::span<const std::size_t> subset) {
  const Tensor2 gs = restricted_decoder(g, subset);
  const Tensor2 fs = restricted_encoder(f, subset);
  for (std::size_t h = 0; h < gs.cols(); ++h) {
    double col = 0.0, reach = 0.0;
    for (std::size_t i = 0; i < gs.rows(); ++i) col += gs(i, h);
    for (std::size_t i = 0; i < fs.cols(); ++i) reach += fs(h, i);
    if (col == 0.0 && reach > 0.0)
      throw DegenerateSupportError("hidden state " + std::to_string(h) +
                                   " is reachable but puts no decoder mass on the subset");
  }
  return TransitionMatrix(matmul(gs, fs));
}

}  // namespace detail

/// Sufficient clamping condition: sum_{x in S} pi(x|S) f(h'|x) = pi(h'|S) for
/// every h', with pi the stationary joint of the unclamped chain. Also
/// reports the clamped chain's stationary distribution next to pi(x|S).
inline ConditionReport check_clamp_condition(const FiniteSystem& sys,
                                             std::span<const std::size_t> subset,
                                             double tol = 1e-10) {
  detail::check_latent_system(sys, subset);
  const Tensor2& f = *sys.f;
  const Tensor2& g = *sys.g;
  const Tensor2 joint = gsn_stationary_joint(f, g);
  const std::size_t nh = g.cols();
  double mass = 0.0;
  Vector cond(subset.size());
  for (std::size_t i = 0; i < subset.size(); ++i) {
    for (std::size_t h = 0; h < nh; ++h) cond[i] += joint(subset[i], h);
    mass += cond[i];
  }
  if (!(mass > 0.0)) throw DomainError("check_clamp_condition: subset has zero stationary mass");
  for (double& v : cond) v /= mass;

  ConditionReport r;
  for (std::size_t h = 0; h < nh; ++h) {
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < subset.size(); ++i) {
      lhs += cond[i] * f(h, subset[i]);
      rhs += joint(subset[i], h);
    }
    rhs /= mass;
    r.max_violation = std::max(r.max_violation, std::abs(lhs - rhs));
  }
  r.holds = r.max_violation < tol;
  r.clamped_stationary = stationary(detail::clamped_transition(f, g, subset));
  r.target_conditional = std::move(cond);
  r.stationary_tv = total_variation(r.clamped_stationary, r.target_conditional);
  return r;
}

struct NecessityReport {
  bool independent = false;  // columns of the restricted decoder are linearly independent
  std::size_t rank = 0;
  bool stationary_matches = false;
  bool condition_holds = false;

  /// With independent columns a stationary match forces the condition.
  bool necessity_consistent() const noexcept {
    return !independent || !stationary_matches || condition_holds;
  }
};

inline NecessityReport check_necessity(const FiniteSystem& sys, std::span<const std::size_t> subset,
                                       double tol = 1e-10) {
  detail::check_latent_system(sys, subset);
  NecessityReport r;
  const Tensor2 gs = detail::restricted_decoder(*sys.g, subset);
  r.rank = rank(gs, tol);
  r.independent = r.rank == gs.cols();
  const ConditionReport c = check_clamp_condition(sys, subset, tol);
  r.condition_holds = c.holds;
  r.stationary_matches = c.stationary_tv < tol;
  return r;
}

struct CompatReport {
  bool compatible = false;
  double residual = 0.0;
  std::optional<Tensor2> joint;  // n_x x n_h, when compatible
};

/// f and g are compatible iff the stationary joint of their Gibbs chain,
/// J(x, h) = g(x|h) pi(h), also has f as its h-given-x conditional:
/// J(x, h) = pi(x) f(h|x).
inline CompatReport check_mutual_compatibility(const Tensor2& f, const Tensor2& g,
                                               double tol = 1e-10) {
  if (f.cols() != g.rows() || f.rows() != g.cols())
    throw ShapeError("check_mutual_compatibility: f " + f.shape_string() + " g " + g.shape_string());
  check_column_stochastic(f, kStochasticTol, "encoder");
  check_column_stochastic(g, kStochasticTol, "decoder");
  Tensor2 joint = gsn_stationary_joint(f, g);
  CompatReport r;
  for (std::size_t x = 0; x < joint.rows(); ++x) {
    double px = 0.0;
    for (std::size_t h = 0; h < joint.cols(); ++h) px += joint(x, h);
    for (std::size_t h = 0; h < joint.cols(); ++h)
      r.residual = std::max(r.residual, std::abs(joint(x, h) - px * f(h, x)));
  }
  r.compatible = r.residual < tol;
  if (r.compatible) r.joint = std::move(joint);
  return r;
}

// ---------------------------------------------------------------------------
// Local ergodicity.

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

}  // namespace detail

/// True iff the graph joining points within sup-norm distance epsilon is
/// connected.
inline bool check_local_ergodicity(const std::vector<Vector>& points, double epsilon) {
  if (!(epsilon > 0.0)) throw ParameterError("check_local_ergodicity: epsilon must be > 0");
  if (points.empty()) throw ParameterError("check_local_ergodicity: no points");
  const std::size_t n = points.size(), d = points[0].size();
  for (const auto& p : points)
    if (p.size() != d) throw ShapeError("check_local_ergodicity: points of different dimension");
  detail::UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) dist = std::max(dist, std::abs(points[i][k] - points[j][k]));
      if (dist <= epsilon) uf.unite(i, j);
    }
  const std::size_t root = uf.find(0);
  for (std::size_t i = 1; i < n; ++i)
    if (uf.find(i) != root) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Walkback.

/// C_1 = C, C_{j+1} = C Q C_j; returns C_1..C_k.
inline std::vector<Tensor2> walkback_corruptions(const Tensor2& c, const Tensor2& q, std::size_t k) {
  if (k < 1) throw ParameterError("walkback_corruptions: k must be >= 1");
  const Tensor2 cq = matmul(c, q);
  std::vector<Tensor2> out{c};
  for (std::size_t j = 1; j < k; ++j) out.push_back(matmul(cq, out.back()));
  return out;
}

/// sum_{j>=1} p (1-p)^(j-1) C_j = p (I - (1-p) C Q)^-1 C.
inline Tensor2 walkback_mixture(const Tensor2& c, const Tensor2& q, double p) {
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("walkback_mixture: p must lie in (0, 1]");
  const std::size_t n = c.rows();
  Tensor2 a = matmul(c, q);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = (i == j ? 1.0 : 0.0) - (1.0 - p) * a(i, j);
  Tensor2 m = matmul(inverse(std::move(a)), c);
  for (double& v : m.data()) v *= p;
  return m;
}

struct WalkbackFixedPoint {
  Tensor2 q;
  std::size_t iterations = 0;
  double last_change = 0.0;  // max abs entry change of the final refit
};

/// Repeatedly refits Q to the exact walkback pair distribution
/// p_x(x) C_wb(x_tilde | x) generated by the current Q.
inline WalkbackFixedPoint walkback_fixed_point(const Vector& p_x, const Tensor2& c, double p,
                                               double tol = 1e-12, std::size_t max_iter = 100000) {
  WalkbackFixedPoint r{bayes_posterior(p_x, c), 0, 0.0};
  for (; r.iterations < max_iter;) {
    Tensor2 next = bayes_posterior(p_x, walkback_mixture(c, r.q, p));
    r.last_change = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i)
      r.last_change = std::max(r.last_change, std::abs(next.data()[i] - r.q.data()[i]));
    r.q = std::move(next);
    ++r.iterations;
    if (r.last_change < tol) return r;
  }
  throw IterationLimitError("walkback_fixed_point: no convergence", r.last_change);
}

// ---------------------------------------------------------------------------
// Training-criterion identities.

/// -E_{X ~ p, X_tilde ~ C} log Q(X | X_tilde).
inline double expected_nll(const Vector& p_x, const Tensor2& c, const Tensor2& q) {
  double s = 0.0;
  for (std::size_t x = 0; x < p_x.size(); ++x)
    for (std::size_t xt = 0; xt < c.rows(); ++xt) {
      const double w = p_x[x] * c(xt, x);
      if (w > 0.0) s -= w * std::log(q(x, xt));
    }
  return s;
}

/// E_{X_tilde}[ KL(P(X | X_tilde) || Q(X | X_tilde)) ].
inline double expected_posterior_kl(const Vector& p_x, const Tensor2& c, const Tensor2& q) {
  const Tensor2 post = bayes_posterior(p_x, c);
  double s = 0.0;
  for (std::size_t xt = 0; xt < c.rows(); ++xt) {
    double m = 0.0;
    for (std::size_t x = 0; x < p_x.size(); ++x) m += c(xt, x) * p_x[x];
    for (std::size_t x = 0; x < p_x.size(); ++x)
      if (post(x, xt) > 0.0) s += m * post(x, xt) * std::log(post(x, xt) / q(x, xt));
  }
  return s;
}

/// Joint tables P(X_t, H_t), t = 0..steps, of the chain started at
/// joint0 and stepped by H_{t+1} ~ f(.|X_t), X_{t+1} ~ g(.|H_{t+1}).
inline std::vector<Tensor2> propagate_joint(const Tensor2& f, const Tensor2& g, const Tensor2& joint0,
                                            std::size_t steps) {
  if (joint0.rows() != g.rows() || joint0.cols() != g.cols())
    throw ShapeError("propagate_joint: joint " + joint0.shape_string() + " vs decoder " +
                     g.shape_string());
  std::vector<Tensor2> out{joint0};
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor2& cur = out.back();
    Vector px(cur.rows(), 0.0);
    for (std::size_t x = 0; x < cur.rows(); ++x)
      for (std::size_t h = 0; h < cur.cols(); ++h) px[x] += cur(x, h);
    const Vector ph = matvec(f, px);
    Tensor2 next(cur.rows(), cur.cols());
    for (std::size_t x = 0; x < cur.rows(); ++x)
      for (std::size_t h = 0; h < cur.cols(); ++h) next(x, h) = g(x, h) * ph[h];
    out.push_back(std::move(next));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dependency networks.

/// Exact transition of random-scan Gibbs over n binary variables, indexed
/// by the bit encoding of the state.
inline TransitionMatrix depnet_transition(const std::vector<TableConditional>& conds) {
  const std::size_t n = conds.size();
  if (n == 0 || n >= 20) throw ParameterError("depnet_transition: need 1..19 variables");
  const std::size_t m = std::size_t{1} << n;
  Tensor2 k(m, m);
  for (std::size_t x = 0; x < m; ++x) {
    const Vector bits = index_to_bits(x, n);
    for (std::size_t s = 0; s < n; ++s) {
      const double p1 = conds[s](bits);
      const std::size_t on = x | (std::size_t{1} << s), off = x & ~(std::size_t{1} << s);
      k(on, x) += p1 / static_cast<double>(n);
      k(off, x) += (1.0 - p1) / static_cast<double>(n);
    }
  }
  return TransitionMatrix(std::move(k));
}

/// The n exact conditionals P(X_s = 1 | x_{-s}) of a joint over 2^n states.
inline std::vector<TableConditional> conditionals_from_joint(const Vector& joint, std::size_t n) {
  if (joint.size() != (std::size_t{1} << n))
    throw ShapeError("conditionals_from_joint: joint has " + std::to_string(joint.size()) + " entries");
  std::vector<TableConditional> out;
  for (std::size_t s = 0; s < n; ++s) {
    TableConditional c{s, Vector(std::size_t{1} << (n - 1), 0.0)};
    for (std::size_t x = 0; x < joint.size(); ++x) {
      if (x >> s & 1U) continue;
      const std::size_t on = x | (std::size_t{1} << s);
      const double z = joint[x] + joint[on];
      if (!(z > 0.0)) throw DegenerateSupportError("conditionals_from_joint: zero-mass context");
      c.p_one[TableConditional::context_index(index_to_bits(x, n), s)] = joint[on] / z;
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace gsn

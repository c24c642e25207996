#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gsn/corruption.hpp"
#include "gsn/error.hpp"
#include "gsn/network.hpp"
#include "gsn/numkit.hpp"
#include "gsn/recon.hpp"
#include "gsn/rng.hpp"

namespace gsn {

/// Visible coordinates held fixed during sampling.
struct Clamp {
  std::vector<std::size_t> indices;
  Vector values;
};

struct ChainRun {
  std::size_t burn_in = 1000;
  std::size_t n_samples = 0;
  std::size_t thin = 1;
  std::optional<Clamp> clamp;
  std::uint64_t seed = 0;
};

/// Visible samples and the matching mean-field reconstructions, one row per
/// recorded step.
struct ChainSamples {
  Tensor2 samples;
  Tensor2 means;
};

inline void validate_clamp(const Clamp& c, std::size_t dim) {
  if (c.indices.size() != c.values.size())
    throw ParameterError("clamp: " + std::to_string(c.indices.size()) + " indices but " +
                         std::to_string(c.values.size()) + " values");
  std::vector<std::size_t> sorted = c.indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ParameterError("clamp: indices must be distinct");
  for (std::size_t i : c.indices)
    if (i >= dim)
      throw RangeError("clamp index " + std::to_string(i) + " out of range for dimension " +
                       std::to_string(dim));
}

inline void apply_clamp(const Clamp* clamp, std::span<double> x) {
  if (!clamp) return;
  for (std::size_t j = 0; j < clamp->indices.size(); ++j) x[clamp->indices[j]] = clamp->values[j];
}

/// Anything that can drive run_chain: a state type, a way to start, one full
/// transition (honouring an optional clamp), and visible/mean-field read-outs.
template <class M>
concept ChainModel = requires(const M& m, typename M::State& s, RngStream& rng, const Clamp* clamp) {
  typename M::State;
  { m.initial_state(rng, clamp) } -> std::same_as<typename M::State>;
  m.step(s, rng, clamp);
  { m.visible(s) } -> std::convertible_to<Vector>;
  { m.mean_field(s) } -> std::convertible_to<Vector>;
  { m.visible_dim() } -> std::convertible_to<std::size_t>;
};

/// Runs burn_in + n_samples * thin transitions and records every thin-th
/// state after burn-in.
template <ChainModel M>
ChainSamples run_chain(const M& model, const ChainRun& run) {
  if (run.thin < 1) throw ParameterError("run_chain: thin must be >= 1");
  const std::size_t d = model.visible_dim();
  const Clamp* clamp = run.clamp ? &*run.clamp : nullptr;
  if (clamp) validate_clamp(*clamp, d);
  RngStream rng(run.seed);
  ChainSamples out{Tensor2(0, d), Tensor2(0, d)};
  if (run.n_samples == 0) return out;
  auto state = model.initial_state(rng, clamp);
  for (std::size_t t = 0; t < run.burn_in; ++t) model.step(state, rng, clamp);
  for (std::size_t i = 0; i < run.n_samples; ++i) {
    for (std::size_t t = 0; t < run.thin; ++t) model.step(state, rng, clamp);
    out.samples.append_row(model.visible(state));
    out.means.append_row(model.mean_field(state));
  }
  return out;
}

/// run_chain with a mandatory, nonempty clamp.
template <ChainModel M>
ChainSamples run_clamped_chain(const M& model, const ChainRun& run) {
  if (!run.clamp || run.clamp->indices.empty())
    throw ParameterError("run_clamped_chain: a nonempty clamp is required");
  return run_chain(model, run);
}

/// Independent chains on one shared, read-only model, one thread each.
template <ChainModel M>
std::vector<ChainSamples> run_chains_parallel(const M& model, const std::vector<ChainRun>& runs) {
  std::vector<ChainSamples> out(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  {
    std::vector<std::jthread> workers;
    for (std::size_t i = 0; i < runs.size(); ++i)
      workers.emplace_back([&, i] {
        try {
          out[i] = run_chain(model, runs[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// GSN / DAE sampler.

/// Samples the Markov chain of a trained GsnModel: corrupt the visible,
/// run one encoder sweep, decode with scaling factor `alpha_step`, sample.
/// Clamped coordinates are overwritten after every decode, which is exact
/// for a factorized head.
class GsnSampler {
 public:
  struct State {
    ChainState chain;
    Vector mean;
  };

  GsnSampler(const GsnModel& model, Corruptor corruptor, std::size_t alpha_step = 0,
             std::optional<Vector> initial_x = std::nullopt)
      : model_(model), corruptor_(std::move(corruptor)), alpha_step_(alpha_step),
        initial_x_(std::move(initial_x)) {
    if (initial_x_ && initial_x_->size() != model_.visible_dim())
      throw ShapeError("GsnSampler: initial visible vector has the wrong size");
  }

  std::size_t visible_dim() const noexcept { return model_.visible_dim(); }

  /// Unclamped coordinates start at random: Bernoulli(0.5) or N(0, 1).
  State initial_state(RngStream& rng, const Clamp* clamp) const {
    State s{ChainState::zeros(model_), {}};
    if (initial_x_) {
      s.chain.x = *initial_x_;
    } else {
      for (double& v : s.chain.x)
        v = model_.head() == HeadKind::Bernoulli ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : rng.normal();
    }
    apply_clamp(clamp, s.chain.x);
    s.mean = s.chain.x;
    return s;
  }

  void step(State& s, RngStream& rng, const Clamp* clamp) const {
    const Corrupted xt = corrupt(corruptor_, s.chain.x, rng);
    s.chain.h = encode_step(model_, s.chain, xt.values, rng).h;
    const ReconParams p = decode_step(model_, s.chain);
    s.chain.x = sample(p, alpha_step_, model_.alphas(), rng);
    s.mean = gsn::mean(p, alpha_step_, model_.alphas());
    apply_clamp(clamp, s.chain.x);
    apply_clamp(clamp, s.mean);
  }

  Vector visible(const State& s) const { return s.chain.x; }
  Vector mean_field(const State& s) const { return s.mean; }

 private:
  const GsnModel& model_;
  Corruptor corruptor_;
  std::size_t alpha_step_;
  std::optional<Vector> initial_x_;
};

inline ChainSamples run_chain(const GsnModel& model, const Corruptor& corruptor, const ChainRun& run) {
  return run_chain(GsnSampler(model, corruptor), run);
}

inline ChainSamples run_clamped_chain(const GsnModel& model, const Corruptor& corruptor,
                                      const ChainRun& run) {
  return run_clamped_chain(GsnSampler(model, corruptor), run);
}

// ---------------------------------------------------------------------------
// Tabular chains over small discrete spaces. State index i is exposed as its
// bit vector (least significant bit first), so a Clamp fixes bits and
// restricts the chain to the states that agree with it.

inline std::size_t bits_for(std::size_t n_states) {
  std::size_t b = 1;
  while ((std::size_t{1} << b) < n_states) ++b;
  return b;
}

inline Vector index_to_bits(std::size_t index, std::size_t n_bits) {
  Vector v(n_bits);
  for (std::size_t b = 0; b < n_bits; ++b) v[b] = static_cast<double>((index >> b) & 1U);
  return v;
}

inline std::size_t bits_to_index(std::span<const double> bits) {
  std::size_t idx = 0;
  for (std::size_t b = 0; b < bits.size(); ++b)
    if (bits[b] != 0.0) idx |= std::size_t{1} << b;
  return idx;
}

/// Converts a matrix of bit-vector rows into a one-column matrix of indices.
inline Tensor2 index_column(const Tensor2& bit_rows) {
  Tensor2 out(bit_rows.rows(), 1);
  for (std::size_t r = 0; r < bit_rows.rows(); ++r)
    out(r, 0) = static_cast<double>(bits_to_index(bit_rows.row(r)));
  return out;
}

inline bool satisfies_clamp(std::size_t index, const Clamp* clamp) {
  if (!clamp) return true;
  for (std::size_t j = 0; j < clamp->indices.size(); ++j)
    if (static_cast<double>((index >> clamp->indices[j]) & 1U) != clamp->values[j]) return false;
  return true;
}

namespace detail {

/// Draws a row index of column `col`, restricted to rows satisfying the clamp.
inline std::size_t draw_column(const Tensor2& m, std::size_t col, const Clamp* clamp, RngStream& rng) {
  Vector w(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) w[r] = satisfies_clamp(r, clamp) ? m(r, col) : 0.0;
  return rng.categorical(w);
}

}  // namespace detail

/// DAE chain with tabular corruption C[x_tilde, x] and reconstruction
/// Q[x, x_tilde], both column-stochastic.
class TabularDae {
 public:
  using State = std::size_t;

  TabularDae(Tensor2 corruption, Tensor2 reconstruction)
      : c_(std::move(corruption)), q_(std::move(reconstruction)) {
    if (q_.cols() != c_.rows() || q_.rows() != c_.cols())
      throw ShapeError("TabularDae: corruption " + c_.shape_string() + " vs reconstruction " +
                       q_.shape_string());
    check_column_stochastic(c_, 1e-9, "TabularDae corruption");
    check_column_stochastic(q_, 1e-9, "TabularDae reconstruction");
  }

  std::size_t n_states() const noexcept { return c_.cols(); }
  std::size_t visible_dim() const noexcept { return bits_for(n_states()); }
  const Tensor2& corruption() const noexcept { return c_; }
  const Tensor2& reconstruction() const noexcept { return q_; }

  State initial_state(RngStream& rng, const Clamp* clamp) const {
    Vector w(n_states());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = satisfies_clamp(i, clamp) ? 1.0 : 0.0;
    return rng.categorical(w);
  }
  std::size_t corrupt_state(State x, RngStream& rng) const { return detail::draw_column(c_, x, nullptr, rng); }
  std::size_t reconstruct_state(std::size_t xt, RngStream& rng, const Clamp* clamp = nullptr) const {
    return detail::draw_column(q_, xt, clamp, rng);
  }
  void step(State& s, RngStream& rng, const Clamp* clamp) const {
    s = reconstruct_state(corrupt_state(s, rng), rng, clamp);
  }
  Vector visible(const State& s) const { return index_to_bits(s, visible_dim()); }
  Vector mean_field(const State& s) const { return visible(s); }

 private:
  Tensor2 c_;
  Tensor2 q_;
};

/// Fits the reconstruction table by counting (x, x_tilde) pairs: every
/// training state is corrupted `corruptions_per_example` times. Corrupted
/// states never observed get a uniform column.
inline TabularDae fit_tabular_dae(std::span<const std::size_t> data, const Tensor2& corruption,
                                  std::size_t corruptions_per_example, RngStream& rng) {
  const std::size_t n = corruption.cols();
  if (corruption.rows() != n) throw ShapeError("fit_tabular_dae: corruption must be square");
  if (corruptions_per_example < 1) throw ParameterError("fit_tabular_dae: need >= 1 corruption per example");
  Tensor2 counts(n, n);
  for (std::size_t x : data) {
    if (x >= n) throw RangeError("fit_tabular_dae: state " + std::to_string(x) + " out of range");
    for (std::size_t j = 0; j < corruptions_per_example; ++j)
      counts(x, detail::draw_column(corruption, x, nullptr, rng)) += 1.0;
  }
  for (std::size_t xt = 0; xt < n; ++xt) {
    double total = 0.0;
    for (std::size_t x = 0; x < n; ++x) total += counts(x, xt);
    for (std::size_t x = 0; x < n; ++x)
      counts(x, xt) = total > 0.0 ? counts(x, xt) / total : 1.0 / static_cast<double>(n);
  }
  return TabularDae(corruption, std::move(counts));
}

/// Latent-variable chain with tabular encoder f[h, x] and decoder g[x, h].
/// Under a clamp the decoder is restricted to the allowed states and
/// renormalized.
class TabularGsn {
 public:
  struct State {
    std::size_t x = 0;
    std::size_t h = 0;
  };

  TabularGsn(Tensor2 encoder, Tensor2 decoder) : f_(std::move(encoder)), g_(std::move(decoder)) {
    if (f_.rows() != g_.cols() || f_.cols() != g_.rows())
      throw ShapeError("TabularGsn: encoder " + f_.shape_string() + " vs decoder " +
                       g_.shape_string());
    check_column_stochastic(f_, 1e-9, "TabularGsn encoder");
    check_column_stochastic(g_, 1e-9, "TabularGsn decoder");
  }

  std::size_t visible_dim() const noexcept { return bits_for(g_.rows()); }

  State initial_state(RngStream& rng, const Clamp* clamp) const {
    Vector w(g_.rows());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = satisfies_clamp(i, clamp) ? 1.0 : 0.0;
    return {rng.categorical(w), 0};
  }
  void step(State& s, RngStream& rng, const Clamp* clamp) const {
    s.h = detail::draw_column(f_, s.x, nullptr, rng);
    s.x = detail::draw_column(g_, s.h, clamp, rng);
  }
  Vector visible(const State& s) const { return index_to_bits(s.x, visible_dim()); }
  Vector mean_field(const State& s) const { return visible(s); }

 private:
  Tensor2 f_;
  Tensor2 g_;
};

// ---------------------------------------------------------------------------
// Dependency networks.

/// P(X_var = 1 | x_{-var}) for binary variables, tabulated over the 2^(n-1)
/// assignments of the other variables (their bits packed in order, skipping
/// `var`).
struct TableConditional {
  std::size_t var = 0;
  Vector p_one;

  static std::size_t context_index(std::span<const double> x, std::size_t var) {
    std::size_t idx = 0, bit = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (i == var) continue;
      if (x[i] != 0.0) idx |= std::size_t{1} << bit;
      ++bit;
    }
    return idx;
  }

  double operator()(std::span<const double> x) const {
    const std::size_t idx = context_index(x, var);
    if (idx >= p_one.size()) throw RangeError("TableConditional: context out of range");
    return p_one[idx];
  }
};

/// Random-scan Gibbs over binary variables: each step picks s uniformly and
/// resamples X_s from conds[s](x). The conditionals need not be consistent.
template <class Cond>
  requires std::invocable<const Cond&, std::span<const double>>
ChainSamples run_depnet_chain(const std::vector<Cond>& conds, const ChainRun& run) {
  if (conds.empty()) throw ParameterError("run_depnet_chain: no conditionals");
  if (run.thin < 1) throw ParameterError("run_depnet_chain: thin must be >= 1");
  const std::size_t n = conds.size();
  const Clamp* clamp = run.clamp ? &*run.clamp : nullptr;
  if (clamp) validate_clamp(*clamp, n);
  RngStream rng(run.seed);
  ChainSamples out{Tensor2(0, n), Tensor2(0, n)};
  if (run.n_samples == 0) return out;
  Vector x(n);
  for (double& v : x) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  apply_clamp(clamp, x);
  Vector p(n, 0.5);
  auto step = [&] {
    const std::size_t s = rng.below(n);
    if (clamp && std::find(clamp->indices.begin(), clamp->indices.end(), s) != clamp->indices.end())
      return;
    p[s] = conds[s](std::span<const double>(x));
    x[s] = rng.uniform() < p[s] ? 1.0 : 0.0;
  };
  for (std::size_t t = 0; t < run.burn_in; ++t) step();
  for (std::size_t i = 0; i < run.n_samples; ++i) {
    for (std::size_t t = 0; t < run.thin; ++t) step();
    out.samples.append_row(x);
    out.means.append_row(p);
  }
  return out;
}

}  // namespace gsn

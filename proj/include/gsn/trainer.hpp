#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gsn/corruption.hpp"
#include "gsn/error.hpp"
#include "gsn/network.hpp"
#include "gsn/numkit.hpp"
#include "gsn/recon.hpp"
#include "gsn/rng.hpp"

namespace gsn {

/// How many reconstruction steps each training example is unrolled for.
struct Walkback {
  enum class Mode { None, Geometric, Fixed };
  Mode mode = Mode::None;
  double p = 0.5;
  std::size_t k = 1;

  static Walkback none() { return {}; }
  static Walkback geometric(double p) { return {Mode::Geometric, p, 1}; }
  static Walkback fixed(std::size_t k) { return {Mode::Fixed, 0.5, k}; }

  /// Accepts "none", "geom:P" and "fixed:K".
  static Walkback parse(const std::string& spec) {
    if (spec == "none") return none();
    const auto colon = spec.find(':');
    if (colon == std::string::npos) throw ParameterError("walkback spec '" + spec + "' not understood");
    const std::string head = spec.substr(0, colon), tail = spec.substr(colon + 1);
    try {
      if (head == "geom") return geometric(std::stod(tail));
      if (head == "fixed") return fixed(static_cast<std::size_t>(std::stoul(tail)));
    } catch (const std::logic_error&) {
    }
    throw ParameterError("walkback spec '" + spec + "' not understood");
  }

  std::string to_string() const {
    std::ostringstream os;
    switch (mode) {
      case Mode::None: return "none";
      case Mode::Geometric: os << "geom:" << p; return os.str();
      case Mode::Fixed: return "fixed:" + std::to_string(k);
    }
    return "none";
  }

  friend bool operator==(const Walkback&, const Walkback&) = default;
};

enum class H0Policy { Zero, Persist };

struct TrainConfig {
  std::size_t epochs = 1;
  double lr = 0.25;
  double momentum = 0.5;
  double lr_decay = 0.99;
  std::size_t minibatch = 1;
  Walkback walkback;
  bool collect_intermediate = true;
  H0Policy h0_policy = H0Policy::Zero;
  bool learn_alpha = true;
  std::size_t k_max = 20;  // truncation of geometric walk lengths
  bool per_unit_loss = true;  // step on NLL / visible_dim; reported NLL stays per example

  void validate() const {
    if (!(lr >= 0.0)) throw ParameterError("lr must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ParameterError("lr_decay must lie in (0, 1]");
    if (minibatch < 1) throw ParameterError("minibatch must be >= 1");
    if (k_max < 1) throw ParameterError("k_max must be >= 1");
    if (walkback.mode == Walkback::Mode::Fixed && walkback.k < 1)
      throw ParameterError("fixed walkback needs k >= 1");
    if (walkback.mode == Walkback::Mode::Geometric && !(walkback.p > 0.0 && walkback.p <= 1.0))
      throw ParameterError("geometric walkback needs p in (0, 1]");
  }

  /// Number of distinct scaling factors the model should carry.
  std::size_t alpha_steps() const {
    switch (walkback.mode) {
      case Walkback::Mode::None: return 1;
      case Walkback::Mode::Geometric: return k_max;
      case Walkback::Mode::Fixed: return walkback.k;
    }
    return 1;
  }
};

/// A training pair: reconstruct `target` from `x_tilde` at walkback step `step`.
template <class State>
struct WalkbackPair {
  State target;
  State x_tilde;
  std::size_t step = 0;
};

/// Generic walkback rollout: alternates corrupt -> reconstruct k times from
/// x0 and returns (x0, x_tilde_j) for every step, or only the last when
/// `collect_intermediate` is false.
///
/// `corrupt(x, rng)` samples C(. | x); `reconstruct(x_tilde, step, rng)`
/// samples the current model's P(X | x_tilde).
template <class State, class CorruptFn, class ReconstructFn>
  requires std::invocable<CorruptFn&, const State&, RngStream&>
std::vector<WalkbackPair<State>> walkback_rollout(CorruptFn&& corrupt_fn, ReconstructFn&& reconstruct,
                                                  const State& x0, std::size_t k,
                                                  bool collect_intermediate, RngStream& rng) {
  if (k < 1) throw ParameterError("walkback_rollout: k must be >= 1");
  std::vector<WalkbackPair<State>> pairs;
  State x = x0;
  for (std::size_t j = 0; j < k; ++j) {
    State xt = corrupt_fn(x, rng);
    if (j + 1 < k) x = reconstruct(xt, j, rng);
    if (collect_intermediate || j + 1 == k) pairs.push_back({x0, std::move(xt), j});
  }
  return pairs;
}

/// Walkback rollout driven by a GsnModel (hidden state carried across steps).
inline std::vector<WalkbackPair<Vector>> walkback_rollout(const GsnModel& m, const Corruptor& c,
                                                          std::span<const double> x0, std::size_t k,
                                                          bool collect_intermediate, RngStream& rng) {
  if (k < 1) throw ParameterError("walkback_rollout: k must be >= 1");
  const UnrolledGraph g = unroll(m, x0, c, k, {}, rng);
  std::vector<WalkbackPair<Vector>> pairs;
  const Vector target(x0.begin(), x0.end());
  for (std::size_t j = 0; j < g.steps.size(); ++j)
    if (collect_intermediate || j + 1 == g.steps.size())
      pairs.push_back({target, g.nodes[g.steps[j].x_tilde_node].value, j});
  return pairs;
}

/// v <- momentum * v - lr * g;  theta <- theta + v
inline void sgd_update(ParamSet& params, const GradientSet& grads, ParamSet& velocity, double lr,
                       double momentum) {
  zip_blocks(velocity, grads, [&](std::span<double> v, std::span<const double> gr) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = momentum * v[i] - lr * gr[i];
  });
  zip_blocks(params, std::as_const(velocity), [](std::span<double> p, std::span<const double> v) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += v[i];
  });
}

/// Loss and gradients of one unrolled trajectory against its clean example.
struct TrajectoryLoss {
  double total = 0.0;
  std::size_t terms = 0;
  std::vector<ReconGrads> grads;
};

/// Sums the step NLLs of target x0; steps before the last are included only
/// when `collect_intermediate` is set.
inline TrajectoryLoss trajectory_loss(const GsnModel& m, const UnrolledGraph& g,
                                      std::span<const double> x0, bool collect_intermediate) {
  TrajectoryLoss out;
  out.grads.resize(g.steps.size());
  for (std::size_t t = 0; t < g.steps.size(); ++t) {
    if (!collect_intermediate && t + 1 != g.steps.size()) continue;
    NllResult r = nll(g.steps[t].recon, t, m.alphas(), x0);
    out.total += r.loss;
    ++out.terms;
    out.grads[t] = std::move(r.grads);
  }
  return out;
}

struct EpochReport {
  std::size_t epoch = 0;
  double mean_nll = 0.0;
  double lr_used = 0.0;
};

/// SGD-with-momentum training loop over unrolled walkback trajectories.
/// Owns the optimizer state (velocity, decayed learning rate, stored H_0's);
/// the model is borrowed.
class Trainer {
 public:
  Trainer(GsnModel& model, Corruptor corruptor, TrainConfig config)
      : model_(model),
        corruptor_(std::move(corruptor)),
        config_(std::move(config)),
        velocity_(model.params().zeros_like()),
        lr_(config_.lr) {
    config_.validate();
  }

  const TrainConfig& config() const noexcept { return config_; }
  double current_lr() const noexcept { return lr_; }
  std::size_t epochs_done() const noexcept { return epoch_; }

  std::size_t draw_steps(RngStream& rng) const {
    switch (config_.walkback.mode) {
      case Walkback::Mode::None: return 1;
      case Walkback::Mode::Fixed: return config_.walkback.k;
      case Walkback::Mode::Geometric:
        return std::min(draw_geometric(config_.walkback.p, rng), config_.k_max);
    }
    return 1;
  }

  EpochReport train_epoch(const Tensor2& data, RngStream& rng) {
    if (data.rows() == 0) throw ParameterError("train_epoch: empty dataset");
    if (data.cols() != model_.visible_dim())
      throw ShapeError("train_epoch: data has " + std::to_string(data.cols()) +
                       " columns, model visible size " + std::to_string(model_.visible_dim()));
    if (config_.h0_policy == H0Policy::Persist && h0_table_.size() != data.rows())
      h0_table_.assign(data.rows(), {});

    std::vector<std::size_t> order(data.rows());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[rng.below(i + 1)]);

    double loss_sum = 0.0;
    std::size_t loss_terms = 0;
    std::optional<GradientSet> batch;
    std::size_t in_batch = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t idx = order[pos];
      const auto x0 = data.row(idx);
      const std::size_t steps = draw_steps(rng);
      static const std::vector<Vector> kNoH0;
      const auto& h0 = config_.h0_policy == H0Policy::Persist ? h0_table_[idx] : kNoH0;
      const UnrolledGraph g = unroll(model_, x0, corruptor_, steps, h0, rng);
      TrajectoryLoss tl = trajectory_loss(model_, g, x0, config_.collect_intermediate);
      if (!std::isfinite(tl.total)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch_ << ", example " << idx << ", lr "
           << lr_;
        throw DivergenceError(os.str());
      }
      loss_sum += tl.total;
      loss_terms += tl.terms;
      if (config_.per_unit_loss) {
        const double inv = 1.0 / static_cast<double>(model_.visible_dim());
        for (auto& gr : tl.grads) {
          for (double& v : gr.d_a) v *= inv;
          for (double& v : gr.d_log_sigma) v *= inv;
          gr.d_log_alpha *= inv;
        }
      }
      if (!config_.learn_alpha)
        for (auto& gr : tl.grads) gr.d_log_alpha = 0.0;
      GradientSet grads = backward(model_, g, tl.grads);
      if (config_.h0_policy == H0Policy::Persist) h0_table_[idx] = g.values(g.first_hidden);

      if (config_.minibatch == 1) {
        sgd_update(model_.params(), grads, velocity_, lr_, config_.momentum);
        continue;
      }
      if (!batch) {
        batch = std::move(grads);
      } else {
        zip_blocks(*batch, std::as_const(grads), [](std::span<double> acc, std::span<const double> gr) {
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gr[i];
        });
      }
      if (++in_batch == config_.minibatch || pos + 1 == order.size()) {
        const double scale = 1.0 / static_cast<double>(in_batch);
        zip_blocks(*batch, *batch, [&](std::span<double> acc, std::span<double>) {
          for (double& v : acc) v *= scale;
        });
        sgd_update(model_.params(), *batch, velocity_, lr_, config_.momentum);
        batch.reset();
        in_batch = 0;
      }
    }
    EpochReport rep{epoch_, loss_terms ? loss_sum / static_cast<double>(loss_terms) : 0.0, lr_};
    lr_ *= config_.lr_decay;
    ++epoch_;
    return rep;
  }

 private:
  GsnModel& model_;
  Corruptor corruptor_;
  TrainConfig config_;
  ParamSet velocity_;
  double lr_;
  std::size_t epoch_ = 0;
  std::vector<std::vector<Vector>> h0_table_;
};

}  // namespace gsn

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gsn/corruption.hpp"
#include "gsn/error.hpp"
#include "gsn/numkit.hpp"
#include "gsn/recon.hpp"
#include "gsn/rng.hpp"

namespace gsn {

/// Pre- and post-activation noise of one hidden layer.
struct LayerNoise {
  double sigma_in = 0.0;
  double sigma_out = 0.0;
  friend bool operator==(const LayerNoise&, const LayerNoise&) = default;
};

/// Trainable parameters. Also used, with the same layout, for gradients and
/// momentum buffers.
///
/// weights[l] maps layer l to layer l+1 and has shape size(l) x size(l+1);
/// the downward map is its transpose and is never stored.
/// biases[l] belongs to layer l (biases[0] is the visible bias).
struct ParamSet {
  std::vector<Tensor2> weights;
  std::vector<Vector> biases;
  Vector log_sigma;  // Gaussian head only
  ScalingFactors alphas;

  ParamSet zeros_like() const {
    ParamSet z;
    for (const auto& w : weights) z.weights.emplace_back(w.rows(), w.cols());
    for (const auto& b : biases) z.biases.emplace_back(b.size(), 0.0);
    z.log_sigma.assign(log_sigma.size(), 0.0);
    z.alphas = ScalingFactors(Vector(alphas.size(), 0.0));
    return z;
  }

  double squared_norm() const {
    double s = 0.0;
    auto add = [&](std::span<const double> v) {
      for (double x : v) s += x * x;
    };
    for (const auto& w : weights) add(w.data());
    for (const auto& b : biases) add(b);
    add(log_sigma);
    add(alphas.log_alpha());
    return s;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

using GradientSet = ParamSet;

/// Calls fn(block_a, block_b) on every pair of matching parameter blocks.
/// Either set may be const; the spans inherit its constness.
template <class A, class B, class Fn>
void zip_blocks(A& a, B& b, Fn&& fn) {
  if (a.weights.size() != b.weights.size() || a.biases.size() != b.biases.size() ||
      a.log_sigma.size() != b.log_sigma.size() || a.alphas.size() != b.alphas.size())
    throw ShapeError("parameter set layouts differ");
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l].size() != b.weights[l].size())
      throw ShapeError("weight block " + std::to_string(l) + ": " + a.weights[l].shape_string() +
                       " vs " + b.weights[l].shape_string());
    fn(a.weights[l].data(), b.weights[l].data());
  }
  for (std::size_t l = 0; l < a.biases.size(); ++l) {
    if (a.biases[l].size() != b.biases[l].size())
      throw ShapeError("bias block " + std::to_string(l) + " size mismatch");
    fn(std::span(a.biases[l]), std::span(b.biases[l]));
  }
  fn(std::span(a.log_sigma), std::span(b.log_sigma));
  fn(std::span(a.alphas.log_alpha()), std::span(b.alphas.log_alpha()));
}

/// Noise schedule with `sigma` on every hidden layer except the first.
inline std::vector<LayerNoise> noise_above_first(std::size_t depth, double sigma) {
  std::vector<LayerNoise> n(depth, LayerNoise{sigma, sigma});
  if (!n.empty()) n.front() = LayerNoise{};
  return n;
}

/// Stack of tanh layers with tied up/down weights and a factorized
/// reconstruction head on the visible layer.
class GsnModel {
 public:
  GsnModel(std::vector<std::size_t> layer_sizes, HeadKind head, std::vector<LayerNoise> noise,
           std::size_t alpha_steps = 1)
      : sizes_(std::move(layer_sizes)), head_(head), noise_(std::move(noise)) {
    if (sizes_.size() < 2) throw ParameterError("GsnModel needs a visible and at least one hidden layer");
    for (std::size_t s : sizes_)
      if (s == 0) throw ParameterError("GsnModel layer sizes must be positive");
    if (noise_.size() != depth())
      throw ParameterError("GsnModel: " + std::to_string(noise_.size()) +
                           " noise entries for depth " + std::to_string(depth()));
    for (const auto& n : noise_) check_noise_levels(n.sigma_in, n.sigma_out);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
      params_.weights.emplace_back(sizes_[l], sizes_[l + 1]);
    for (std::size_t s : sizes_) params_.biases.emplace_back(s, 0.0);
    if (head_ == HeadKind::Gaussian) params_.log_sigma.assign(sizes_[0], 0.0);
    params_.alphas = ScalingFactors(alpha_steps);
  }

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), everything else zero.
  static GsnModel initialized(std::vector<std::size_t> layer_sizes, HeadKind head,
                              std::vector<LayerNoise> noise, std::size_t alpha_steps,
                              RngStream& rng) {
    GsnModel m(std::move(layer_sizes), head, std::move(noise), alpha_steps);
    for (auto& w : m.params_.weights) {
      const double r = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      for (double& v : w.data()) v = r * (2.0 * rng.uniform() - 1.0);
    }
    return m;
  }

  std::size_t depth() const noexcept { return sizes_.size() - 1; }
  std::size_t visible_dim() const noexcept { return sizes_[0]; }
  const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
  HeadKind head() const noexcept { return head_; }

  const std::vector<LayerNoise>& noise() const noexcept { return noise_; }
  void set_noise(std::vector<LayerNoise> noise) {
    if (noise.size() != depth()) throw ParameterError("set_noise: wrong number of layers");
    for (const auto& n : noise) check_noise_levels(n.sigma_in, n.sigma_out);
    noise_ = std::move(noise);
  }

  ParamSet& params() noexcept { return params_; }
  const ParamSet& params() const noexcept { return params_; }
  const ScalingFactors& alphas() const noexcept { return params_.alphas; }

  friend bool operator==(const GsnModel&, const GsnModel&) = default;

 private:
  std::vector<std::size_t> sizes_;
  HeadKind head_;
  std::vector<LayerNoise> noise_;
  ParamSet params_;
};

/// Visible vector plus one vector per hidden layer (h[0] is layer 1).
struct ChainState {
  Vector x;
  std::vector<Vector> h;

  static ChainState zeros(const GsnModel& m) {
    ChainState s{Vector(m.visible_dim(), 0.0), {}};
    for (std::size_t l = 1; l <= m.depth(); ++l) s.h.emplace_back(m.layer_sizes()[l], 0.0);
    return s;
  }
};

inline void check_state(const GsnModel& m, const ChainState& s) {
  if (s.x.size() != m.visible_dim())
    throw ShapeError("chain state visible size " + std::to_string(s.x.size()) + " vs model " +
                     std::to_string(m.visible_dim()));
  if (s.h.size() != m.depth())
    throw ShapeError("chain state has " + std::to_string(s.h.size()) + " hidden layers, model " +
                     std::to_string(m.depth()));
  for (std::size_t l = 0; l < s.h.size(); ++l)
    if (s.h[l].size() != m.layer_sizes()[l + 1])
      throw ShapeError("hidden layer " + std::to_string(l + 1) + " has size " +
                       std::to_string(s.h[l].size()) + ", model expects " +
                       std::to_string(m.layer_sizes()[l + 1]));
}

namespace detail {

/// a_l = below * W_{l-1} + above * W_l^T + b_l for hidden layer l (1-based).
inline Vector layer_preactivation(const GsnModel& m, std::size_t layer,
                                  std::span<const double> below,
                                  std::optional<std::span<const double>> above) {
  const auto& p = m.params();
  Vector a(m.layer_sizes()[layer]);
  kernel::affine_rows(below, p.weights[layer - 1], p.biases[layer], a);
  if (above) kernel::accumulate_transposed(*above, p.weights[layer], a);
  return a;
}

struct UnitNoise {
  Vector eta_in, eta_out, activation;
};

inline Vector noisy_tanh(std::span<const double> a, const LayerNoise& noise, RngStream& rng,
                         UnitNoise& rec) {
  rec.eta_in.assign(a.size(), 0.0);
  rec.eta_out.assign(a.size(), 0.0);
  rec.activation.resize(a.size());
  Vector h(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (noise.sigma_in > 0.0) rec.eta_in[i] = noise.sigma_in * rng.normal();
    if (noise.sigma_out > 0.0) rec.eta_out[i] = noise.sigma_out * rng.normal();
    rec.activation[i] = std::tanh(rec.eta_in[i] + a[i]);
    h[i] = rec.eta_out[i] + rec.activation[i];
  }
  return h;
}

inline Vector replay_tanh(std::span<const double> a, UnitNoise& rec) {
  Vector h(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    rec.activation[i] = std::tanh(rec.eta_in[i] + a[i]);
    h[i] = rec.eta_out[i] + rec.activation[i];
  }
  return h;
}

/// Update order of one sweep: odd layers, then even layers.
inline std::vector<std::size_t> sweep_order(std::size_t depth) {
  std::vector<std::size_t> order;
  for (std::size_t l = 1; l <= depth; l += 2) order.push_back(l);
  for (std::size_t l = 2; l <= depth; l += 2) order.push_back(l);
  return order;
}

}  // namespace detail

/// Noise recorded by encode_step, one tape per hidden layer (index l-1).
struct EncodeResult {
  std::vector<Vector> h;
  std::vector<NoiseTape> tapes;
};

/// One odd-then-even sweep over the hidden layers. Layer 1 reads the
/// corrupted visible vector; every layer reads the current value of the
/// layer above through the transposed weights.
inline EncodeResult encode_step(const GsnModel& m, const ChainState& state,
                                std::span<const double> x_corrupted, RngStream& rng) {
  check_state(m, state);
  if (x_corrupted.size() != m.visible_dim())
    throw ShapeError("encode_step: corrupted input of size " + std::to_string(x_corrupted.size()));
  EncodeResult r{state.h, std::vector<NoiseTape>(m.depth())};
  for (std::size_t l : detail::sweep_order(m.depth())) {
    std::span<const double> below = l == 1 ? x_corrupted : std::span<const double>(r.h[l - 2]);
    std::optional<std::span<const double>> above;
    if (l < m.depth()) above = std::span<const double>(r.h[l]);
    const Vector a = detail::layer_preactivation(m, l, below, above);
    detail::UnitNoise rec;
    r.h[l - 1] = detail::noisy_tanh(a, m.noise()[l - 1], rng, rec);
    const std::size_t n = a.size();
    r.tapes[l - 1] = NoiseTape{Tensor2(1, n, std::move(rec.eta_in)),
                               Tensor2(1, n, std::move(rec.eta_out)),
                               Tensor2(1, n, std::move(rec.activation))};
  }
  return r;
}

/// Recomputes an encode_step from its tapes; bit-identical to the original.
inline std::vector<Vector> replay_encode(const GsnModel& m, const ChainState& state,
                                         std::span<const double> x_corrupted,
                                         const std::vector<NoiseTape>& tapes) {
  check_state(m, state);
  if (tapes.size() != m.depth()) throw ConsistencyError("replay_encode: tape count mismatch");
  std::vector<Vector> h = state.h;
  for (std::size_t l : detail::sweep_order(m.depth())) {
    std::span<const double> below = l == 1 ? x_corrupted : std::span<const double>(h[l - 2]);
    std::optional<std::span<const double>> above;
    if (l < m.depth()) above = std::span<const double>(h[l]);
    const Vector a = detail::layer_preactivation(m, l, below, above);
    const Tensor2 out = noisy_tanh_replay(Tensor2::row_vector(a), tapes[l - 1]);
    h[l - 1].assign(out.data().begin(), out.data().end());
  }
  return h;
}

/// Reconstruction parameters from layer 1: W_0 h_1 + b_0 (logits or mu).
inline ReconParams decode_hidden(const GsnModel& m, std::span<const double> h1) {
  const auto& p = m.params();
  Vector a(p.biases[0]);
  kernel::accumulate_transposed(h1, p.weights[0], a);
  if (m.head() == HeadKind::Bernoulli) return ReconParams::bernoulli(std::move(a));
  return ReconParams::gaussian(std::move(a), p.log_sigma);
}

inline ReconParams decode_step(const GsnModel& m, const ChainState& state) {
  check_state(m, state);
  return decode_hidden(m, state.h[0]);
}

// ---------------------------------------------------------------------------
// Unrolled computational graph.

/// One value in the unrolled graph. Constants are the corrupted visible
/// inputs and the initial hidden state; hidden nodes are noisy tanh units.
struct GraphNode {
  enum class Kind { Constant, Hidden };
  Kind kind = Kind::Constant;
  std::size_t layer = 0;  // 0 for visible constants
  std::ptrdiff_t below = -1;
  std::ptrdiff_t above = -1;
  Vector value;
  detail::UnitNoise noise;
};

struct GraphStep {
  std::size_t x_tilde_node = 0;
  std::size_t h1_node = 0;
  ReconParams recon;
  Vector x_sampled;  // visible sample drawn from `recon` (empty on the last step)
};

/// Trajectory of a walkback/GSN rollout with every sampled quantity frozen.
struct UnrolledGraph {
  std::vector<std::size_t> layer_sizes;
  std::vector<GraphNode> nodes;
  std::vector<GraphStep> steps;
  std::vector<std::size_t> first_hidden;  // node id of each layer after the first sweep (H_1)
  std::vector<std::size_t> final_hidden;  // node id of each layer after the last sweep

  std::vector<Vector> values(const std::vector<std::size_t>& ids) const {
    std::vector<Vector> h;
    for (std::size_t id : ids) h.push_back(nodes[id].value);
    return h;
  }
};

namespace detail {

inline std::size_t add_constant(UnrolledGraph& g, std::size_t layer, Vector v) {
  GraphNode n;
  n.kind = GraphNode::Kind::Constant;
  n.layer = layer;
  n.value = std::move(v);
  g.nodes.push_back(std::move(n));
  return g.nodes.size() - 1;
}

inline void sweep_into_graph(const GsnModel& m, UnrolledGraph& g, std::vector<std::size_t>& current,
                             std::size_t x_tilde_node, RngStream& rng) {
  for (std::size_t l : sweep_order(m.depth())) {
    GraphNode n;
    n.kind = GraphNode::Kind::Hidden;
    n.layer = l;
    n.below = static_cast<std::ptrdiff_t>(l == 1 ? x_tilde_node : current[l - 2]);
    n.above = l < m.depth() ? static_cast<std::ptrdiff_t>(current[l]) : -1;
    std::optional<std::span<const double>> above;
    if (n.above >= 0) above = std::span<const double>(g.nodes[static_cast<std::size_t>(n.above)].value);
    const Vector a = layer_preactivation(
        m, l, g.nodes[static_cast<std::size_t>(n.below)].value, above);
    n.value = noisy_tanh(a, m.noise()[l - 1], rng, n.noise);
    g.nodes.push_back(std::move(n));
    current[l - 1] = g.nodes.size() - 1;
  }
}

}  // namespace detail

/// Runs the chain for `steps` reconstructions starting from the clean
/// example `x0` and hidden state `h0` (zeros when empty). Each step corrupts
/// the current visible, performs one sweep, decodes with the step's scaling
/// factor and samples the next visible.
inline UnrolledGraph unroll(const GsnModel& m, std::span<const double> x0, const Corruptor& corruptor,
                            std::size_t steps, const std::vector<Vector>& h0, RngStream& rng) {
  if (x0.size() != m.visible_dim())
    throw ShapeError("unroll: example of size " + std::to_string(x0.size()) + ", model visible " +
                     std::to_string(m.visible_dim()));
  if (steps == 0) throw ParameterError("unroll: need at least one step");
  UnrolledGraph g;
  g.layer_sizes = m.layer_sizes();
  std::vector<std::size_t> current(m.depth());
  for (std::size_t l = 1; l <= m.depth(); ++l) {
    Vector init = h0.empty() ? Vector(m.layer_sizes()[l], 0.0) : h0[l - 1];
    if (init.size() != m.layer_sizes()[l]) throw ShapeError("unroll: initial hidden state size");
    current[l - 1] = detail::add_constant(g, l, std::move(init));
  }
  Vector x(x0.begin(), x0.end());
  for (std::size_t t = 0; t < steps; ++t) {
    GraphStep st;
    st.x_tilde_node = detail::add_constant(g, 0, corrupt(corruptor, x, rng).values);
    detail::sweep_into_graph(m, g, current, st.x_tilde_node, rng);
    st.h1_node = current[0];
    if (t == 0) g.first_hidden = current;
    st.recon = decode_hidden(m, g.nodes[st.h1_node].value);
    if (t + 1 < steps) {
      st.x_sampled = sample(st.recon, t, m.alphas(), rng);
      x = st.x_sampled;
    }
    g.steps.push_back(std::move(st));
  }
  g.final_hidden = current;
  return g;
}

inline void check_graph(const GsnModel& m, const UnrolledGraph& g) {
  if (g.layer_sizes != m.layer_sizes())
    throw ConsistencyError("unrolled graph was recorded with a different architecture");
}

/// Recomputes every hidden value and reconstruction of `g` under the (possibly
/// modified) parameters of `m`, keeping all noise and corrupted inputs frozen.
inline void replay(const GsnModel& m, UnrolledGraph& g) {
  check_graph(m, g);
  for (auto& n : g.nodes) {
    if (n.kind != GraphNode::Kind::Hidden) continue;
    std::optional<std::span<const double>> above;
    if (n.above >= 0) above = std::span<const double>(g.nodes[static_cast<std::size_t>(n.above)].value);
    const Vector a = detail::layer_preactivation(
        m, n.layer, g.nodes[static_cast<std::size_t>(n.below)].value, above);
    n.value = detail::replay_tanh(a, n.noise);
  }
  for (auto& st : g.steps) st.recon = decode_hidden(m, g.nodes[st.h1_node].value);
}

/// Backpropagates per-step reconstruction gradients through the unrolled
/// graph. `loss_grads[t]` is the gradient of the loss w.r.t. the
/// reconstruction parameters of step t (an empty d_a means step t carries no
/// loss). Visible samples are constants: nothing flows through them.
inline GradientSet backward(const GsnModel& m, const UnrolledGraph& g,
                            const std::vector<ReconGrads>& loss_grads) {
  check_graph(m, g);
  if (loss_grads.size() != g.steps.size())
    throw ConsistencyError("backward: " + std::to_string(loss_grads.size()) +
                           " loss gradients for " + std::to_string(g.steps.size()) + " steps");
  const auto& p = m.params();
  GradientSet grads = p.zeros_like();
  std::vector<Vector> node_grad(g.nodes.size());
  auto grad_of = [&](std::size_t id) -> Vector& {
    if (node_grad[id].empty()) node_grad[id].assign(g.nodes[id].value.size(), 0.0);
    return node_grad[id];
  };

  for (std::size_t t = 0; t < g.steps.size(); ++t) {
    const ReconGrads& lg = loss_grads[t];
    if (lg.d_a.empty()) continue;
    if (lg.d_a.size() != m.visible_dim()) throw ConsistencyError("backward: gradient size mismatch");
    const auto& h1 = g.nodes[g.steps[t].h1_node].value;
    kernel::add_outer(lg.d_a, h1, grads.weights[0]);
    for (std::size_t i = 0; i < lg.d_a.size(); ++i) grads.biases[0][i] += lg.d_a[i];
    kernel::accumulate_rows(lg.d_a, p.weights[0], grad_of(g.steps[t].h1_node));
    if (m.head() == HeadKind::Gaussian && !lg.d_log_sigma.empty())
      for (std::size_t i = 0; i < lg.d_log_sigma.size(); ++i)
        grads.log_sigma[i] += lg.d_log_sigma[i];
    grads.alphas.log_alpha()[lg.alpha_index] += lg.d_log_alpha;
  }

  for (std::size_t id = g.nodes.size(); id-- > 0;) {
    const GraphNode& n = g.nodes[id];
    if (n.kind != GraphNode::Kind::Hidden || node_grad[id].empty()) continue;
    const Vector& gh = node_grad[id];
    Vector ga(gh.size());
    for (std::size_t i = 0; i < gh.size(); ++i)
      ga[i] = gh[i] * (1.0 - n.noise.activation[i] * n.noise.activation[i]);
    const std::size_t l = n.layer;
    const auto below = static_cast<std::size_t>(n.below);
    kernel::add_outer(g.nodes[below].value, ga, grads.weights[l - 1]);
    if (g.nodes[below].kind == GraphNode::Kind::Hidden)
      kernel::accumulate_transposed(ga, p.weights[l - 1], grad_of(below));
    if (n.above >= 0) {
      const auto above = static_cast<std::size_t>(n.above);
      kernel::add_outer(ga, g.nodes[above].value, grads.weights[l]);
      if (g.nodes[above].kind == GraphNode::Kind::Hidden)
        kernel::accumulate_rows(ga, p.weights[l], grad_of(above));
    }
    for (std::size_t i = 0; i < ga.size(); ++i) grads.biases[l][i] += ga[i];
  }
  return grads;
}

}  // namespace gsn

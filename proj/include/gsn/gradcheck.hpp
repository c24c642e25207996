#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "gsn/corruption.hpp"
#include "gsn/network.hpp"
#include "gsn/numkit.hpp"
#include "gsn/recon.hpp"
#include "gsn/rng.hpp"
#include "gsn/trainer.hpp"

namespace gsn::gradcheck {

inline constexpr double kStep = 1e-5;

/// ||a - b|| / max(||a|| + ||b||, 1e-8).
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), 1e-8);
}

/// Central differences of f over every entry of v; v is restored.
inline Vector numeric_gradient(std::span<double> v, const std::function<double()>& f, double h = kStep) {
  Vector g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// A small random model with a clean example and a matching corruptor.
struct Case {
  GsnModel model;
  Vector x0;
  Corruptor corruptor;
};

inline Case random_case(RngStream& rng) {
  const std::size_t depth = 1 + rng.below(3);
  std::vector<std::size_t> sizes{2 + rng.below(5)};
  for (std::size_t l = 0; l < depth; ++l) sizes.push_back(2 + rng.below(4));
  const HeadKind head = rng.uniform() < 0.5 ? HeadKind::Bernoulli : HeadKind::Gaussian;
  GsnModel m = GsnModel::initialized(sizes, head, noise_above_first(depth, 0.5), 1 + rng.below(2 * depth), rng);
  for (auto& b : m.params().biases)
    for (double& v : b) v = 0.3 * rng.normal();
  for (double& v : m.params().log_sigma) v = 0.3 * rng.normal();
  for (double& v : m.params().alphas.log_alpha()) v = 0.2 * rng.normal();
  Vector x0(sizes[0]);
  for (double& v : x0) v = head == HeadKind::Bernoulli ? static_cast<double>(rng.below(2)) : rng.normal();
  Corruptor c = head == HeadKind::Bernoulli ? Corruptor(SaltPepper{0.3}) : Corruptor(AdditiveGaussian{0.5});
  return {std::move(m), std::move(x0), std::move(c)};
}

/// Summed step NLL of x0 after replaying g under the parameters of m.
inline double replayed_loss(const GsnModel& m, UnrolledGraph& g, std::span<const double> x0) {
  replay(m, g);
  double total = 0.0;
  for (std::size_t t = 0; t < g.steps.size(); ++t) total += nll(g.steps[t].recon, t, m.alphas(), x0).loss;
  return total;
}

inline Vector flatten(const ParamSet& p) {
  Vector out;
  zip_blocks(p, p, [&](std::span<const double> a, std::span<const double>) {
    out.insert(out.end(), a.begin(), a.end());
  });
  return out;
}

/// Relative error of backward() over every parameter, for a 2*depth step
/// unroll whose noise and corruptions stay frozen.
inline double unroll_error(const Case& c, RngStream& rng) {
  const std::size_t steps = 2 * c.model.depth();
  const UnrolledGraph g = unroll(c.model, c.x0, c.corruptor, steps, {}, rng);
  const TrajectoryLoss tl = trajectory_loss(c.model, g, c.x0, true);
  const GradientSet analytic = backward(c.model, g, tl.grads);

  GsnModel probe = c.model;
  UnrolledGraph work = g;
  auto f = [&] { return replayed_loss(probe, work, c.x0); };
  GradientSet numeric = analytic.zeros_like();
  zip_blocks(probe.params(), numeric, [&](std::span<double> p, std::span<double> out) {
    const Vector fd = numeric_gradient(p, f);
    std::copy(fd.begin(), fd.end(), out.begin());
  });
  return relative_error(flatten(analytic), flatten(numeric));
}

/// Worst relative error of the noisy tanh, affine and head gradients.
inline double layer_error(RngStream& rng) {
  double worst = 0.0;
  {
    const std::size_t rows = 1 + rng.below(3), cols = 1 + rng.below(6);
    Tensor2 a(rows, cols), w(rows, cols);
    for (double& v : a.data()) v = rng.normal();
    for (double& v : w.data()) v = rng.normal();
    const auto [h, tape] = noisy_tanh_forward(a, 0.7, 0.7, rng);
    const Tensor2 ga = noisy_tanh_backward(tape, w);
    const Vector fd = numeric_gradient(a.data(), [&] {
      const Tensor2 out = noisy_tanh_replay(a, tape);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += w.data()[i] * out.data()[i];
      return s;
    });
    worst = std::max(worst, relative_error(ga.data(), fd));
  }
  {
    const std::size_t n = 1 + rng.below(4), m = 1 + rng.below(5);
    Vector in(n), bias(m), probe(m);
    Tensor2 w(n, m);
    for (double& v : in) v = rng.normal();
    for (double& v : bias) v = rng.normal();
    for (double& v : probe) v = rng.normal();
    for (double& v : w.data()) v = rng.normal();
    auto f = [&] {
      Vector out(m);
      kernel::affine_rows(in, w, bias, out);
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += probe[j] * out[j];
      return s;
    };
    Tensor2 gw(n, m);
    kernel::add_outer(in, probe, gw);
    Vector gin(n, 0.0);
    kernel::accumulate_transposed(probe, w, gin);
    worst = std::max({worst, relative_error(gw.data(), numeric_gradient(w.data(), f)),
                      relative_error(gin, numeric_gradient(in, f)),
                      relative_error(probe, numeric_gradient(bias, f))});
  }
  {
    const Case c = random_case(rng);
    Vector h1(c.model.layer_sizes()[1]);
    for (double& v : h1) v = std::tanh(rng.normal());
    const std::size_t step = rng.below(4);
    GsnModel probe = c.model;
    auto f = [&] { return nll(decode_hidden(probe, h1), step, probe.alphas(), c.x0).loss; };
    const NllResult r = nll(decode_hidden(c.model, h1), step, c.model.alphas(), c.x0);
    Tensor2 gw(c.model.visible_dim(), h1.size());
    kernel::add_outer(r.grads.d_a, h1, gw);
    worst = std::max(worst, relative_error(gw.data(), numeric_gradient(probe.params().weights[0].data(), f)));
    worst = std::max(worst, relative_error(r.grads.d_a, numeric_gradient(probe.params().biases[0], f)));
    const Vector fa =
        numeric_gradient(std::span(probe.params().alphas.log_alpha()).subspan(r.grads.alpha_index, 1), f);
    worst = std::max(worst, relative_error(Vector{r.grads.d_log_alpha}, fa));
    if (c.model.head() == HeadKind::Gaussian)
      worst = std::max(worst, relative_error(r.grads.d_log_sigma, numeric_gradient(probe.params().log_sigma, f)));
  }
  return worst;
}

}  // namespace gsn::gradcheck

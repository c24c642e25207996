#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "gsn/error.hpp"

namespace gsn {

namespace detail {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace detail

/// Counter-based random stream.
///
/// Draw number `i` of a stream is a pure function of `(seed, i)`, so a stream
/// can be copied, checkpointed as two integers and replayed exactly. Streams
/// obtained from fork() get distinct derived seeds.
///
/// Satisfies UniformRandomBitGenerator, but the library never routes draws
/// through `<random>` distributions: their output is implementation-defined,
/// and samples must be bit-identical across toolchains.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), key_(detail::mix64(seed ^ 0x6A09E667F3BCC909ULL)), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_positive() noexcept {
    return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() noexcept {
    const double u1 = uniform_positive();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer in [0, n). Lemire's multiply-shift; bias < n / 2^64.
  std::size_t below(std::size_t n) noexcept {
    __extension__ using u128 = unsigned __int128;
    const auto wide = static_cast<u128>((*this)()) * n;
    return static_cast<std::size_t>(wide >> 64);
  }

  /// Index drawn from an (unnormalized, nonnegative) weight vector.
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw ParameterError("categorical: weights must have positive sum");
    const double u = uniform() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    // Rounding left u at the very top; return the last positive entry.
    for (std::size_t i = weights.size(); i-- > 0;)
      if (weights[i] > 0.0) return i;
    return weights.size() - 1;
  }

  /// `n` child streams. Advances this stream by one draw.
  std::vector<RngStream> fork(std::size_t n) {
    const std::uint64_t base = (*this)();
    std::vector<RngStream> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      out.emplace_back(detail::mix64(base ^ detail::mix64((i + 1) * detail::kGolden)));
    return out;
  }

  friend bool operator==(const RngStream&, const RngStream&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_;
};

/// Number of trials up to and including the first success, P(k=j) = p(1-p)^(j-1).
inline std::size_t draw_geometric(double p, RngStream& rng) {
  if (!(p > 0.0 && p <= 1.0)) throw ParameterError("draw_geometric: p must lie in (0, 1]");
  if (p == 1.0) return 1;
  const double u = rng.uniform_positive();
  const double k = std::floor(std::log(u) / std::log1p(-p));
  if (k >= static_cast<double>(std::numeric_limits<std::size_t>::max() / 2))
    return std::numeric_limits<std::size_t>::max() / 2;
  return 1 + static_cast<std::size_t>(k);
}

}  // namespace gsn

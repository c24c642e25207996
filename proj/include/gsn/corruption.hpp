#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "gsn/error.hpp"
#include "gsn/numkit.hpp"
#include "gsn/rng.hpp"

namespace gsn {

/// Each coordinate is, with probability `rate`, replaced by a fair coin flip.
struct SaltPepper {
  double rate = 0.5;
};

struct AdditiveGaussian {
  double sigma = 1.0;
};

/// x + Uniform(-epsilon, epsilon) per coordinate; bounded support.
struct LocalUniform {
  double epsilon = 1.0;
};

/// Hides `subset_size` uniformly chosen coordinates.
struct SubsetMask {
  std::size_t subset_size = 1;
};

/// A fixed corruption process C(x_tilde | x).
class Corruptor {
 public:
  using Kind = std::variant<SaltPepper, AdditiveGaussian, LocalUniform, SubsetMask>;

  template <class T>
    requires std::is_constructible_v<Kind, T>
  Corruptor(T kind) : kind_(std::move(kind)) {  // NOLINT(google-explicit-constructor)
    validate();
  }

  const Kind& kind() const noexcept { return kind_; }

  template <class T>
  bool is() const noexcept {
    return std::holds_alternative<T>(kind_);
  }
  template <class T>
  const T& as() const {
    return std::get<T>(kind_);
  }

  std::string describe() const {
    return std::visit(
        [](const auto& k) -> std::string {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, SaltPepper>) return "salt_pepper(" + std::to_string(k.rate) + ")";
          if constexpr (std::is_same_v<T, AdditiveGaussian>) return "gaussian(" + std::to_string(k.sigma) + ")";
          if constexpr (std::is_same_v<T, LocalUniform>) return "local_uniform(" + std::to_string(k.epsilon) + ")";
          if constexpr (std::is_same_v<T, SubsetMask>) return "subset_mask(" + std::to_string(k.subset_size) + ")";
        },
        kind_);
  }

 private:
  void validate() const {
    std::visit(
        [](const auto& k) {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, SaltPepper>) {
            if (!(k.rate >= 0.0 && k.rate <= 1.0))
              throw ParameterError("salt-and-pepper rate must lie in [0, 1]");
          } else if constexpr (std::is_same_v<T, AdditiveGaussian>) {
            if (!(k.sigma > 0.0)) throw ParameterError("gaussian corruption needs sigma > 0");
          } else if constexpr (std::is_same_v<T, LocalUniform>) {
            if (!(k.epsilon > 0.0)) throw ParameterError("local-uniform corruption needs epsilon > 0");
          } else {
            if (k.subset_size < 1) throw ParameterError("subset mask needs subset_size >= 1");
          }
        },
        kind_);
  }

  Kind kind_;
};

/// Output of corrupt(). `missing` is non-empty only for SubsetMask, whose
/// hidden coordinates are zeroed in `values`.
struct Corrupted {
  Vector values;
  std::vector<std::size_t> missing;
};

inline bool is_binary(std::span<const double> x) noexcept {
  for (double v : x)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

/// Samples x_tilde ~ C(. | x).
inline Corrupted corrupt(const Corruptor& c, std::span<const double> x, RngStream& rng) {
  Corrupted out{Vector(x.begin(), x.end()), {}};
  std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, SaltPepper>) {
          if (!is_binary(x)) throw DomainError("salt-and-pepper corruption requires binary input");
          for (double& v : out.values)
            if (rng.uniform() < k.rate) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        } else if constexpr (std::is_same_v<T, AdditiveGaussian>) {
          for (double& v : out.values) v += k.sigma * rng.normal();
        } else if constexpr (std::is_same_v<T, LocalUniform>) {
          for (double& v : out.values) v += k.epsilon * (2.0 * rng.uniform() - 1.0);
        } else {
          if (k.subset_size > x.size())
            throw ParameterError("subset mask of size " + std::to_string(k.subset_size) +
                                 " exceeds dimension " + std::to_string(x.size()));
          // Partial Fisher-Yates: the first subset_size entries form a uniform subset.
          std::vector<std::size_t> idx(x.size());
          for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
          for (std::size_t i = 0; i < k.subset_size; ++i)
            std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
          out.missing.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k.subset_size));
          std::sort(out.missing.begin(), out.missing.end());
          for (std::size_t i : out.missing) out.values[i] = 0.0;
        }
      },
      c.kind());
  return out;
}

/// Exact pmf (SaltPepper) or density (AdditiveGaussian, LocalUniform) of
/// x_tilde given x.
inline double density(const Corruptor& c, std::span<const double> x_tilde,
                      std::span<const double> x) {
  if (x_tilde.size() != x.size())
    throw ShapeError("density: x_tilde has " + std::to_string(x_tilde.size()) +
                     " coordinates, x has " + std::to_string(x.size()));
  return std::visit(
      [&](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, SaltPepper>) {
          if (!is_binary(x)) throw DomainError("salt-and-pepper density requires binary x");
          if (!is_binary(x_tilde)) return 0.0;
          const double same = (1.0 - k.rate) + 0.5 * k.rate;
          const double diff = 0.5 * k.rate;
          double p = 1.0;
          for (std::size_t i = 0; i < x.size(); ++i) p *= (x_tilde[i] == x[i]) ? same : diff;
          return p;
        } else if constexpr (std::is_same_v<T, AdditiveGaussian>) {
          double sq = 0.0;
          for (std::size_t i = 0; i < x.size(); ++i) sq += (x_tilde[i] - x[i]) * (x_tilde[i] - x[i]);
          const double d = static_cast<double>(x.size());
          return std::exp(-0.5 * sq / (k.sigma * k.sigma) -
                          0.5 * d * std::log(2.0 * std::numbers::pi * k.sigma * k.sigma));
        } else if constexpr (std::is_same_v<T, LocalUniform>) {
          for (std::size_t i = 0; i < x.size(); ++i)
            if (std::abs(x_tilde[i] - x[i]) > k.epsilon) return 0.0;
          return std::pow(0.5 / k.epsilon, static_cast<double>(x.size()));
        } else {
          throw UnsupportedError("density is not defined for subset-mask corruption");
        }
      },
      c.kind());
}

}  // namespace gsn

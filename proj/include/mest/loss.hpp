#pragma once

/**
 * \file loss.hpp
 * Convex losses rho, their subgradient selections psi, and Monte-Carlo
 * estimators of the population functionals
 *
 *   phi(t) = E psi(e + t),   m(t) = || psi(e + t) - psi(e) ||_2.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mest/error.hpp"
#include "mest/stats.hpp"

namespace mest {

/// Huber loss, quadratic on |x| <= c and linear beyond.
struct Huber {
  double c = 1.345;
};

/// rho(x) = |x|^q with 1 <= q <= 2. Not divided by q; psi carries the factor.
struct PowerQ {
  double q = 1.5;
};

/// Check loss rho(x) = alpha x^+ + (1 - alpha)(-x)^+.
struct Quantile {
  double alpha = 0.5;
};

/// rho(x) = x^2 / 2, so the M-estimator is ordinary least squares.
struct Square {};

using LossSpec = std::variant<Huber, PowerQ, Quantile, Square>;

inline void validate(const LossSpec& spec) {
  std::visit(
      [](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Huber>) {
          if (!(l.c > 0.0) || !std::isfinite(l.c)) throw UsageError("Huber c must be positive");
        } else if constexpr (std::is_same_v<T, PowerQ>) {
          if (!(l.q >= 1.0 && l.q <= 2.0)) throw UsageError("PowerQ q must lie in [1,2]");
        } else if constexpr (std::is_same_v<T, Quantile>) {
          if (!(l.alpha > 0.0 && l.alpha < 1.0)) throw UsageError("Quantile alpha must lie in (0,1)");
        }
      },
      spec);
}

inline std::string to_string(const LossSpec& spec) {
  return std::visit(
      [](const auto& l) -> std::string {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Huber>) return "huber:" + std::to_string(l.c);
        else if constexpr (std::is_same_v<T, PowerQ>) return "powerq:" + std::to_string(l.q);
        else if constexpr (std::is_same_v<T, Quantile>) return "quantile:" + std::to_string(l.alpha);
        else return "square";
      },
      spec);
}

/// True when psi is continuous, so the minimizer solves the normal equations exactly.
inline bool psi_is_continuous(const LossSpec& spec) {
  if (std::holds_alternative<Quantile>(spec)) return false;
  if (const auto* p = std::get_if<PowerQ>(&spec)) return p->q > 1.0;
  return true;
}

namespace detail {
inline void require_finite(double x) {
  if (!std::isfinite(x)) throw DomainError("loss evaluated at a non-finite argument");
}
inline double sgn(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }
}  // namespace detail

inline double rho_eval(const LossSpec& spec, double x) {
  detail::require_finite(x);
  return std::visit(
      [x](const auto& l) -> double {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Huber>) {
          const double a = std::abs(x);
          return a <= l.c ? 0.5 * x * x : l.c * a - 0.5 * l.c * l.c;
        } else if constexpr (std::is_same_v<T, PowerQ>) {
          return std::pow(std::abs(x), l.q);
        } else if constexpr (std::is_same_v<T, Quantile>) {
          return x > 0.0 ? l.alpha * x : (l.alpha - 1.0) * x;
        } else {
          return 0.5 * x * x;
        }
      },
      spec);
}

/// Subgradient selection. Quantile: psi(0) = alpha - 1. PowerQ with q = 1: psi(0) = 0.
inline double psi_eval(const LossSpec& spec, double x) {
  detail::require_finite(x);
  return std::visit(
      [x](const auto& l) -> double {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Huber>) {
          return std::clamp(x, -l.c, l.c);
        } else if constexpr (std::is_same_v<T, PowerQ>) {
          if (x == 0.0) return 0.0;
          return l.q * std::pow(std::abs(x), l.q - 1.0) * detail::sgn(x);
        } else if constexpr (std::is_same_v<T, Quantile>) {
          return x <= 0.0 ? l.alpha - 1.0 : l.alpha;
        } else {
          return x;
        }
      },
      spec);
}

/// Lipschitz constant of psi, or +inf when psi is not Lipschitz.
inline double psi_lipschitz(const LossSpec& spec) {
  if (std::holds_alternative<Huber>(spec) || std::holds_alternative<Square>(spec)) return 1.0;
  if (const auto* p = std::get_if<PowerQ>(&spec); p && p->q == 2.0) return 2.0;
  return INFINITY;
}

/// Pointwise Monte-Carlo estimates of phi and m on a grid of shifts.
struct PopulationFunctionals {
  std::vector<double> t;
  std::vector<double> varphi;
  std::vector<double> varphi_se;
  std::vector<double> m;
  std::vector<double> m_se;
  double varphi_prime0 = NAN;
  std::size_t sample_size = 0;
};

namespace detail {
inline void require_samples(std::span<const double> samples) {
  if (samples.empty()) throw UsageError("empty error sample");
}
}  // namespace detail

/// phi-hat(t) = mean psi(e + t) with its Monte-Carlo standard error.
inline PopulationFunctionals estimate_varphi(const LossSpec& spec, std::span<const double> samples,
                                             std::span<const double> t_grid) {
  detail::require_samples(samples);
  validate(spec);
  PopulationFunctionals out;
  out.sample_size = samples.size();
  const double n = static_cast<double>(samples.size());
  for (double t : t_grid) {
    double s = 0.0, s2 = 0.0;
    for (double e : samples) {
      const double v = psi_eval(spec, e + t);
      s += v;
      s2 += v * v;
    }
    const double mu = s / n;
    const double var = n > 1 ? std::max(0.0, (s2 - n * mu * mu) / (n - 1.0)) : 0.0;
    out.t.push_back(t);
    out.varphi.push_back(mu);
    out.varphi_se.push_back(std::sqrt(var / n));
  }
  return out;
}

/// m-hat(t) = root-mean-square of psi(e + t) - psi(e); exactly 0 at t = 0.
inline PopulationFunctionals estimate_modulus_m(const LossSpec& spec,
                                                std::span<const double> samples,
                                                std::span<const double> t_grid) {
  detail::require_samples(samples);
  validate(spec);
  PopulationFunctionals out;
  out.sample_size = samples.size();
  const double n = static_cast<double>(samples.size());
  for (double t : t_grid) {
    double s2 = 0.0, s4 = 0.0;
    if (t != 0.0) {
      for (double e : samples) {
        const double d = psi_eval(spec, e + t) - psi_eval(spec, e);
        s2 += d * d;
        s4 += d * d * d * d;
      }
    }
    const double ms = s2 / n;
    const double m = std::sqrt(ms);
    // Delta method on sqrt of the mean square.
    const double var_ms = n > 1 ? std::max(0.0, (s4 / n - ms * ms) / (n - 1.0)) : 0.0;
    out.t.push_back(t);
    out.m.push_back(m);
    out.m_se.push_back(m > 0.0 ? std::sqrt(var_ms) / (2.0 * m) : 0.0);
  }
  return out;
}

/// Default finite-difference step: interquartile range times n^(-1/5).
inline double default_derivative_step(std::span<const double> samples) {
  detail::require_samples(samples);
  const double scale = samples.size() > 1 ? stats::iqr(samples) : 0.0;
  return (scale > 0.0 ? scale : 1.0) * std::pow(static_cast<double>(samples.size()), -0.2);
}

/// Central difference (phi-hat(h) - phi-hat(-h)) / 2h. For Quantile loss this is
/// a uniform-kernel estimate of the error density at 0.
inline double estimate_varphi_prime0(const LossSpec& spec, std::span<const double> samples,
                                     double h) {
  detail::require_samples(samples);
  validate(spec);
  if (!(h > 0.0)) throw UsageError("finite-difference step h must be positive");
  if (std::holds_alternative<Square>(spec)) return 1.0;
  double s = 0.0;
  for (double e : samples) s += psi_eval(spec, e + h) - psi_eval(spec, e - h);
  return s / (static_cast<double>(samples.size()) * 2.0 * h);
}

inline double estimate_varphi_prime0(const LossSpec& spec, std::span<const double> samples) {
  return estimate_varphi_prime0(spec, samples, default_derivative_step(samples));
}

/**
 * Fast repeated evaluation of phi-hat(t) for one fixed sample.
 *
 * Huber, Square and Quantile are evaluated exactly in O(log N) from the
 * sorted sample and its prefix sums. PowerQ has no such reduction and costs
 * O(N) per call.
 */
class EmpiricalVarphi {
 public:
  EmpiricalVarphi(LossSpec spec, std::span<const double> samples)
      : spec_(std::move(spec)), sorted_(samples.begin(), samples.end()) {
    detail::require_samples(samples);
    validate(spec_);
    std::sort(sorted_.begin(), sorted_.end());
    prefix_.resize(sorted_.size() + 1, 0.0);
    for (std::size_t i = 0; i < sorted_.size(); ++i) prefix_[i + 1] = prefix_[i] + sorted_[i];
  }

  std::size_t size() const { return sorted_.size(); }
  std::span<const double> sorted_sample() const { return sorted_; }

  double operator()(double t) const {
    const double n = static_cast<double>(sorted_.size());
    return std::visit(
        [&](const auto& l) -> double {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Huber>) {
            // e + t < -c  <=>  e < -c - t ;  e + t > c  <=>  e > c - t
            const std::size_t lo = count_less(-l.c - t);
            const std::size_t hi = count_less_equal(l.c - t);
            const double mid_sum = prefix_[hi] - prefix_[lo] + t * static_cast<double>(hi - lo);
            return (-l.c * static_cast<double>(lo) + mid_sum +
                    l.c * static_cast<double>(sorted_.size() - hi)) / n;
          } else if constexpr (std::is_same_v<T, Quantile>) {
            return l.alpha - static_cast<double>(count_less_equal(-t)) / n;
          } else if constexpr (std::is_same_v<T, Square>) {
            return prefix_.back() / n + t;
          } else {
            double s = 0.0;
            for (double e : sorted_) s += psi_eval(spec_, e + t);
            return s / n;
          }
        },
        spec_);
  }

 private:
  std::size_t count_less(double v) const {
    return static_cast<std::size_t>(std::lower_bound(sorted_.begin(), sorted_.end(), v) -
                                    sorted_.begin());
  }
  std::size_t count_less_equal(double v) const {
    return static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), v) -
                                    sorted_.begin());
  }

  LossSpec spec_;
  std::vector<double> sorted_;
  std::vector<double> prefix_;
};

}  // namespace mest

#pragma once

/**
 * \file process.hpp
 * Stationary causal error processes e_i = G(..., eps_{i-1}, eps_i) driven by
 * i.i.d. innovations, together with their coupled versions e*_i in which the
 * time-0 innovation eps_0 is replaced by an independent copy eps'_0.
 *
 * Supported processes:
 *  - linear:     e_i = sum_j a_j eps_{i-j}, a_0 = 1
 *  - ARCH(1):    e_i = eps_{i-1} sqrt(a^2 + b^2 e_{i-1}^2)
 *  - threshold:  e_i = alpha1 e_{i-1}^+ + alpha2 (-e_{i-1})^+ + eps_i
 *  - recursion:  e_i = R(e_{i-1}, eps_i) for a user map R
 */

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "mest/error.hpp"
#include "mest/rng.hpp"
#include "mest/stats.hpp"

namespace mest {

// ---------------------------------------------------------------- innovations

struct Gaussian {
  double mean = 0.0;
  double sd = 1.0;
};
struct StudentT {
  double dof = 5.0;
};
/// Standard symmetric stable law with characteristic function exp(-|t|^index).
struct StableSAS {
  double index = 2.0;
};
struct UniformInnov {
  double a = -1.0;
  double b = 1.0;
};

using InnovationDist = std::variant<Gaussian, StudentT, StableSAS, UniformInnov>;

inline void validate(const InnovationDist& dist) {
  std::visit(
      [](const auto& d) {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Gaussian>) {
          if (!(d.sd > 0.0) || !std::isfinite(d.mean)) throw UsageError("Gaussian sd must be positive");
        } else if constexpr (std::is_same_v<T, StudentT>) {
          if (!(d.dof > 0.0)) throw UsageError("Student t degrees of freedom must be positive");
        } else if constexpr (std::is_same_v<T, StableSAS>) {
          if (!(d.index > 0.0 && d.index <= 2.0)) throw UsageError("stable index must lie in (0,2]");
        } else {
          if (!(d.a < d.b)) throw UsageError("uniform innovations need a < b");
        }
      },
      dist);
}

/// Largest finite absolute moment order available (capped at 4).
inline double moment_order(const InnovationDist& dist) {
  if (const auto* s = std::get_if<StableSAS>(&dist); s && s->index < 2.0) return s->index;
  if (const auto* t = std::get_if<StudentT>(&dist); t && t->dof <= 4.0) return t->dof;
  return 4.0;
}

namespace detail {

/// Chambers-Mallows-Stuck transform, symmetric case.
inline double draw_stable(double index, Engine& eng) {
  std::uniform_real_distribution<double> angle(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
  std::exponential_distribution<double> expo(1.0);
  const double v = angle(eng);
  const double w = expo(eng);
  if (index == 1.0) return std::tan(v);
  return std::sin(index * v) / std::pow(std::cos(v), 1.0 / index) *
         std::pow(std::cos((1.0 - index) * v) / w, (1.0 - index) / index);
}

class InnovationSampler {
 public:
  explicit InnovationSampler(const InnovationDist& dist) : dist_(dist) { validate(dist_); }

  double operator()(Engine& eng) {
    return std::visit(
        [&](const auto& d) -> double {
          using T = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<T, Gaussian>) {
            return d.mean + d.sd * normal_(eng);
          } else if constexpr (std::is_same_v<T, StudentT>) {
            std::student_t_distribution<double> t(d.dof);
            return t(eng);
          } else if constexpr (std::is_same_v<T, StableSAS>) {
            return draw_stable(d.index, eng);
          } else {
            std::uniform_real_distribution<double> u(d.a, d.b);
            return u(eng);
          }
        },
        dist_);
  }

 private:
  InnovationDist dist_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace detail

/// n i.i.d. innovations, deterministic in (dist, n, seed).
inline std::vector<double> sample_innovations(const InnovationDist& dist, std::size_t n,
                                              std::uint64_t seed) {
  if (n < 1) throw UsageError("need at least one innovation");
  detail::InnovationSampler draw(dist);
  auto eng = make_engine(seed);
  std::vector<double> out(n);
  for (auto& v : out) v = draw(eng);
  return out;
}

// ---------------------------------------------------------------- coefficients

struct GeometricCoeffs {
  double rho = 0.5;
};
/// a_0 = 1, a_j = (1 + j)^{-mu} for 1 <= j <= max_lag.
struct PolynomialCoeffs {
  double mu = 2.0;
  std::size_t max_lag = 10000;
};
struct ExplicitCoeffs {
  std::vector<double> a;
};

using CoeffSpec = std::variant<GeometricCoeffs, PolynomialCoeffs, ExplicitCoeffs>;

inline constexpr double kGeometricTruncation = 1e-12;

/// Realized coefficient vector a_0..a_J after truncation.
inline std::vector<double> coefficients(const CoeffSpec& spec) {
  return std::visit(
      [](const auto& c) -> std::vector<double> {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, GeometricCoeffs>) {
          if (!(std::abs(c.rho) < 1.0)) throw UsageError("geometric coefficients need |rho| < 1");
          std::size_t j_trunc = 0;
          if (c.rho != 0.0)
            j_trunc = static_cast<std::size_t>(
                std::ceil(std::log(kGeometricTruncation) / std::log(std::abs(c.rho))));
          std::vector<double> a(j_trunc + 1);
          a[0] = 1.0;
          for (std::size_t j = 1; j <= j_trunc; ++j) a[j] = a[j - 1] * c.rho;
          return a;
        } else if constexpr (std::is_same_v<T, PolynomialCoeffs>) {
          if (!(c.mu > 0.5)) throw UsageError("polynomial coefficients need mu > 1/2");
          std::vector<double> a(c.max_lag + 1);
          a[0] = 1.0;
          for (std::size_t j = 1; j <= c.max_lag; ++j)
            a[j] = std::pow(1.0 + static_cast<double>(j), -c.mu);
          return a;
        } else {
          if (c.a.empty() || c.a[0] != 1.0) throw UsageError("explicit coefficients need a_0 = 1");
          for (double v : c.a)
            if (!std::isfinite(v)) throw UsageError("explicit coefficients must be finite");
          return c.a;
        }
      },
      spec);
}

/// Absolute coefficient mass dropped by truncation (integral approximation
/// for the polynomial tail; +inf when the full series is not summable).
inline double truncated_tail_mass(const CoeffSpec& spec) {
  if (const auto* g = std::get_if<GeometricCoeffs>(&spec)) {
    const double r = std::abs(g->rho);
    if (r == 0.0) return 0.0;
    const auto a = coefficients(spec);
    return std::abs(a.back()) * r / (1.0 - r);
  }
  if (const auto* p = std::get_if<PolynomialCoeffs>(&spec)) {
    if (p->mu <= 1.0) return INFINITY;
    return std::pow(static_cast<double>(p->max_lag) + 1.5, 1.0 - p->mu) / (p->mu - 1.0);
  }
  return 0.0;
}

// ---------------------------------------------------------------- models

struct LinearProcess {
  CoeffSpec coeffs = GeometricCoeffs{};
  InnovationDist innov = Gaussian{};
};
struct Arch {
  double a = 1.0;
  double b = 0.5;
  InnovationDist innov = Gaussian{};
};
struct ThresholdAR {
  double alpha1 = 0.5;
  double alpha2 = -0.3;
  InnovationDist innov = Gaussian{};
};
struct Recursion {
  std::function<double(double, double)> map;  // (previous state, innovation) -> state
  InnovationDist innov = Gaussian{};
};

using ErrorModel = std::variant<LinearProcess, Arch, ThresholdAR, Recursion>;

inline const InnovationDist& innovations_of(const ErrorModel& model) {
  return std::visit([](const auto& m) -> const InnovationDist& { return m.innov; }, model);
}

inline bool is_recursive(const ErrorModel& model) {
  return !std::holds_alternative<LinearProcess>(model);
}

struct StabilityMargin {
  double value = 0.0;  // estimate of E log|b eps_0|; -inf when b = 0
  double standard_error = 0.0;
};

/// Monte-Carlo estimate of E log|b eps_0|; the ARCH recursion contracts iff it is negative.
inline StabilityMargin arch_stability_margin(double /*a*/, double b, const InnovationDist& innov,
                                             std::size_t nrep, std::uint64_t seed) {
  if (nrep < 10000) throw UsageError("stability margin needs nrep >= 10^4");
  if (b == 0.0) return {-INFINITY, 0.0};
  const auto eps = sample_innovations(innov, nrep, seed);
  std::vector<double> logs;
  logs.reserve(eps.size());
  for (double e : eps)
    if (e != 0.0) logs.push_back(std::log(std::abs(b * e)));
  if (logs.size() < 2) return {-INFINITY, 0.0};
  return {stats::mean(logs), std::sqrt(stats::variance(logs) / static_cast<double>(logs.size()))};
}

inline constexpr std::size_t kStabilityReplications = 200000;
inline constexpr std::uint64_t kStabilitySeed = 0x5EEDu;

/// Checks the model's existence/stationarity conditions. For ARCH this
/// includes the Monte-Carlo contraction check, so call it once when a model
/// is built rather than per simulation.
inline void validate(const ErrorModel& model, bool check_arch_margin = true) {
  validate(innovations_of(model));
  std::visit(
      [check_arch_margin](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearProcess>) {
          (void)coefficients(m.coeffs);
          if (const auto* s = std::get_if<StableSAS>(&m.innov)) {
            if (const auto* p = std::get_if<PolynomialCoeffs>(&m.coeffs); p && !(s->index * p->mu > 1.0))
              throw UsageError("stable innovations with polynomial coefficients need index*mu > 1");
          }
        } else if constexpr (std::is_same_v<T, Arch>) {
          if (!std::isfinite(m.a) || !std::isfinite(m.b)) throw UsageError("ARCH parameters must be finite");
          if (!check_arch_margin) return;
          const auto margin = arch_stability_margin(m.a, m.b, m.innov, kStabilityReplications, kStabilitySeed);
          if (!(margin.value < 0.0))
            throw UsageError("ARCH model fails the stability margin: estimated E log|b eps| = " +
                             std::to_string(margin.value) + " >= 0");
        } else if constexpr (std::is_same_v<T, ThresholdAR>) {
          if (!(std::max(std::abs(m.alpha1), std::abs(m.alpha2)) < 1.0))
            throw UsageError("threshold AR needs max(|alpha1|, |alpha2|) < 1");
        } else {
          if (!m.map) throw UsageError("recursion model needs a map");
        }
      },
      model);
}

struct SimulationOptions {
  std::size_t burn_in = 1000;
};

inline constexpr double kOverflowGuard = 1e150;

namespace detail {

/// One step of a recursive model: next state from the previous state and the
/// innovation that drives it (eps_i for threshold/recursion, eps_{i-1} for ARCH).
inline double recursive_step(const ErrorModel& model, double prev, double eps) {
  const double next = std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Arch>) {
          return eps * std::sqrt(m.a * m.a + m.b * m.b * prev * prev);
        } else if constexpr (std::is_same_v<T, ThresholdAR>) {
          return m.alpha1 * std::max(prev, 0.0) + m.alpha2 * std::max(-prev, 0.0) + eps;
        } else if constexpr (std::is_same_v<T, Recursion>) {
          return m.map(prev, eps);
        } else {
          return NAN;
        }
      },
      model);
  if (!std::isfinite(next) || std::abs(next) > kOverflowGuard)
    throw NumericError("recursion exceeded the overflow guard; the model does not contract");
  return next;
}

/// out[i] = sum_j a[j] eps[i + J - j] for i = 0..n-1, where J = a.size() - 1.
inline std::vector<double> causal_filter(const std::vector<double>& a, const std::vector<double>& eps,
                                         std::size_t n) {
  const std::size_t J = a.size() - 1;
  std::vector<double> out(n, 0.0);
  if (static_cast<double>(J + 1) * static_cast<double>(n) <= 2e7) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j <= J; ++j) s += a[j] * eps[i + J - j];
      out[i] = s;
    }
    return out;
  }
  std::size_t len = 1;
  while (len < eps.size() + a.size()) len <<= 1;
  std::vector<double> pa(len, 0.0), pe(len, 0.0);
  std::copy(a.begin(), a.end(), pa.begin());
  std::copy(eps.begin(), eps.end(), pe.begin());
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fa, fe;
  fft.fwd(fa, pa);
  fft.fwd(fe, pe);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fe[k];
  std::vector<double> conv;
  fft.inv(conv, fa);
  for (std::size_t i = 0; i < n; ++i) out[i] = conv[i + J];
  return out;
}

}  // namespace detail

/// e_1..e_n, approximately from the stationary law, deterministic in (model, n, seed).
inline std::vector<double> simulate_path(const ErrorModel& model, std::size_t n, std::uint64_t seed,
                                         SimulationOptions opts = {}) {
  if (n < 1) throw UsageError("path length must be positive");
  validate(model, false);
  detail::InnovationSampler draw(innovations_of(model));
  auto eng = make_engine(seed);
  if (const auto* lp = std::get_if<LinearProcess>(&model)) {
    const auto a = coefficients(lp->coeffs);
    std::vector<double> eps(n + a.size() - 1);
    for (auto& v : eps) v = draw(eng);
    return detail::causal_filter(a, eps, n);
  }
  double state = 0.0;
  for (std::size_t t = 0; t < opts.burn_in; ++t) state = detail::recursive_step(model, state, draw(eng));
  std::vector<double> out(n);
  for (auto& v : out) v = state = detail::recursive_step(model, state, draw(eng));
  return out;
}

/// Paths e_1..e_K and e*_1..e*_K sharing every innovation except eps_0.
struct CoupledPaths {
  std::vector<double> e;
  std::vector<double> e_star;
  double eps0 = 0.0;
  double eps0_prime = 0.0;
  std::uint64_t seed = 0;
  std::size_t pre_history_length = 0;
};

/**
 * Draw order: the pre-history innovations, eps_0, eps_1..eps_K, then eps'_0.
 * For linear processes the pre-history is the truncation window (J values
 * before time 1); recursive models start from state 0 and run
 * opts.burn_in steps before time 0.
 */
inline CoupledPaths simulate_coupled(const ErrorModel& model, std::size_t K, std::uint64_t seed,
                                     SimulationOptions opts = {}) {
  if (K < 1) throw UsageError("coupled horizon K must be positive");
  validate(model, false);
  detail::InnovationSampler draw(innovations_of(model));
  auto eng = make_engine(seed);
  CoupledPaths out;
  out.seed = seed;
  out.e.resize(K);
  out.e_star.resize(K);

  if (const auto* lp = std::get_if<LinearProcess>(&model)) {
    const auto a = coefficients(lp->coeffs);
    const std::size_t J = a.size() - 1;
    // eps[t + J - 1] holds eps_t for t = 1-J..K; eps_0 sits at index J - 1 when J >= 1.
    std::vector<double> eps(J + K);
    for (auto& v : eps) v = draw(eng);
    const double eps0_prime = draw(eng);
    out.pre_history_length = J;
    if (J == 0) {
      out.e = eps;
      out.e_star = eps;
      out.eps0 = out.eps0_prime = 0.0;  // eps_0 does not enter e_1..e_K
      return out;
    }
    out.eps0 = eps[J - 1];
    out.eps0_prime = eps0_prime;
    auto eps_star = eps;
    eps_star[J - 1] = eps0_prime;
    for (std::size_t k = 1; k <= K; ++k) {
      double s = 0.0, s_star = 0.0;
      for (std::size_t j = 0; j <= J; ++j) {
        s += a[j] * eps[k + J - 1 - j];
        s_star += a[j] * eps_star[k + J - 1 - j];
      }
      out.e[k - 1] = s;
      out.e_star[k - 1] = s_star;
    }
    return out;
  }

  out.pre_history_length = opts.burn_in;
  const bool arch = std::holds_alternative<Arch>(model);
  double state = 0.0;
  // For ARCH, e_t is driven by eps_{t-1}, so the burn-in ends at e_0 after
  // consuming eps_{-1}; the time-0 innovation then drives e_1.
  for (std::size_t t = 0; t < opts.burn_in; ++t) state = detail::recursive_step(model, state, draw(eng));
  const double eps0 = draw(eng);
  std::vector<double> future(K);
  for (auto& v : future) v = draw(eng);
  const double eps0_prime = draw(eng);
  out.eps0 = eps0;
  out.eps0_prime = eps0_prime;

  double s = detail::recursive_step(model, state, eps0);
  double s_star = detail::recursive_step(model, state, eps0_prime);
  if (arch) {
    // s = e_1, s_star = e*_1; eps_k drives e_{k+1}.
    out.e[0] = s;
    out.e_star[0] = s_star;
    for (std::size_t k = 1; k < K; ++k) {
      s = detail::recursive_step(model, s, future[k - 1]);
      s_star = detail::recursive_step(model, s_star, future[k - 1]);
      out.e[k] = s;
      out.e_star[k] = s_star;
    }
  } else {
    // s = e_0, s_star = e*_0; eps_k drives e_k.
    for (std::size_t k = 1; k <= K; ++k) {
      s = detail::recursive_step(model, s, future[k - 1]);
      s_star = detail::recursive_step(model, s_star, future[k - 1]);
      out.e[k - 1] = s;
      out.e_star[k - 1] = s_star;
    }
  }
  return out;
}

}  // namespace mest

#pragma once

/**
 * \file dependence.hpp
 * Coupling-based dependence measures. For each lag k the profile records
 *
 *   d_psi(k) = || psi(e_k) - psi(e*_k) ||_2   and   d_raw(k) = || e_k - e*_k ||_s,
 *
 * which bound the projection norms || P_0 psi(e_k) || from above. Decay
 * fits and a summability verdict are derived from the profile.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mest/error.hpp"
#include "mest/loss.hpp"
#include "mest/parallel.hpp"
#include "mest/process.hpp"
#include "mest/rng.hpp"
#include "mest/stats.hpp"

namespace mest {

/// Raised when a profile does not carry enough signal to fit a decay law.
class DiagnosticError : public NumericError {
 public:
  explicit DiagnosticError(const std::string& what) : NumericError(what) {}
};

struct DependenceProfile {
  std::vector<std::size_t> lags;
  std::vector<double> d_psi;
  std::vector<double> d_raw;
  std::vector<double> stderr_psi;
  std::vector<double> stderr_raw;
  double moment_order = 2.0;  // s used for d_raw
  std::size_t nrep = 0;
};

/// Moment order s for d_raw: 2, or index - 0.1 when innovations lack second moments.
inline double raw_moment_order(const InnovationDist& innov) {
  const double m = moment_order(innov);
  return m > 2.0 ? 2.0 : m - 0.1;
}

struct DependenceOptions {
  SimulationOptions simulation{};
  unsigned threads = 1;
};

inline DependenceProfile measure_dependence(const ErrorModel& model, const LossSpec& loss,
                                            std::size_t max_lag, std::size_t nrep,
                                            std::uint64_t seed, DependenceOptions opts = {}) {
  if (max_lag < 1) throw UsageError("max lag K must be positive");
  if (nrep < 100) throw UsageError("dependence measurement needs nrep >= 100");
  validate(loss);
  const double s = raw_moment_order(innovations_of(model));

  // Per-replication squared psi differences and |raw difference|^s, row-major [rep][lag].
  std::vector<double> psi_sq(nrep * max_lag), raw_pow(nrep * max_lag);
  parallel_for(nrep, opts.threads, [&](std::size_t r) {
    const auto paths = simulate_coupled(model, max_lag, derive_seed(seed, r), opts.simulation);
    for (std::size_t k = 0; k < max_lag; ++k) {
      const double dp = psi_eval(loss, paths.e[k]) - psi_eval(loss, paths.e_star[k]);
      psi_sq[r * max_lag + k] = dp * dp;
      raw_pow[r * max_lag + k] = std::pow(std::abs(paths.e[k] - paths.e_star[k]), s);
    }
  });

  DependenceProfile prof;
  prof.nrep = nrep;
  prof.moment_order = s;
  const double nr = static_cast<double>(nrep);
  for (std::size_t k = 0; k < max_lag; ++k) {
    double a1 = 0.0, a2 = 0.0, b1 = 0.0, b2 = 0.0;
    for (std::size_t r = 0; r < nrep; ++r) {
      const double a = psi_sq[r * max_lag + k], b = raw_pow[r * max_lag + k];
      a1 += a;
      a2 += a * a;
      b1 += b;
      b2 += b * b;
    }
    const double ma = a1 / nr, mb = b1 / nr;
    const double va = std::max(0.0, (a2 / nr - ma * ma) * nr / (nr - 1.0));
    const double vb = std::max(0.0, (b2 / nr - mb * mb) * nr / (nr - 1.0));
    const double dp = std::sqrt(ma), dr = std::pow(mb, 1.0 / s);
    prof.lags.push_back(k + 1);
    prof.d_psi.push_back(dp);
    prof.d_raw.push_back(dr);
    // Delta method: d = g(mean) with g(u) = u^{1/2} or u^{1/s}.
    prof.stderr_psi.push_back(dp > 0.0 ? std::sqrt(va / nr) / (2.0 * dp) : 0.0);
    prof.stderr_raw.push_back(mb > 0.0 ? std::sqrt(vb / nr) * dr / (s * mb) : 0.0);
  }
  return prof;
}

enum class DecayKind { Geometric, Polynomial };

struct DecayFit {
  DecayKind kind = DecayKind::Geometric;
  double rate = NAN;        // geometric: exp(slope of log d on k)
  double log_slope = NAN;   // slope of the chosen regression
  double exponent = NAN;    // polynomial: -(slope of log d on log k)
  double r_squared = 0.0;
  bool summable = false;
  std::size_t lags_used = 0;
};

inline constexpr double kDecayFloor = 1e-12;

/// Least-squares decay fit of log d_psi. Without a hint, the better-fitting law wins.
inline DecayFit fit_decay(const DependenceProfile& prof, std::optional<DecayKind> hint = {}) {
  std::vector<double> k, logk, logd;
  for (std::size_t i = 0; i < prof.lags.size(); ++i) {
    if (prof.d_psi[i] > kDecayFloor && prof.lags[i] >= 1) {
      k.push_back(static_cast<double>(prof.lags[i]));
      logk.push_back(std::log(static_cast<double>(prof.lags[i])));
      logd.push_back(std::log(prof.d_psi[i]));
    }
  }
  if (k.size() < 4)
    throw DiagnosticError("only " + std::to_string(k.size()) +
                          " lags above the numeric floor; increase nrep or reduce K");

  auto geometric = [&] {
    const auto f = stats::fit_line(k, logd);
    DecayFit out;
    out.kind = DecayKind::Geometric;
    out.log_slope = f.slope;
    out.rate = std::exp(f.slope);
    out.r_squared = f.r_squared;
    out.summable = out.rate < 1.0;
    out.lags_used = k.size();
    return out;
  };
  auto polynomial = [&] {
    const auto f = stats::fit_line(logk, logd);
    DecayFit out;
    out.kind = DecayKind::Polynomial;
    out.log_slope = f.slope;
    out.exponent = -f.slope;
    out.r_squared = f.r_squared;
    out.summable = out.exponent > 1.0;
    out.lags_used = k.size();
    return out;
  };
  if (hint) return *hint == DecayKind::Geometric ? geometric() : polynomial();
  const auto g = geometric();
  const auto p = polynomial();
  return g.r_squared >= p.r_squared ? g : p;
}

enum class SrdVerdict { SummableEvidence, Inconclusive, DivergenceEvidence };

inline std::string to_string(SrdVerdict v) {
  switch (v) {
    case SrdVerdict::SummableEvidence: return "summable-evidence";
    case SrdVerdict::DivergenceEvidence: return "divergence-evidence";
    default: return "inconclusive";
  }
}

struct SrdReport {
  std::vector<double> partial_sums;
  std::vector<double> partial_sum_se;
  std::optional<DecayFit> fit;
  SrdVerdict verdict = SrdVerdict::Inconclusive;
};

/**
 * Summability diagnostic for sum_k d_psi(k).
 *
 * summable-evidence: each of the last ceil(K/4) increments is below twice the
 * standard error of the partial sum it extends, and the fitted decay is
 * summable (a profile that is exactly zero in that tail counts as finite
 * memory). divergence-evidence: the fitted decay is non-summable with
 * R^2 > 0.9. Anything else is inconclusive.
 */
inline SrdReport srd_diagnostic(const DependenceProfile& prof) {
  SrdReport rep;
  const std::size_t K = prof.d_psi.size();
  double s = 0.0, se = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    s += prof.d_psi[i];
    se += prof.stderr_psi[i];  // lags are positively correlated; the linear sum is conservative
    rep.partial_sums.push_back(s);
    rep.partial_sum_se.push_back(se);
  }
  if (K == 0) return rep;
  const std::size_t tail = (K + 3) / 4;
  bool tail_quiet = true, tail_zero = true;
  for (std::size_t i = K - tail; i < K; ++i) {
    if (prof.d_psi[i] > kDecayFloor) tail_zero = false;
    if (prof.d_psi[i] > std::max(2.0 * rep.partial_sum_se[i], kDecayFloor)) tail_quiet = false;
  }
  try {
    rep.fit = fit_decay(prof);
  } catch (const DiagnosticError&) {
    rep.verdict = tail_zero ? SrdVerdict::SummableEvidence : SrdVerdict::Inconclusive;
    return rep;
  }
  if (tail_quiet && (rep.fit->summable || tail_zero)) {
    rep.verdict = SrdVerdict::SummableEvidence;
  } else if (!rep.fit->summable && rep.fit->r_squared > 0.9) {
    rep.verdict = SrdVerdict::DivergenceEvidence;
  }
  return rep;
}

inline std::string profile_to_csv(const DependenceProfile& prof) {
  std::ostringstream os;
  os.precision(17);
  os << "lag,d_psi,d_raw,stderr\n";
  for (std::size_t i = 0; i < prof.lags.size(); ++i)
    os << prof.lags[i] << ',' << prof.d_psi[i] << ',' << prof.d_raw[i] << ',' << prof.stderr_psi[i]
       << '\n';
  return os.str();
}

}  // namespace mest

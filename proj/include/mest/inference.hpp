#pragma once

/**
 * \file inference.hpp
 * Dependence-adjusted inference for M-estimators. The scaled estimate
 * phi'(0) theta_hat is approximately N(0, Delta) with
 *
 *   Delta = sum_k E[psi(e_0) psi(e_k)] Delta_k,
 *
 * Delta_k being the lag-k design cross products. Delta is estimated by a
 * lag-window sum over sample psi-autocovariances.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mest/design.hpp"
#include "mest/error.hpp"
#include "mest/estimator.hpp"
#include "mest/loss.hpp"
#include "mest/stats.hpp"

namespace mest {

/// T_n = sum_i psi_i z_i.
inline Vector linear_term(const RescaledDesign& rd, std::span<const double> psi_values) {
  if (static_cast<Eigen::Index>(psi_values.size()) != rd.n())
    throw UsageError("linear_term: psi length differs from n");
  const Eigen::Map<const Vector> psi(psi_values.data(), rd.n());
  return rd.z.transpose() * psi;
}

enum class Kernel { Bartlett, Truncated };

inline std::string to_string(Kernel k) { return k == Kernel::Bartlett ? "bartlett" : "truncated"; }

struct DeltaEstimate {
  Matrix delta;
  std::vector<double> gamma_psi;  // lags 0..B; gamma(-k) = gamma(k)
  std::vector<Matrix> delta_k;    // lags 0..B; Delta_{-k} = Delta_k'
  std::size_t bandwidth = 0;
  Kernel kernel = Kernel::Bartlett;
  std::size_t clipped_eigenvalues = 0;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    const Eigen::Index p = delta.rows();
    os << "k,gamma_psi";
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index c = 0; c < p; ++c) os << ",delta_" << r << '_' << c;
    os << '\n';
    for (std::size_t k = 0; k < gamma_psi.size(); ++k) {
      os << k << ',' << gamma_psi[k];
      for (Eigen::Index r = 0; r < p; ++r)
        for (Eigen::Index c = 0; c < p; ++c) os << ',' << delta_k[k](r, c);
      os << '\n';
    }
    return os.str();
  }
};

inline std::size_t default_bandwidth(std::size_t n) {
  return static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(n)) - 1e-12));
}

inline double kernel_weight(Kernel kernel, std::size_t k, std::size_t bandwidth) {
  if (kernel == Kernel::Truncated || k == 0) return 1.0;
  return 1.0 - static_cast<double>(k) / static_cast<double>(bandwidth);
}

/// gamma-hat(k) = n^{-1} sum_i psi_i psi_{i+k} for k = 0..B, on mean-centered values.
inline std::vector<double> psi_autocovariances(std::span<const double> psi_values, std::size_t bandwidth) {
  const std::size_t n = psi_values.size();
  if (n == 0) throw UsageError("psi_autocovariances: empty input");
  if (bandwidth >= n) throw UsageError("estimate_delta: bandwidth must be smaller than n");
  std::vector<double> c(psi_values.begin(), psi_values.end());
  const double mu = stats::mean(c);
  for (auto& v : c) v -= mu;
  std::vector<double> gamma;
  for (std::size_t k = 0; k <= bandwidth; ++k) {
    double g = 0.0;
    for (std::size_t i = 0; i + k < n; ++i) g += c[i] * c[i + k];
    gamma.push_back(g / static_cast<double>(n));
  }
  return gamma;
}

/**
 * Lag-window combination sum_{|k| <= B} w(k/B) gamma(k) Delta_k, B = gamma.size() - 1.
 * The autocovariances may come from a series other than the one the design
 * belongs to. The lag-0 design term is the identity exactly. The result is
 * symmetrized and negative eigenvalues are clipped to zero.
 */
inline DeltaEstimate combine_delta(const RescaledDesign& rd, std::vector<double> gamma,
                                   Kernel kernel = Kernel::Bartlett) {
  if (gamma.empty()) throw UsageError("combine_delta: need gamma(0)");
  const Eigen::Index p = rd.p();
  const std::size_t B = gamma.size() - 1;
  DeltaEstimate est;
  est.bandwidth = B;
  est.kernel = kernel;
  Matrix delta = Matrix::Zero(p, p);
  for (std::size_t k = 0; k <= B; ++k) {
    const double g = gamma[k], w = kernel_weight(kernel, k, B);
    Matrix dk = k == 0 ? Matrix(Matrix::Identity(p, p))
                : static_cast<Eigen::Index>(k) < rd.n() ? delta_k_partial(rd, static_cast<Eigen::Index>(k))
                                                         : Matrix(Matrix::Zero(p, p));
    if (k == 0) delta += w * g * dk;
    else delta += w * g * (dk + dk.transpose());
    est.delta_k.push_back(std::move(dk));
  }
  est.gamma_psi = std::move(gamma);
  delta = 0.5 * (delta + delta.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(delta);
  Vector ev = eig.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < 0.0) {
      ev(i) = 0.0;
      ++est.clipped_eigenvalues;
    }
  }
  if (est.clipped_eigenvalues > 0) {
    delta = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
    delta = 0.5 * (delta + delta.transpose());
  }
  est.delta = delta;
  return est;
}

/// Delta-hat from the psi values of one series: default B = ceil(n^{1/3}).
inline DeltaEstimate estimate_delta(const RescaledDesign& rd, std::span<const double> psi_values,
                                    std::optional<std::size_t> bandwidth = {},
                                    Kernel kernel = Kernel::Bartlett) {
  const auto n = static_cast<std::size_t>(rd.n());
  if (psi_values.size() != n) throw UsageError("estimate_delta: psi length differs from n");
  const std::size_t B = bandwidth.value_or(default_bandwidth(n));
  return combine_delta(rd, psi_autocovariances(psi_values, B), kernel);
}

struct ConfidenceRegion {
  double level = 0.95;
  Vector estimate;     // beta_hat
  Vector half_width;   // marginal, per coefficient
  Vector lower;
  Vector upper;
  Matrix cov_beta;     // Sigma^{-1/2} Delta Sigma^{-1/2} / phi'(0)^2
  Matrix cov_theta;    // Delta / phi'(0)^2
  double ellipsoid_radius = 0.0;  // sqrt of the chi-square(p) quantile
  std::size_t degenerate_directions = 0;
  std::string warning;

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "coef,estimate,lower,upper,half_width\n";
    for (Eigen::Index j = 0; j < estimate.size(); ++j)
      os << j << ',' << estimate(j) << ',' << lower(j) << ',' << upper(j) << ',' << half_width(j) << '\n';
    return os.str();
  }

  std::string to_table() const {
    std::ostringstream os;
    os.precision(8);
    os << "level " << level << "  ellipsoid radius " << ellipsoid_radius << '\n';
    os << "coef        estimate           lower           upper\n";
    for (Eigen::Index j = 0; j < estimate.size(); ++j)
      os << j << "  " << estimate(j) << "  " << lower(j) << "  " << upper(j) << '\n';
    if (!warning.empty()) os << "warning: " << warning << '\n';
    return os.str();
  }
};

/// Marginal normal intervals and a chi-square ellipsoid for beta.
inline ConfidenceRegion confidence_region(const FitResult& fit, const RescaledDesign& rd,
                                          const DeltaEstimate& delta_hat, double varphi_prime0,
                                          double level) {
  if (!(varphi_prime0 > 0.0)) throw UsageError("confidence_region: phi'(0) must be positive");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("confidence_region: level must lie in (0,1)");
  const Eigen::Index p = rd.p();
  if (fit.beta_hat.size() != p || delta_hat.delta.rows() != p)
    throw UsageError("confidence_region: dimension mismatch");

  ConfidenceRegion cr;
  cr.level = level;
  cr.estimate = fit.beta_hat;
  const double inv2 = 1.0 / (varphi_prime0 * varphi_prime0);
  cr.cov_theta = delta_hat.delta * inv2;
  cr.cov_beta = rd.sigma_root_inv * delta_hat.delta * rd.sigma_root_inv * inv2;
  const double zq = stats::normal_quantile(0.5 + 0.5 * level);
  cr.half_width = zq * cr.cov_beta.diagonal().cwiseMax(0.0).cwiseSqrt();
  cr.lower = cr.estimate - cr.half_width;
  cr.upper = cr.estimate + cr.half_width;
  cr.ellipsoid_radius = std::sqrt(stats::chi_squared_quantile(level, static_cast<double>(p)));

  Eigen::SelfAdjointEigenSolver<Matrix> eig(delta_hat.delta);
  const double top = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  for (Eigen::Index i = 0; i < p; ++i)
    if (eig.eigenvalues()(i) <= 1e-12 * std::max(top, 1e-300)) ++cr.degenerate_directions;
  if (cr.degenerate_directions > 0)
    cr.warning = std::to_string(cr.degenerate_directions) +
                 " degenerate direction(s): estimated covariance has zero eigenvalues";
  return cr;
}

struct BahadurReport {
  Vector remainder;  // phi'(0) theta_hat - T_n
  double remainder_norm = 0.0;
  Vector linear_term;
  double varphi_prime0 = NAN;
};

/// Remainder of the linear approximation; meaningful only when the true errors are known.
inline BahadurReport bahadur_remainder(const FitResult& fit, const RescaledDesign& rd,
                                       std::span<const double> true_errors, const LossSpec& loss,
                                       double varphi_prime0) {
  if (static_cast<Eigen::Index>(true_errors.size()) != rd.n() || fit.theta_hat.size() != rd.p())
    throw UsageError("bahadur_remainder: dimension mismatch");
  std::vector<double> psi(true_errors.size());
  for (std::size_t i = 0; i < psi.size(); ++i) psi[i] = psi_eval(loss, true_errors[i]);
  BahadurReport rep;
  rep.varphi_prime0 = varphi_prime0;
  rep.linear_term = linear_term(rd, psi);
  rep.remainder = varphi_prime0 * fit.theta_hat - rep.linear_term;
  rep.remainder_norm = rep.remainder.norm();
  return rep;
}

}  // namespace mest

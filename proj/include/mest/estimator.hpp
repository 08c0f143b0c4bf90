#pragma once

/**
 * \file estimator.hpp
 * M-estimation of beta in y_i = x_i' beta + e_i by minimizing
 * sum_i rho(y_i - x_i' beta), plus the score Omega-tilde and the local
 * oscillation of the centered M-process.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mest/design.hpp"
#include "mest/error.hpp"
#include "mest/loss.hpp"
#include "mest/rng.hpp"
#include "mest/stats.hpp"

namespace mest {

struct SolverConfig {
  std::size_t max_iter = 2000;  // Newton iterations summed over all smoothing stages
  double obj_tol = 1e-12;
  double grad_tol = 1e-8;
  double smoothing_h0 = 0.0;     // initial kink width; 0 = robust scale of y
  double smoothing_shrink = 0.25;
  double smoothing_floor = 1e-10;  // stop shrinking below this times scale(y)
  double armijo = 1e-4;
  std::size_t max_backtracks = 60;
  bool keep_trace = true;

  void validate() const {
    if (max_iter < 1) throw UsageError("max_iter must be positive");
    if (!(obj_tol > 0.0) || !(grad_tol > 0.0) || !(smoothing_floor > 0.0))
      throw UsageError("solver tolerances must be positive");
    if (!(smoothing_h0 >= 0.0)) throw UsageError("smoothing_h0 must be non-negative");
    if (!(smoothing_shrink > 0.0 && smoothing_shrink < 1.0))
      throw UsageError("smoothing shrink factor must lie in (0,1)");
    if (!(armijo > 0.0 && armijo < 0.5)) throw UsageError("Armijo constant must lie in (0,1/2)");
  }
};

struct FitResult {
  Vector beta_hat;
  Vector theta_hat;        // Sigma_n^{1/2} beta_hat
  double objective = NAN;  // sum rho(y - X beta_hat)
  Vector omega_residual;   // sum psi(y_i - x_i' beta_hat) x_i
  double omega_norm = NAN;
  double certificate_bound = NAN;  // (p+1) * max_i |x_i| for discontinuous psi
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> solver_trace;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    auto vec = [&](const Vector& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << v(i);
    };
    os << "beta_hat=";
    vec(beta_hat);
    os << "\ntheta_hat=";
    vec(theta_hat);
    os << "\nobjective=" << objective << "\nomega_norm=" << omega_norm
       << "\niterations=" << iterations << "\nconverged=" << (converged ? "true" : "false") << '\n';
    return os.str();
  }

  std::string csv_header() const {
    std::ostringstream os;
    for (Eigen::Index i = 0; i < beta_hat.size(); ++i) os << "beta" << i << ',';
    for (Eigen::Index i = 0; i < theta_hat.size(); ++i) os << "theta" << i << ',';
    os << "objective,omega_norm,iterations,converged\n";
    return os.str();
  }

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(17);
    for (Eigen::Index i = 0; i < beta_hat.size(); ++i) os << beta_hat(i) << ',';
    for (Eigen::Index i = 0; i < theta_hat.size(); ++i) os << theta_hat(i) << ',';
    os << objective << ',' << omega_norm << ',' << iterations << ',' << (converged ? 1 : 0) << '\n';
    return os.str();
  }
};

/// sum_i psi(y_i - x_i' beta) x_i.
inline Vector omega_tilde(const Design& design, std::span<const double> y, const Vector& beta,
                          const LossSpec& loss) {
  const Matrix& x = design.x();
  if (static_cast<Eigen::Index>(y.size()) != x.rows() || beta.size() != x.cols())
    throw UsageError("omega_tilde: dimension mismatch");
  Vector out = Vector::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out += psi_eval(loss, y[static_cast<std::size_t>(i)] - x.row(i).dot(beta)) * x.row(i).transpose();
  return out;
}

namespace detail {

/// Robust scale of y: normalized MAD, falling back to mean/max absolute deviation.
inline double response_scale(std::span<const double> y) {
  std::vector<double> v(y.begin(), y.end());
  const double med = stats::median(v);
  for (auto& a : v) a = std::abs(a - med);
  double s = 1.4826 * stats::median(v);
  if (s > 0.0) return s;
  s = stats::mean(v);
  if (s > 0.0) return s;
  for (double a : y) s = std::max(s, std::abs(a));
  return s > 0.0 ? s : 1.0;
}

inline double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }
inline double logistic(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// Loss with kinks smoothed at width h (h = 0 gives the exact loss where it is
/// twice differentiable almost everywhere). rho_h decreases pointwise as h shrinks.
struct SmoothedLoss {
  LossSpec spec;
  double h = 0.0;

  /// value, first and second derivative at residual r
  void eval(double r, double& rho, double& psi, double& dpsi) const {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, Huber>) {
            const double a = std::abs(r);
            rho = a <= l.c ? 0.5 * r * r : l.c * a - 0.5 * l.c * l.c;
            psi = std::clamp(r, -l.c, l.c);
            dpsi = a <= l.c ? 1.0 : 0.0;
          } else if constexpr (std::is_same_v<T, Square>) {
            rho = 0.5 * r * r;
            psi = r;
            dpsi = 1.0;
          } else if constexpr (std::is_same_v<T, Quantile>) {
            const double u = r / h;
            const double sig = logistic(u);
            rho = (l.alpha - 1.0) * r + h * softplus(u);
            psi = l.alpha - 1.0 + sig;
            dpsi = sig * (1.0 - sig) / h;
          } else {
            if (l.q == 2.0) {
              rho = r * r;
              psi = 2.0 * r;
              dpsi = 2.0;
              return;
            }
            const double s = r * r + h * h;
            const double base = std::pow(s, 0.5 * l.q - 2.0);
            rho = base * s * s;
            psi = l.q * r * base * s;
            dpsi = l.q * base * ((l.q - 1.0) * r * r + h * h);
          }
        },
        spec);
  }
};

inline bool needs_smoothing(const LossSpec& spec) {
  if (std::holds_alternative<Quantile>(spec)) return true;
  if (const auto* p = std::get_if<PowerQ>(&spec)) return p->q < 2.0;
  return false;
}

inline double exact_objective(const LossSpec& loss, const Matrix& x, std::span<const double> y,
                              const Vector& beta) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    f += rho_eval(loss, y[static_cast<std::size_t>(i)] - x.row(i).dot(beta));
  return f;
}

/// Half-width of the subgradient interval at a kink, per unit |x_i|.
inline double kink_half_jump(const LossSpec& loss) {
  if (std::holds_alternative<Quantile>(loss)) return 1.0;
  if (const auto* p = std::get_if<PowerQ>(&loss); p && p->q == 1.0) return p->q;
  return 0.0;
}

}  // namespace detail

/**
 * Minimizes sum_i rho(y_i - x_i' beta) from beta = 0.
 *
 * The problem is solved in the rescaled coordinates theta = Sigma^{1/2} beta,
 * where the Hessian is well conditioned. Quantile and PowerQ (q < 2) losses
 * run a smoothing homotopy: a damped Newton solve at kink width h, then h is
 * shrunk geometrically until it falls below smoothing_floor * scale(y). For
 * discontinuous psi the result is snapped to the basic solution through the
 * p smallest residuals whenever that does not increase the objective.
 */
inline FitResult fit(const Design& design, const RescaledDesign& rd, std::span<const double> y,
                     const LossSpec& loss, const SolverConfig& cfg = {}) {
  validate(loss);
  cfg.validate();
  const Matrix& x = design.x();
  const Eigen::Index n = x.rows(), p = x.cols();
  if (static_cast<Eigen::Index>(y.size()) != n) throw UsageError("fit: y length differs from design rows");
  for (double v : y)
    if (!std::isfinite(v)) throw UsageError("fit: y contains non-finite values");
  const Matrix& z = rd.z;
  const Eigen::Map<const Vector> yv(y.data(), n);

  const double scale = detail::response_scale(y);
  const bool smoothing = detail::needs_smoothing(loss);
  detail::SmoothedLoss sl{loss, smoothing ? (cfg.smoothing_h0 > 0.0 ? cfg.smoothing_h0 : scale) : 0.0};
  const double h_floor = cfg.smoothing_floor * scale;
  const double zy_norm = (z.transpose() * yv).norm();

  FitResult res;
  Vector theta = Vector::Zero(p);
  Vector resid = yv;
  Vector psi(n), dpsi(n);

  auto evaluate = [&](const Vector& r, Vector* ps, Vector* dps) {
    double f = 0.0, rho = 0.0, s = 0.0, d = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      sl.eval(r(i), rho, s, d);
      f += rho;
      if (ps) (*ps)(i) = s;
      if (dps) (*dps)(i) = d;
    }
    return f;
  };

  double f = evaluate(resid, &psi, &dpsi);
  if (cfg.keep_trace) res.solver_trace.push_back(f);
  std::size_t iter = 0;
  bool budget_exhausted = false;

  for (;;) {
    // Damped Newton at the current smoothing level.
    double lambda = 0.0;
    bool stage_done = false;
    while (!stage_done) {
      if (iter >= cfg.max_iter) {
        budget_exhausted = true;
        break;
      }
      const Vector score = z.transpose() * psi;  // -gradient of the objective
      if (score.norm() <= cfg.grad_tol * (1.0 + zy_norm)) break;
      const Matrix hess = z.transpose() * dpsi.asDiagonal() * z;
      const double hscale = std::max(hess.trace() / static_cast<double>(p), 1e-300);
      bool accepted = false;
      for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
        Matrix a = hess;
        a.diagonal().array() += lambda;
        Eigen::LDLT<Matrix> ldlt(a);
        Vector step = ldlt.solve(score);
        if (ldlt.info() != Eigen::Success || !step.allFinite() || !(step.dot(score) > 0.0)) {
          lambda = std::max(10.0 * lambda, 1e-8 * hscale + 1e-12);
          continue;
        }
        const double slope = step.dot(score);
        double t = 1.0;
        for (std::size_t b = 0; b <= cfg.max_backtracks; ++b, t *= 0.5) {
          const Vector cand = theta + t * step;
          const Vector r_cand = yv - z * cand;
          Vector ps(n), dps(n);
          const double f_cand = evaluate(r_cand, &ps, &dps);
          if (f_cand <= f - cfg.armijo * t * slope) {
            const double rel = (f - f_cand) / std::max(std::abs(f), 1e-300);
            theta = cand;
            resid = r_cand;
            psi = std::move(ps);
            dpsi = std::move(dps);
            f = f_cand;
            if (cfg.keep_trace) res.solver_trace.push_back(f);
            accepted = true;
            if (rel < cfg.obj_tol) stage_done = true;
            break;
          }
        }
        if (!accepted) lambda = std::max(10.0 * lambda, 1e-8 * hscale + 1e-12);
        else lambda *= 0.1;
      }
      ++iter;
      if (!accepted) break;  // no descent direction left at machine precision
    }
    if (budget_exhausted || !smoothing || sl.h < h_floor) break;
    sl.h *= cfg.smoothing_shrink;
    f = evaluate(resid, &psi, &dpsi);
    if (cfg.keep_trace) res.solver_trace.push_back(f);
  }

  Vector beta = rd.sigma_root_inv * theta;
  double obj = detail::exact_objective(loss, x, y, beta);

  if (!psi_is_continuous(loss)) {
    // Snap to the basic solution interpolating the p smallest residuals.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    const Vector r = yv - x * beta;
    std::partial_sort(idx.begin(), idx.begin() + p, idx.end(),
                      [&](Eigen::Index a, Eigen::Index b) { return std::abs(r(a)) < std::abs(r(b)); });
    Matrix xs(p, p);
    Vector ys(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      xs.row(j) = x.row(idx[static_cast<std::size_t>(j)]);
      ys(j) = yv(idx[static_cast<std::size_t>(j)]);
    }
    Eigen::FullPivLU<Matrix> lu(xs);
    if (lu.isInvertible()) {
      const Vector cand = lu.solve(ys);
      const double obj_cand = detail::exact_objective(loss, x, y, cand);
      if (cand.allFinite() && obj_cand <= obj) {
        beta = cand;
        obj = obj_cand;
      }
    }
  }

  // Never return a point worse than the start.
  const double obj_zero = detail::exact_objective(loss, x, y, Vector::Zero(p));
  if (obj_zero < obj) {
    beta.setZero();
    obj = obj_zero;
  }
  if (cfg.keep_trace) res.solver_trace.push_back(obj);

  res.beta_hat = beta;
  res.theta_hat = rd.sigma_root * beta;
  res.objective = obj;
  res.omega_residual = omega_tilde(design, y, beta, loss);
  res.omega_norm = res.omega_residual.norm();
  res.iterations = iter;
  const double jump = detail::kink_half_jump(loss);
  if (jump > 0.0) {
    res.certificate_bound = static_cast<double>(p + 1) * rd.summary.r_tilde_n * jump;
    res.converged = !budget_exhausted && res.omega_norm <= res.certificate_bound + 1e-6;
  } else {
    const double xy_norm = (x.transpose() * yv).norm();
    res.converged = res.omega_norm < cfg.grad_tol * (1.0 + xy_norm);
  }
  return res;
}

inline FitResult fit(const Design& design, std::span<const double> y, const LossSpec& loss,
                     const SolverConfig& cfg = {}) {
  return fit(design, rescale(design), y, loss, cfg);
}

struct OscillationResult {
  double max_norm = 0.0;  // max over evaluated points of |K_n(theta) - K_n(0)|
  Vector argmax;          // theta attaining it
  std::size_t points = 0;
};

inline constexpr std::size_t kMaxOscillationPoints = 1000000;

/**
 * Lower bound for sup_{|theta| <= delta_n} |K_n(theta) - K_n(0)| where
 * K_n(theta) = Omega_n(theta) - E Omega_n(theta). The expectation uses phi-hat
 * from `centering`, which must come from an independent error sample.
 * Points: the full factorial grid with grid_per_axis points per axis inside
 * the ball, plus as many seeded uniform points in the ball.
 */
inline OscillationResult m_process_oscillation(const RescaledDesign& rd, std::span<const double> errors,
                                               const LossSpec& loss, double delta_n,
                                               std::size_t grid_per_axis, std::uint64_t seed,
                                               const EmpiricalVarphi& centering) {
  const Eigen::Index n = rd.n(), p = rd.p();
  if (static_cast<Eigen::Index>(errors.size()) != n) throw UsageError("oscillation: error length differs from n");
  if (!(delta_n > 0.0)) throw UsageError("oscillation: delta_n must be positive");
  if (!(delta_n * rd.summary.r_n < 1.0)) throw UsageError("oscillation: need delta_n * r_n < 1");
  if (grid_per_axis < 2) throw UsageError("oscillation: need at least 2 grid points per axis");
  const double total = std::pow(static_cast<double>(grid_per_axis), static_cast<double>(p));
  if (total > static_cast<double>(kMaxOscillationPoints))
    throw UsageError("oscillation: grid exceeds 10^6 points");

  std::vector<double> psi0(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) psi0[static_cast<std::size_t>(i)] = psi_eval(loss, errors[static_cast<std::size_t>(i)]);
  const double phi0 = centering(0.0);

  OscillationResult out;
  out.argmax = Vector::Zero(p);
  auto evaluate = [&](const Vector& theta) {
    ++out.points;
    if (theta.isZero(0.0)) return;
    const Vector shift = rd.z * theta;
    Vector k = Vector::Zero(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto si = static_cast<std::size_t>(i);
      const double c = psi_eval(loss, errors[si] - shift(i)) - psi0[si] - (centering(-shift(i)) - phi0);
      k += c * rd.z.row(i).transpose();
    }
    const double norm = k.norm();
    if (norm > out.max_norm) {
      out.max_norm = norm;
      out.argmax = theta;
    }
  };

  std::size_t in_ball = 0;
  std::vector<std::size_t> counter(static_cast<std::size_t>(p), 0);
  const auto g = static_cast<double>(grid_per_axis - 1);
  for (;;) {
    Vector theta(p);
    for (Eigen::Index j = 0; j < p; ++j)
      theta(j) = -delta_n + 2.0 * delta_n * static_cast<double>(counter[static_cast<std::size_t>(j)]) / g;
    if (theta.norm() <= delta_n * (1.0 + 1e-12)) {
      ++in_ball;
      evaluate(theta);
    }
    std::size_t j = 0;
    while (j < counter.size() && ++counter[j] == grid_per_axis) counter[j++] = 0;
    if (j == counter.size()) break;
  }

  auto eng = make_engine(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t r = 0; r < in_ball; ++r) {
    Vector dir(p);
    for (Eigen::Index j = 0; j < p; ++j) dir(j) = normal(eng);
    const double len = dir.norm();
    if (!(len > 0.0)) continue;
    const double radius = delta_n * std::pow(unif(eng), 1.0 / static_cast<double>(p));
    evaluate(Vector(dir * (radius / len)));
  }
  return out;
}

}  // namespace mest

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mest/estimator.hpp"
#include "mest/process.hpp"
#include "mest/stats.hpp"

using namespace mest;

namespace {

Vector ols(const Design& d, const std::vector<double>& y) {
  const Eigen::Map<const Vector> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  return d.x().colPivHouseholderQr().solve(yv);
}

std::vector<double> response(const Design& d, const Vector& beta, const std::vector<double>& e) {
  const Vector mean = d.x() * beta;
  std::vector<double> y(e.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = mean(static_cast<Eigen::Index>(i)) + e[i];
  return y;
}

}  // namespace

TEST(Fit, SquareMatchesClosedForm) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto n = static_cast<Eigen::Index>(20 + 7 * (s % 13));
    const auto p = static_cast<Eigen::Index>(1 + s % 4);
    const auto d = build_random_design(n, p, {-2.0, 3.0}, s);
    const auto y = sample_innovations(StudentT{3.0}, static_cast<std::size_t>(n), 1000 + s);
    const auto r = fit(d, y, Square{});
    const Vector oracle = ols(d, y);
    EXPECT_LT((r.beta_hat - oracle).norm() / (1.0 + oracle.norm()), 1e-8) << "instance " << s;
    EXPECT_TRUE(r.converged);
  }
}

TEST(Fit, SquareOnPolynomialDesign) {
  const auto d = build_polynomial_design(2000, 2);
  const auto y = response(d, Vector::Constant(2, 0.5), sample_innovations(Gaussian{}, 2000, 4));
  const auto r = fit(d, y, Square{});
  const Vector oracle = ols(d, y);
  EXPECT_LT((r.beta_hat - oracle).norm() / (1.0 + oracle.norm()), 1e-8);
  // A cubic trend at this length has condition number near 3e13.
  EXPECT_THROW(fit(build_polynomial_design(2000, 3), y, Square{}), NumericError);
}

TEST(Fit, QuantileMedianOfFive) {
  const auto d = build_polynomial_design(5, 1);
  const std::vector<double> y = {1, 2, 3, 4, 5};
  const auto r = fit(d, y, Quantile{0.5});
  EXPECT_NEAR(r.beta_hat(0), 3.0, 1e-9);
  EXPECT_TRUE(r.converged);
}

TEST(Fit, QuantileInsideSampleQuantileInterval) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const std::size_t n = 5 + s % 40;
    const double alpha = 0.1 + 0.8 * static_cast<double>(s % 9) / 8.0;
    const auto d = build_polynomial_design(static_cast<Eigen::Index>(n), 1);
    auto y = sample_innovations(Gaussian{1.0, 2.0}, n, 500 + s);
    if (s % 5 == 0) y[0] = y[1];  // ties
    const auto r = fit(d, y, Quantile{alpha});
    // Minimizers of sum rho_alpha(y_i - b) form [y_(k), y_(k')] with k = ceil(n alpha) and
    // k' = floor(n alpha) + 1 (a single point unless n alpha is an integer).
    std::vector<double> sy(y);
    std::sort(sy.begin(), sy.end());
    const double na = static_cast<double>(n) * alpha;
    const auto lo = static_cast<std::size_t>(std::ceil(na - 1e-12));
    const auto hi = static_cast<std::size_t>(std::floor(na + 1e-12)) + 1;
    EXPECT_GE(r.beta_hat(0), sy[std::max<std::size_t>(lo, 1) - 1] - 1e-9) << "instance " << s;
    EXPECT_LE(r.beta_hat(0), sy[std::min(hi, n) - 1] + 1e-9) << "instance " << s;
  }
}

TEST(Fit, QuantileCertificate) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto d = build_random_design(300, 3, {0.0, 2.0}, s);
    const auto y = response(d, Vector::Ones(3), sample_innovations(StudentT{2.0}, 300, 40 + s));
    for (double alpha : {0.25, 0.5, 0.9}) {
      const auto rd = rescale(d);
      const auto r = fit(d, rd, y, Quantile{alpha});
      EXPECT_LE(r.omega_norm, (3.0 + 1.0) * rd.summary.r_tilde_n + 1e-6);
      EXPECT_TRUE(r.converged);
    }
  }
}

TEST(Fit, PowerQOneIsMedianRegression) {
  const auto d = build_random_design(200, 2, {-1.0, 1.0}, 3);
  const auto y = response(d, Vector::Ones(2), sample_innovations(StudentT{2.0}, 200, 3));
  const auto a = fit(d, y, PowerQ{1.0});
  const auto b = fit(d, y, Quantile{0.5});
  EXPECT_NEAR(a.objective, 2.0 * b.objective, 1e-8 * a.objective);
  EXPECT_LT((a.beta_hat - b.beta_hat).norm(), 1e-6);
}

TEST(Fit, SmoothLossesReachStationarity) {
  const auto d = build_random_design(500, 3, {-1.0, 1.0}, 5);
  const auto y = response(d, Vector::Ones(3), sample_innovations(StudentT{3.0}, 500, 5));
  const Eigen::Map<const Vector> yv(y.data(), 500);
  const double xy = (d.x().transpose() * yv).norm();
  for (const LossSpec& loss : {LossSpec{Huber{1.345}}, LossSpec{PowerQ{1.5}}, LossSpec{PowerQ{1.2}},
                               LossSpec{PowerQ{2.0}}, LossSpec{Square{}}}) {
    const auto r = fit(d, y, loss);
    EXPECT_LT(r.omega_norm, 1e-8 * (1.0 + xy)) << to_string(loss);
    EXPECT_TRUE(r.converged) << to_string(loss);
  }
}

TEST(Fit, HuberIgnoresOutlier) {
  const auto d = build_random_design(200, 2, {-1.0, 1.0}, 6);
  auto y = response(d, Vector::Constant(2, 2.0), sample_innovations(Gaussian{}, 200, 6));
  const auto clean_h = fit(d, y, Huber{1.345});
  const auto clean_s = fit(d, y, Square{});
  y[17] = 1e6;
  const auto dirty_h = fit(d, y, Huber{1.345});
  const auto dirty_s = fit(d, y, Square{});
  const double shift_h = (dirty_h.beta_hat - clean_h.beta_hat).norm();
  const double shift_s = (dirty_s.beta_hat - clean_s.beta_hat).norm();
  EXPECT_LT(shift_h, 0.1);
  EXPECT_GT(shift_s, 1000.0 * shift_h);
}

TEST(Fit, ObjectiveNeverAboveStart) {
  const auto d = build_random_design(100, 3, {-1.0, 1.0}, 7);
  const auto y = sample_innovations(StableSAS{1.2}, 100, 7);
  for (const LossSpec& loss : {LossSpec{Huber{1.0}}, LossSpec{Quantile{0.3}}, LossSpec{PowerQ{1.25}}}) {
    const auto r = fit(d, y, loss);
    double at_zero = 0.0;
    for (double v : y) at_zero += rho_eval(loss, v);
    EXPECT_LE(r.objective, at_zero);
  }
}

TEST(Fit, TraceNonincreasing) {
  const auto d = build_polynomial_design(400, 2);
  const auto y = response(d, Vector::Ones(2), sample_innovations(StudentT{2.5}, 400, 8));
  for (const LossSpec& loss : {LossSpec{Huber{1.345}}, LossSpec{Quantile{0.7}}, LossSpec{PowerQ{1.0}},
                               LossSpec{PowerQ{1.5}}, LossSpec{Square{}}}) {
    const auto r = fit(d, y, loss);
    ASSERT_GE(r.solver_trace.size(), 2u);
    for (std::size_t i = 1; i < r.solver_trace.size(); ++i)
      ASSERT_LE(r.solver_trace[i], r.solver_trace[i - 1] * (1.0 + 1e-14)) << to_string(loss) << " step " << i;
    EXPECT_EQ(r.solver_trace.back(), r.objective);
  }
}

TEST(Fit, TranslationEquivariance) {
  const auto d = build_random_design(300, 3, {-1.0, 2.0}, 9);
  const auto e = sample_innovations(StudentT{3.0}, 300, 9);
  Vector b0(3);
  b0 << 5.0, -3.0, 0.25;
  const auto y0 = response(d, Vector::Zero(3), e);
  const auto y1 = response(d, b0, e);
  for (const LossSpec& loss : {LossSpec{Huber{1.345}}, LossSpec{Quantile{0.4}}, LossSpec{PowerQ{1.3}},
                               LossSpec{Square{}}}) {
    const auto a = fit(d, y0, loss), b = fit(d, y1, loss);
    EXPECT_LT((b.beta_hat - a.beta_hat - b0).norm(), 1e-6 * (1.0 + b0.norm())) << to_string(loss);
  }
}

TEST(Fit, Deterministic) {
  const auto d = build_random_design(100, 2, {-1.0, 1.0}, 10);
  const auto y = sample_innovations(Gaussian{}, 100, 10);
  EXPECT_EQ(fit(d, y, Quantile{0.5}).beta_hat, fit(d, y, Quantile{0.5}).beta_hat);
}

TEST(Fit, IterationBudgetReportsNotConverged) {
  const auto d = build_random_design(200, 3, {-1.0, 1.0}, 11);
  const auto y = response(d, Vector::Ones(3), sample_innovations(StudentT{3.0}, 200, 11));
  SolverConfig cfg;
  cfg.max_iter = 1;
  const auto r = fit(d, y, Huber{1.345}, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_TRUE(r.beta_hat.allFinite());
}

TEST(Fit, BadInputs) {
  const auto d = build_polynomial_design(5, 1);
  EXPECT_THROW(fit(d, std::vector<double>{1, 2, 3}, Huber{1.0}), UsageError);
  EXPECT_THROW(fit(d, std::vector<double>{1, 2, NAN, 4, 5}, Huber{1.0}), UsageError);
  Matrix x(6, 2);
  x.col(0).setOnes();
  x.col(1).setOnes();
  EXPECT_THROW(fit(Design(x), std::vector<double>(6, 1.0), Huber{1.0}), NumericError);
}

TEST(OmegaTilde, SquareAtOlsVanishes) {
  const auto d = build_random_design(100, 3, {-1.0, 1.0}, 12);
  const auto y = sample_innovations(Gaussian{}, 100, 12);
  EXPECT_LT(omega_tilde(d, y, ols(d, y), Square{}).norm(), 1e-8);
}

TEST(OmegaTilde, QuantileTwoPoints) {
  const auto d = build_polynomial_design(2, 1);
  EXPECT_EQ(omega_tilde(d, std::vector<double>{-1.0, 1.0}, Vector::Zero(1), Quantile{0.5})(0), 0.0);
}

TEST(OmegaTilde, HuberClippedRegion) {
  const auto d = build_random_design(50, 2, {-1.0, 1.0}, 13);
  std::vector<double> y(50);
  Vector expect = Vector::Zero(2);
  for (std::size_t i = 0; i < 50; ++i) {
    y[i] = (i % 3 == 0 ? -1.0 : 1.0) * (2.0 + static_cast<double>(i));
    expect += 1.5 * (y[i] > 0 ? 1.0 : -1.0) * d.x().row(static_cast<Eigen::Index>(i)).transpose();
  }
  EXPECT_LT((omega_tilde(d, y, Vector::Zero(2), Huber{1.5}) - expect).norm(), 1e-12);
}

TEST(Oscillation, SquareLossIsIdenticallyZero) {
  const auto rd = rescale(build_polynomial_design(500, 2));
  const auto e = simulate_path(LinearProcess{GeometricCoeffs{0.5}, Gaussian{}}, 500, 14);
  const EmpiricalVarphi centering(Square{}, sample_innovations(Gaussian{}, 10000, 15));
  const auto r = m_process_oscillation(rd, e, Square{}, 1.0, 7, 16, centering);
  EXPECT_LT(r.max_norm, 1e-10);
  EXPECT_GT(r.points, 0u);
}

TEST(Oscillation, OriginContributesZero) {
  const auto rd = rescale(build_polynomial_design(300, 1));
  const auto e = sample_innovations(Gaussian{}, 300, 17);
  const EmpiricalVarphi centering(Huber{1.345}, sample_innovations(Gaussian{}, 10000, 18));
  // With an odd grid the origin is a grid point; a tiny ball keeps every other point's norm small.
  const auto r = m_process_oscillation(rd, e, Huber{1.345}, 1e-12, 3, 19, centering);
  EXPECT_LT(r.max_norm, 1e-9);
}

TEST(Oscillation, HuberPositiveAndDeterministic) {
  const auto rd = rescale(build_polynomial_design(1000, 2));
  const auto e = simulate_path(LinearProcess{GeometricCoeffs{0.5}, Gaussian{}}, 1000, 20);
  const EmpiricalVarphi centering(Huber{1.345}, simulate_path(LinearProcess{GeometricCoeffs{0.5}, Gaussian{}}, 100000, 21));
  const auto a = m_process_oscillation(rd, e, Huber{1.345}, std::log(1000.0), 9, 22, centering);
  const auto b = m_process_oscillation(rd, e, Huber{1.345}, std::log(1000.0), 9, 22, centering);
  EXPECT_GT(a.max_norm, 0.0);
  EXPECT_EQ(a.max_norm, b.max_norm);
  EXPECT_LE(a.argmax.norm(), std::log(1000.0) * (1.0 + 1e-12));
}

TEST(Oscillation, Guards) {
  const auto rd = rescale(build_polynomial_design(100, 2));
  const auto e = sample_innovations(Gaussian{}, 100, 23);
  const EmpiricalVarphi centering(Huber{1.0}, e);
  EXPECT_THROW(m_process_oscillation(rd, e, Huber{1.0}, 0.5, 1001, 1, centering), UsageError);
  EXPECT_THROW(m_process_oscillation(rd, e, Huber{1.0}, 0.5, 1, 1, centering), UsageError);
  EXPECT_THROW(m_process_oscillation(rd, e, Huber{1.0}, 1.0 / rd.summary.r_n, 3, 1, centering), UsageError);
  EXPECT_THROW(m_process_oscillation(rd, std::vector<double>(5, 0.0), Huber{1.0}, 0.5, 3, 1, centering), UsageError);
}

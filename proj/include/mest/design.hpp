#pragma once

/**
 * \file design.hpp
 * Design matrices X_n and their rescaled form z_i = Sigma_n^{-1/2} x_i,
 * where Sigma_n = X'X and the inverse root is the symmetric one.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mest/error.hpp"
#include "mest/rng.hpp"

namespace mest {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// n x p design, one observation per row.
class Design {
 public:
  Design() = default;
  explicit Design(Matrix rows) : x_(std::move(rows)) {
    if (x_.cols() < 1) throw UsageError("design needs p >= 1 columns");
    if (x_.rows() < x_.cols()) throw UsageError("design needs n >= p rows");
    if (!x_.allFinite()) throw UsageError("design contains non-finite entries");
  }

  const Matrix& x() const { return x_; }
  Eigen::Index n() const { return x_.rows(); }
  Eigen::Index p() const { return x_.cols(); }
  Matrix sigma() const { return x_.transpose() * x_; }

 private:
  Matrix x_;
};

/// Rows (1, i, ..., i^{p-1}) for i = 1..n.
inline Design build_polynomial_design(Eigen::Index n, Eigen::Index p) {
  if (p < 1 || n < p) throw UsageError("polynomial design needs n >= p >= 1");
  Matrix x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    double v = 1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      x(i, j) = v;
      v *= static_cast<double>(i + 1);
    }
  }
  return Design(std::move(x));
}

/// Bounded regressor law for random designs.
struct UniformDist {
  double lo = -1.0;
  double hi = 1.0;
};

/// First column all ones; remaining entries i.i.d. from dist.
inline Design build_random_design(Eigen::Index n, Eigen::Index p, UniformDist dist,
                                  std::uint64_t seed) {
  if (p < 1 || n < p) throw UsageError("random design needs n >= p >= 1");
  if (!(dist.lo < dist.hi) || !std::isfinite(dist.lo) || !std::isfinite(dist.hi))
    throw UsageError("uniform design law needs finite lo < hi");
  auto eng = make_engine(seed);
  std::uniform_real_distribution<double> u(dist.lo, dist.hi);
  Matrix x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < p; ++j) x(i, j) = u(eng);
  }
  return Design(std::move(x));
}

struct DesignSummary {
  double r_n = 0.0;        // max_i |z_i|
  double r_tilde_n = 0.0;  // max_i |x_i|
  std::map<double, double> zeta;  // q -> sum_i |z_i|^q
  std::map<double, double> xi;    // q -> sum_i |x_i|^q
  double lambda_min = 0.0;        // smallest eigenvalue of Sigma_n
  double condition_number = 0.0;
};

struct RescaledDesign {
  Matrix z;                // n x p, row i is z_i'
  Matrix sigma_root_inv;   // Sigma_n^{-1/2}
  Matrix sigma_root;       // Sigma_n^{1/2}
  DesignSummary summary;

  Eigen::Index n() const { return z.rows(); }
  Eigen::Index p() const { return z.cols(); }
};

inline constexpr double kMaxConditionNumber = 1e12;

namespace detail {
inline void fill_summary(const Matrix& x, const Matrix& z, std::span<const double> q_list,
                         DesignSummary& s) {
  std::vector<double> qs = {2.0, 3.0, 4.0};
  qs.insert(qs.end(), q_list.begin(), q_list.end());
  const Vector zn = z.rowwise().norm();
  const Vector xn = x.rowwise().norm();
  s.r_n = zn.maxCoeff();
  s.r_tilde_n = xn.maxCoeff();
  for (double q : qs) {
    if (!(q > 0.0)) throw UsageError("zeta/xi exponents must be positive");
    s.zeta[q] = zn.array().pow(q).sum();
    s.xi[q] = xn.array().pow(q).sum();
  }
}
}  // namespace detail

/**
 * Computes z_i = Sigma_n^{-1/2} x_i.
 *
 * Sigma_n is never formed. With X = QR and R = W S V' (SVD of the p x p
 * factor), Sigma_n = V S^2 V' is its eigen-decomposition, the symmetric
 * inverse root is V S^{-1} V', and Z = Q W V' has orthonormal columns to
 * machine precision even when Sigma_n is badly conditioned.
 */
inline RescaledDesign rescale(const Design& design, std::span<const double> q_list = {}) {
  const Matrix& x = design.x();
  const Eigen::Index n = x.rows(), p = x.cols();
  Eigen::HouseholderQR<Matrix> qr(x);
  const Matrix r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Matrix> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector s = svd.singularValues();
  const double smax = s.maxCoeff(), smin = s.minCoeff();
  if (!(smin > 0.0)) throw NumericError("design Gram matrix is singular");
  const double cond = (smax / smin) * (smax / smin);
  if (!(cond <= kMaxConditionNumber))
    throw NumericError("design Gram matrix is near-singular (condition number " +
                       std::to_string(cond) + ")");
  const Matrix& v = svd.matrixV();
  const Matrix q_thin = qr.householderQ() * Matrix::Identity(n, p);

  RescaledDesign out;
  out.z = q_thin * (svd.matrixU() * v.transpose());
  out.sigma_root_inv = v * s.cwiseInverse().asDiagonal() * v.transpose();
  out.sigma_root = v * s.asDiagonal() * v.transpose();
  detail::fill_summary(x, out.z, q_list, out.summary);
  out.summary.lambda_min = smin * smin;
  out.summary.condition_number = cond;
  return out;
}

inline DesignSummary summarize(const Design& design, std::span<const double> q_list = {}) {
  return rescale(design, q_list).summary;
}

/// sum_{i=1}^{n-|k|} z_i z_{i+k}'; negative k gives the transpose of the |k| term.
inline Matrix delta_k_partial(const RescaledDesign& rd, Eigen::Index k) {
  const Eigen::Index n = rd.n(), a = k < 0 ? -k : k;
  if (a >= n) throw UsageError("lag |k| must be smaller than n");
  const Matrix m = rd.z.topRows(n - a).transpose() * rd.z.bottomRows(n - a);
  return k >= 0 ? m : Matrix(m.transpose());
}

struct DeltaKStep {
  Eigen::Index n = 0;
  Matrix partial;                // delta_k_partial at this n
  double change = 0.0;           // max-entry distance to the previous n (0 for the first)
};

struct DeltaKTrace {
  Eigen::Index k = 0;
  std::vector<DeltaKStep> steps;
  bool non_cauchy = false;  // successive changes failed to shrink
};

/**
 * Partial sums of the lag-k design cross products along a grid of n. The
 * limit cannot be certified from finitely many n; the trace is flagged
 * non-Cauchy when the last change is not smaller than the one before it.
 */
inline DeltaKTrace delta_k_trace(const std::function<Design(Eigen::Index)>& build,
                                 std::span<const Eigen::Index> n_grid, Eigen::Index k) {
  if (n_grid.empty()) throw UsageError("delta_k_trace: empty n grid");
  DeltaKTrace t;
  t.k = k;
  for (Eigen::Index n : n_grid) {
    if (!t.steps.empty() && n <= t.steps.back().n) throw UsageError("delta_k_trace: n grid must increase");
    DeltaKStep st;
    st.n = n;
    st.partial = delta_k_partial(rescale(build(n)), k);
    if (!t.steps.empty()) st.change = (st.partial - t.steps.back().partial).cwiseAbs().maxCoeff();
    t.steps.push_back(std::move(st));
  }
  const std::size_t m = t.steps.size();
  if (m >= 3) t.non_cauchy = !(t.steps[m - 1].change < t.steps[m - 2].change);
  return t;
}

}  // namespace mest

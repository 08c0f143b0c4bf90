#pragma once

// Small descriptive-statistics toolkit shared by the simulation, inference
// and experiment modules.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "mest/error.hpp"

namespace mest::stats {

inline double mean(std::span<const double> x) {
  if (x.empty()) throw UsageError("mean of empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Unbiased sample variance.
inline double variance(std::span<const double> x) {
  if (x.size() < 2) throw UsageError("variance needs at least two values");
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of an already sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw UsageError("quantile of empty sample");
  if (!(prob >= 0.0 && prob <= 1.0)) throw UsageError("quantile probability outside [0,1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::span<const double> x, double prob) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, prob);
}

inline double median(std::span<const double> x) { return quantile(x, 0.5); }

inline double iqr(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

inline double chi_squared_quantile(double p, double dof) {
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(dof), p);
}

/// One-sample Kolmogorov-Smirnov distance between the empirical law of x and N(0,1).
inline double ks_statistic_normal(std::span<const double> x) {
  if (x.empty()) throw UsageError("KS statistic of empty sample");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = normal_cdf(s[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Two-sample Kolmogorov-Smirnov distance.
inline double ks_statistic_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw UsageError("KS statistic of empty sample");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] <= v) ++i;
    while (j < y.size() && y[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / static_cast<double>(x.size()) -
                             static_cast<double>(j) / static_cast<double>(y.size())));
  }
  return d;
}

/// Asymptotic Kolmogorov survival function P(K > lambda).
inline double kolmogorov_survival(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

inline double ks_two_sample_pvalue(double d, std::size_t n, std::size_t m) {
  const double ne = static_cast<double>(n) * static_cast<double>(m) / static_cast<double>(n + m);
  const double sq = std::sqrt(ne);
  return kolmogorov_survival((sq + 0.12 + 0.11 / sq) * d);
}

/// Hill estimator of the tail index from the k largest absolute values.
inline double hill_tail_index(std::span<const double> x, std::size_t k) {
  if (k < 1 || k >= x.size()) throw UsageError("Hill estimator needs 1 <= k < n");
  std::vector<double> a(x.size());
  std::transform(x.begin(), x.end(), a.begin(), [](double v) { return std::abs(v); });
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(k), a.end(),
                   std::greater<>());
  const double threshold = a[k];
  if (!(threshold > 0.0)) throw NumericError("Hill estimator threshold is zero");
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += std::log(a[i] / threshold);
  return static_cast<double>(k) / s;
}

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least-squares line through (x, y).
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("line fit needs >= 2 paired points");
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw UsageError("line fit needs distinct x values");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return f;
}

}  // namespace mest::stats

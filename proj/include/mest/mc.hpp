#pragma once

/**
 * \file mc.hpp
 * Replicated simulate -> fit -> diagnose experiments: CLT coverage and
 * normality, Bahadur remainder decay, dependence decay, and M-process
 * oscillation. Every replication draws from its own seed stream, so results
 * do not depend on the thread count or on which other replications ran.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mest/dependence.hpp"
#include "mest/design.hpp"
#include "mest/error.hpp"
#include "mest/estimator.hpp"
#include "mest/inference.hpp"
#include "mest/loss.hpp"
#include "mest/parallel.hpp"
#include "mest/process.hpp"
#include "mest/rng.hpp"
#include "mest/stats.hpp"

namespace mest {

enum class ExperimentKind { Clt, Bahadur, Dependence, Oscillation };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Clt: return "clt";
    case ExperimentKind::Bahadur: return "bahadur";
    case ExperimentKind::Dependence: return "dependence";
    default: return "oscillation";
  }
}

enum class DesignKind { Polynomial, Random };

struct DesignSpec {
  DesignKind kind = DesignKind::Random;
  Eigen::Index p = 2;
  UniformDist dist{-1.0, 1.0};
  std::uint64_t seed = 1;
};

inline Design build_design(const DesignSpec& spec, Eigen::Index n) {
  return spec.kind == DesignKind::Polynomial ? build_polynomial_design(n, spec.p)
                                             : build_random_design(n, spec.p, spec.dist, spec.seed);
}

/// delta_n = min(c log n, r_n^{-1/2}) by default, or c n^power.
struct DeltaRule {
  enum class Kind { LogCapped, Power } kind = Kind::LogCapped;
  double c = 1.0;
  double power = 0.0;

  double operator()(std::size_t n, double r_n) const {
    const double nn = static_cast<double>(n);
    if (kind == Kind::Power) return c * std::pow(nn, power);
    return std::min(c * std::log(nn), 1.0 / std::sqrt(r_n));
  }
};

struct NamedModel {
  std::string label;
  ErrorModel model;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Clt;
  DesignSpec design;
  std::vector<std::size_t> n_grid{500};
  NamedModel error{"iid", LinearProcess{ExplicitCoeffs{{1.0}}, Gaussian{}}};
  std::vector<NamedModel> extra_models;  // further models for dependence experiments
  LossSpec loss = Huber{1.345};
  std::size_t replications = 100;
  std::size_t first_replication = 0;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  std::optional<std::size_t> bandwidth;
  Kernel kernel = Kernel::Bartlett;
  double level = 0.95;
  bool center_errors = false;        // shift errors so that E psi(e) = 0
  std::size_t aux_factor = 20;       // oracle Delta path length = aux_factor * max n
  std::size_t varphi_sample = 1000000;
  DeltaRule delta_rule;
  std::size_t grid_per_axis = 5;
  std::size_t max_lag = 20;
  SimulationOptions simulation;

  void validate() const {
    if (replications < 1) throw UsageError("replications must be at least 1");
    if (n_grid.empty()) throw UsageError("n grid is empty");
    for (std::size_t i = 1; i < n_grid.size(); ++i)
      if (n_grid[i] <= n_grid[i - 1]) throw UsageError("n grid must be strictly increasing");
    if (design.p < 1) throw UsageError("design dimension p must be positive");
    if (kind != ExperimentKind::Dependence)
      for (std::size_t n : n_grid)
        if (static_cast<Eigen::Index>(n) < design.p) throw UsageError("every n must be at least p");
    mest::validate(loss);
    mest::validate(error.model, false);
    for (const auto& m : extra_models) mest::validate(m.model, false);
    if (!(level > 0.0 && level < 1.0)) throw UsageError("level must lie in (0,1)");
    if (aux_factor < 1) throw UsageError("aux_factor must be positive");
    if (varphi_sample < 100) throw UsageError("varphi_sample must be at least 100");
    if (grid_per_axis < 2) throw UsageError("grid_per_axis must be at least 2");
    if (!(delta_rule.c > 0.0)) throw UsageError("delta rule constant must be positive");
    if (kind == ExperimentKind::Bahadur) {
      if (n_grid.size() < 3) throw UsageError("bahadur experiment needs at least 3 grid points");
      for (std::size_t n : n_grid)
        if (n < 100) throw UsageError("bahadur experiment needs n >= 100");
    }
    if (kind == ExperimentKind::Dependence) {
      if (max_lag < 1) throw UsageError("max lag must be positive");
      if (replications < 100) throw UsageError("dependence experiment needs at least 100 replications");
    }
  }
};

struct ReportRow {
  std::size_t n = 0;
  std::string statistic;
  std::string key;  // quantile level, component index, or lag
  double value = NAN;
};

struct ReplicationRecord {
  std::size_t n = 0;
  std::size_t replication = 0;
  bool ok = false;
  std::vector<double> values;
  std::string error;
};

struct DependenceEntry {
  std::string label;
  DependenceProfile profile;
  std::optional<DecayFit> geometric;
  std::optional<DecayFit> polynomial;
  SrdReport srd;
  std::string fit_error;
};

inline constexpr double kMaxFailureFraction = 0.01;

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::Clt;
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
  bool valid = true;
  std::size_t attempted = 0;
  std::size_t failures = 0;
  std::vector<std::string> notes;
  std::vector<ReportRow> rows;
  std::vector<ReplicationRecord> records;
  std::vector<DependenceEntry> dependence;

  void add(std::size_t n, std::string statistic, std::string key, double value) {
    rows.push_back({n, std::move(statistic), std::move(key), value});
  }

  std::optional<double> find(std::size_t n, std::string_view statistic, std::string_view key = "") const {
    for (const auto& r : rows)
      if (r.n == n && r.statistic == statistic && r.key == key) return r.value;
    return std::nullopt;
  }

  double value(std::size_t n, std::string_view statistic, std::string_view key = "") const {
    if (auto v = find(n, statistic, key)) return *v;
    throw UsageError("report has no statistic " + std::string(statistic) + " [" + std::string(key) +
                     "] at n=" + std::to_string(n));
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "n,statistic,key,value\n";
    for (const auto& r : rows) os << r.n << ',' << r.statistic << ',' << r.key << ',' << r.value << '\n';
    return os.str();
  }

  std::string summary(bool include_timing = true) const {
    std::ostringstream os;
    os.precision(6);
    os << "experiment " << to_string(kind) << "  seed " << seed << "  attempted " << attempted
       << "  failures " << failures << "  " << (valid ? "valid" : "INVALID") << '\n';
    if (include_timing) os << "wall time " << std::fixed << std::setprecision(2) << wall_seconds << " s\n"
                           << std::defaultfloat << std::setprecision(6);
    for (const auto& note : notes) os << "note: " << note << '\n';
    for (const auto& r : rows)
      os << "  n=" << r.n << "  " << r.statistic << (r.key.empty() ? "" : "[" + r.key + "]") << " = "
         << r.value << '\n';
    return os.str();
  }
};

inline std::uint64_t replication_seed(std::uint64_t master, std::size_t n, std::size_t r) {
  return derive_seed(derive_seed(master, n), r);
}

namespace detail {

inline constexpr std::uint64_t kAuxStream = 0xA0A0A0A0ULL;
inline constexpr std::uint64_t kVarphiStream = 0xB1B1B1B1ULL;
inline constexpr std::uint64_t kGridStream = 0xC2C2C2C2ULL;

/// Location t with E psi(e - t) = 0 on the sample, found by bisection.
inline double psi_root(const EmpiricalVarphi& phi) {
  const auto s = phi.sorted_sample();
  double lo = s.front() - 1.0, hi = s.back() + 1.0;  // phi(-lo) >= 0 >= phi(-hi)
  for (int i = 0; i < 200 && hi - lo > 1e-14 * (1.0 + std::abs(lo) + std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (phi(-mid) > 0.0) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct ErrorSource {
  const ErrorModel* model = nullptr;
  SimulationOptions sim;
  double shift = 0.0;

  std::vector<double> draw(std::size_t n, std::uint64_t seed) const {
    auto e = simulate_path(*model, n, seed, sim);
    if (shift != 0.0)
      for (auto& v : e) v -= shift;
    return e;
  }
};

/// Reference error sample for phi' and the centering; also fixes the location shift.
inline std::pair<ErrorSource, std::vector<double>> reference_sample(const ExperimentConfig& cfg,
                                                                   ExperimentReport& rep) {
  ErrorSource src{&cfg.error.model, cfg.simulation, 0.0};
  auto sample = simulate_path(cfg.error.model, cfg.varphi_sample, derive_seed(cfg.seed, kVarphiStream), cfg.simulation);
  if (cfg.center_errors) {
    src.shift = psi_root(EmpiricalVarphi(cfg.loss, sample));
    for (auto& v : sample) v -= src.shift;
    rep.notes.push_back("errors shifted by " + std::to_string(src.shift) + " so that E psi(e) = 0");
  }
  return {src, std::move(sample)};
}

template <class Fn>
std::vector<ReplicationRecord> replicate(const ExperimentConfig& cfg, std::size_t n, Fn&& body) {
  std::vector<ReplicationRecord> recs(cfg.replications);
  parallel_for(cfg.replications, cfg.threads, [&](std::size_t i) {
    auto& rec = recs[i];
    rec.n = n;
    rec.replication = cfg.first_replication + i;
    try {
      rec.values = body(replication_seed(cfg.seed, n, rec.replication));
      rec.ok = true;
      for (double v : rec.values)
        if (!std::isfinite(v)) {
          rec.ok = false;
          rec.error = "non-finite statistic";
        }
    } catch (const std::exception& ex) {
      rec.ok = false;
      rec.error = ex.what();
    }
  });
  return recs;
}

/// Appends the records and marks the report invalid when more than 1% failed at this n.
inline std::vector<const ReplicationRecord*> book(ExperimentReport& rep, std::vector<ReplicationRecord> recs,
                                                  std::size_t n) {
  std::size_t failed = 0;
  std::string first_error;
  for (const auto& r : recs)
    if (!r.ok) {
      ++failed;
      if (first_error.empty()) first_error = r.error;
    }
  rep.attempted += recs.size();
  rep.failures += failed;
  rep.add(n, "failures", "", static_cast<double>(failed));
  if (static_cast<double>(failed) > kMaxFailureFraction * static_cast<double>(recs.size())) {
    rep.valid = false;
    rep.notes.push_back("n=" + std::to_string(n) + ": " + std::to_string(failed) +
                        " failed replications (first: " + first_error + ")");
  }
  const std::size_t offset = rep.records.size();
  for (auto& r : recs) rep.records.push_back(std::move(r));
  std::vector<const ReplicationRecord*> ok;
  for (std::size_t i = offset; i < rep.records.size(); ++i)
    if (rep.records[i].ok) ok.push_back(&rep.records[i]);
  return ok;
}

inline void add_quantiles(ExperimentReport& rep, std::size_t n, const std::string& stat, std::vector<double> v) {
  if (v.empty()) return;
  std::sort(v.begin(), v.end());
  rep.add(n, stat, "0.25", stats::quantile_sorted(v, 0.25));
  rep.add(n, stat, "0.5", stats::quantile_sorted(v, 0.5));
  rep.add(n, stat, "0.75", stats::quantile_sorted(v, 0.75));
  rep.add(n, stat + "_mean", "", stats::mean(v));
}

inline Matrix symmetric_power(const Matrix& a, double power) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const Vector ev = eig.eigenvalues();
  if (ev.minCoeff() <= 0.0) throw NumericError("covariance matrix is not positive definite");
  return eig.eigenvectors() * ev.array().pow(power).matrix().asDiagonal() * eig.eigenvectors().transpose();
}

inline bool psi_is_linear(const LossSpec& loss) {
  if (std::holds_alternative<Square>(loss)) return true;
  if (const auto* q = std::get_if<PowerQ>(&loss)) return q->q == 2.0;
  return false;
}

/// Exponent lambda in the modulus bound m(t) = O(|t|^lambda).
inline double modulus_exponent(const LossSpec& loss) {
  if (const auto* q = std::get_if<PowerQ>(&loss)) return std::min(2.0, 2.0 * q->q - 1.0) / 2.0;
  if (std::holds_alternative<Quantile>(loss)) return 0.5;
  return 1.0;
}

/// m-hat tabulated on a log grid of |t| for each sign, interpolated in log-log coordinates.
class ModulusTable {
 public:
  ModulusTable(const LossSpec& loss, std::span<const double> sample, double t_min, double t_max,
               std::size_t points = 48) {
    t_min = std::max(t_min, 1e-12);
    t_max = std::max(t_max, t_min);
    const double l0 = std::log(t_min), l1 = std::log(t_max);
    const std::size_t m = t_max > t_min ? points : 1;
    std::vector<double> grid;
    for (std::size_t i = 0; i < m; ++i) {
      log_t_.push_back(m == 1 ? l0 : l0 + (l1 - l0) * static_cast<double>(i) / static_cast<double>(m - 1));
      grid.push_back(std::exp(log_t_.back()));
    }
    pos_ = estimate_modulus_m(loss, sample, grid).m;
    for (auto& g : grid) g = -g;
    neg_ = estimate_modulus_m(loss, sample, grid).m;
  }

  double operator()(double t) const {
    if (t == 0.0) return 0.0;
    const auto& tab = t > 0.0 ? pos_ : neg_;
    const double lt = std::log(std::abs(t));
    if (log_t_.size() == 1 || lt <= log_t_.front()) return tab.front();
    if (lt >= log_t_.back()) return tab.back();
    const auto it = std::upper_bound(log_t_.begin(), log_t_.end(), lt);
    const auto j = static_cast<std::size_t>(it - log_t_.begin());
    const double w = (lt - log_t_[j - 1]) / (log_t_[j] - log_t_[j - 1]);
    const double a = tab[j - 1], b = tab[j];
    if (a > 0.0 && b > 0.0) return std::exp((1.0 - w) * std::log(a) + w * std::log(b));
    return (1.0 - w) * a + w * b;
  }

 private:
  std::vector<double> log_t_, pos_, neg_;
};

/// Points of the full factorial grid on [-delta, delta]^p that lie in the ball of radius delta.
inline std::vector<Vector> ball_grid(Eigen::Index p, double delta, std::size_t per_axis) {
  std::vector<Vector> out;
  std::vector<std::size_t> counter(static_cast<std::size_t>(p), 0);
  const auto g = static_cast<double>(per_axis - 1);
  for (;;) {
    Vector theta(p);
    for (Eigen::Index j = 0; j < p; ++j)
      theta(j) = -delta + 2.0 * delta * static_cast<double>(counter[static_cast<std::size_t>(j)]) / g;
    if (theta.norm() <= delta * (1.0 + 1e-12)) out.push_back(theta);
    std::size_t j = 0;
    while (j < counter.size() && ++counter[j] == per_axis) counter[j++] = 0;
    if (j == counter.size()) break;
  }
  return out;
}

inline constexpr std::size_t kCenteringBlocks = 20;

/**
 * Standard error of the centering term sum_i z_i [phi-hat(-z_i'theta) - phi-hat(0)],
 * from its spread across contiguous blocks of the reference sample, maximized over
 * the grid points of the ball.
 */
inline double centering_standard_error(const RescaledDesign& rd, double delta, std::size_t per_axis,
                                       const std::vector<EmpiricalVarphi>& blocks) {
  const auto g = static_cast<double>(blocks.size());
  double worst = 0.0;
  for (const Vector& theta : ball_grid(rd.p(), delta, per_axis)) {
    const Vector shift = rd.z * theta;
    Matrix values(rd.p(), static_cast<Eigen::Index>(blocks.size()));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const double base = blocks[b](0.0);
      Vector acc = Vector::Zero(rd.p());
      for (Eigen::Index i = 0; i < rd.n(); ++i) acc += (blocks[b](-shift(i)) - base) * rd.z.row(i).transpose();
      values.col(static_cast<Eigen::Index>(b)) = acc;
    }
    const Vector mean = values.rowwise().mean();
    const double ss = (values.colwise() - mean).squaredNorm();
    worst = std::max(worst, std::sqrt(ss / (g - 1.0) / g));
  }
  return worst;
}

inline void finish(ExperimentReport& rep, std::chrono::steady_clock::time_point start) {
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/**
 * CLT experiment with beta_0 = 0, so y = e. Each replication fits, builds the
 * plug-in confidence region (Delta-hat from residual psi values, phi'(0) from
 * the reference sample) and standardizes s = Delta^{-1/2} phi'(0) theta_hat
 * with an oracle Delta from one long auxiliary path.
 */
inline ExperimentReport run_clt(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::Clt) throw UsageError("run_clt: config kind is not clt");
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.kind = cfg.kind;
  rep.seed = cfg.seed;
  auto [src, ref] = detail::reference_sample(cfg, rep);
  const double slope = estimate_varphi_prime0(cfg.loss, ref);
  if (!(slope > 0.0)) throw NumericError("estimated phi'(0) is not positive");
  ref = {};

  const std::size_t n_aux = cfg.aux_factor * cfg.n_grid.back();
  const auto aux = src.draw(n_aux, derive_seed(cfg.seed, detail::kAuxStream));
  std::vector<double> aux_psi(aux.size());
  for (std::size_t i = 0; i < aux.size(); ++i) aux_psi[i] = psi_eval(cfg.loss, aux[i]);
  const auto aux_gamma = psi_autocovariances(aux_psi, default_bandwidth(n_aux));
  rep.add(0, "phi_prime0", "", slope);
  rep.add(0, "aux_length", "", static_cast<double>(n_aux));

  const Eigen::Index p = cfg.design.p;
  const double chi = stats::chi_squared_quantile(cfg.level, static_cast<double>(p));
  for (std::size_t n : cfg.n_grid) {
    const Design design = build_design(cfg.design, static_cast<Eigen::Index>(n));
    const RescaledDesign rd = rescale(design);
    const Matrix oracle = combine_delta(rd, aux_gamma, Kernel::Bartlett).delta;
    const Matrix oracle_inv_root = detail::symmetric_power(oracle, -0.5);
    SolverConfig solver;
    solver.keep_trace = false;

    // values: covered_0..p-1, s_0..p-1, ellipsoid_covered
    auto recs = detail::replicate(cfg, n, [&](std::uint64_t seed) {
      const auto e = src.draw(n, seed);
      const auto f = fit(design, rd, e, cfg.loss, solver);
      const Vector resid = Eigen::Map<const Vector>(e.data(), rd.n()) - design.x() * f.beta_hat;
      std::vector<double> psi(n);
      for (std::size_t i = 0; i < n; ++i) psi[i] = psi_eval(cfg.loss, resid(static_cast<Eigen::Index>(i)));
      const auto dh = estimate_delta(rd, psi, cfg.bandwidth, cfg.kernel);
      const auto cr = confidence_region(f, rd, dh, slope, cfg.level);
      std::vector<double> out;
      for (Eigen::Index j = 0; j < p; ++j) out.push_back(cr.lower(j) <= 0.0 && 0.0 <= cr.upper(j) ? 1.0 : 0.0);
      const Vector s = oracle_inv_root * (slope * f.theta_hat);
      for (Eigen::Index j = 0; j < p; ++j) out.push_back(s(j));
      const Vector scaled = slope * f.theta_hat;
      const double quad = scaled.dot(dh.delta.completeOrthogonalDecomposition().pseudoInverse() * scaled);
      out.push_back(quad <= chi ? 1.0 : 0.0);
      return out;
    });
    const auto ok = detail::book(rep, std::move(recs), n);
    if (ok.empty()) continue;
    const auto up = static_cast<std::size_t>(p);
    const double r = static_cast<double>(ok.size());
    double pooled = 0.0;
    Matrix s(static_cast<Eigen::Index>(ok.size()), p);
    for (std::size_t j = 0; j < up; ++j) {
      double c = 0.0;
      for (std::size_t i = 0; i < ok.size(); ++i) {
        c += ok[i]->values[j];
        s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ok[i]->values[up + j];
      }
      pooled += c;
      rep.add(n, "coverage", std::to_string(j), c / r);
    }
    rep.add(n, "coverage_pooled", "", pooled / (r * static_cast<double>(p)));
    double ell = 0.0;
    for (const auto* rec : ok) ell += rec->values[2 * up];
    rep.add(n, "ellipsoid_coverage", "", ell / r);
    const Vector mean = s.colwise().mean();
    const Matrix centered = s.rowwise() - mean.transpose();
    const Matrix cov = centered.transpose() * centered / std::max(1.0, r - 1.0);
    for (Eigen::Index j = 0; j < p; ++j) {
      std::vector<double> col(s.col(j).data(), s.col(j).data() + s.rows());
      rep.add(n, "ks", std::to_string(j), stats::ks_statistic_normal(col));
      rep.add(n, "mean_s", std::to_string(j), mean(j));
    }
    for (Eigen::Index a = 0; a < p; ++a)
      for (Eigen::Index b = 0; b < p; ++b) {
        const std::string key = std::to_string(a) + "_" + std::to_string(b);
        rep.add(n, "cov_s", key, cov(a, b));
        rep.add(n, "oracle_delta", key, oracle(a, b));
      }
    rep.add(n, "ks_threshold", "", 2.0 * 1.63 / std::sqrt(r));
  }
  detail::finish(rep, start);
  return rep;
}

/// Bahadur remainder |phi'(0) theta_hat - T_n| across the n grid, with the log-log slope of its median.
inline ExperimentReport run_bahadur(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::Bahadur) throw UsageError("run_bahadur: config kind is not bahadur");
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.kind = cfg.kind;
  rep.seed = cfg.seed;
  auto [src, ref] = detail::reference_sample(cfg, rep);
  const double slope = estimate_varphi_prime0(cfg.loss, ref);
  if (!(slope > 0.0)) throw NumericError("estimated phi'(0) is not positive");
  ref = {};
  rep.add(0, "phi_prime0", "", slope);
  const double lambda = detail::modulus_exponent(cfg.loss);
  const std::vector<double> qs = {2.0 + 2.0 * lambda};

  std::vector<double> log_n, log_med;
  for (std::size_t n : cfg.n_grid) {
    const Design design = build_design(cfg.design, static_cast<Eigen::Index>(n));
    const RescaledDesign rd = rescale(design, qs);
    SolverConfig solver;
    solver.keep_trace = false;
    auto recs = detail::replicate(cfg, n, [&](std::uint64_t seed) {
      const auto e = src.draw(n, seed);
      const auto f = fit(design, rd, e, cfg.loss, solver);
      return std::vector<double>{bahadur_remainder(f, rd, e, cfg.loss, slope).remainder_norm};
    });
    const auto ok = detail::book(rep, std::move(recs), n);
    if (ok.empty()) continue;
    std::vector<double> norms;
    for (const auto* r : ok) norms.push_back(r->values[0]);
    detail::add_quantiles(rep, n, "remainder", norms);
    const double med = rep.value(n, "remainder", "0.5");
    const double nn = static_cast<double>(n);
    rep.add(n, "rate_bound", "", std::sqrt(rd.summary.zeta.at(qs[0]) * std::log(nn)) + rd.summary.r_n);
    log_n.push_back(std::log(nn));
    log_med.push_back(std::log(std::max(med, 1e-300)));
  }
  if (log_n.size() >= 2) {
    rep.add(0, "log_log_slope", "", stats::fit_line(log_n, log_med).slope);
    bool decreasing = true;
    for (std::size_t i = 1; i < log_med.size(); ++i) decreasing = decreasing && log_med[i] < log_med[i - 1];
    rep.add(0, "medians_decreasing", "", decreasing ? 1.0 : 0.0);
  }
  detail::finish(rep, start);
  return rep;
}

/// Coupling profiles, decay fits and summability verdicts for each configured model.
inline ExperimentReport run_dependence(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::Dependence) throw UsageError("run_dependence: config kind is not dependence");
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.kind = cfg.kind;
  rep.seed = cfg.seed;
  std::vector<NamedModel> models{cfg.error};
  models.insert(models.end(), cfg.extra_models.begin(), cfg.extra_models.end());
  DependenceOptions opts;
  opts.simulation = cfg.simulation;
  opts.threads = cfg.threads;
  for (std::size_t m = 0; m < models.size(); ++m) {
    DependenceEntry entry;
    entry.label = models[m].label;
    entry.profile = measure_dependence(models[m].model, cfg.loss, cfg.max_lag, cfg.replications,
                                       derive_seed(cfg.seed, m), opts);
    rep.attempted += cfg.replications;
    const auto& prof = entry.profile;
    const std::string& l = entry.label;
    for (std::size_t i = 0; i < prof.lags.size(); ++i) {
      const std::string k = std::to_string(prof.lags[i]);
      rep.add(0, l + ":d_psi", k, prof.d_psi[i]);
      rep.add(0, l + ":d_raw", k, prof.d_raw[i]);
      rep.add(0, l + ":stderr", k, prof.stderr_psi[i]);
    }
    try {
      entry.geometric = fit_decay(prof, DecayKind::Geometric);
      entry.polynomial = fit_decay(prof, DecayKind::Polynomial);
      rep.add(0, l + ":geometric_rate", "", entry.geometric->rate);
      rep.add(0, l + ":geometric_r2", "", entry.geometric->r_squared);
      rep.add(0, l + ":polynomial_exponent", "", entry.polynomial->exponent);
      rep.add(0, l + ":polynomial_r2", "", entry.polynomial->r_squared);
    } catch (const DiagnosticError& ex) {
      entry.fit_error = ex.what();
      rep.notes.push_back(l + ": " + entry.fit_error);
    }
    entry.srd = srd_diagnostic(prof);
    rep.add(0, l + ":verdict", to_string(entry.srd.verdict), 1.0);
    rep.add(0, l + ":partial_sum", "", entry.srd.partial_sums.back());
    rep.dependence.push_back(std::move(entry));
  }
  detail::finish(rep, start);
  return rep;
}

/**
 * Oscillation sup |K_n(theta) - K_n(0)| over the ball of radius delta_n,
 * compared with sqrt(tau_n(delta_n) log n) + delta_n sqrt(zeta_n(4)), where
 * tau_n uses m-hat from the reference sample. The experiment is invalid when
 * the Monte-Carlo standard error of the centering exceeds 10% of the median
 * statistic.
 */
inline ExperimentReport run_oscillation(const ExperimentConfig& cfg) {
  if (cfg.kind != ExperimentKind::Oscillation) throw UsageError("run_oscillation: config kind is not oscillation");
  cfg.validate();

  std::vector<Design> designs;
  std::vector<RescaledDesign> rds;
  std::vector<double> deltas;
  double prev_product = INFINITY;
  for (std::size_t n : cfg.n_grid) {
    designs.push_back(build_design(cfg.design, static_cast<Eigen::Index>(n)));
    rds.push_back(rescale(designs.back()));
    const double r_n = rds.back().summary.r_n;
    const double d = cfg.delta_rule(n, r_n);
    const double product = d * r_n;
    if (!(d > 0.0) || !(product < 1.0) || !(product < prev_product))
      throw UsageError("delta_n rule violates delta_n r_n -> 0 on the n grid (n=" + std::to_string(n) +
                       ", delta_n r_n=" + std::to_string(product) + ")");
    prev_product = product;
    deltas.push_back(d);
  }

  const auto start = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.kind = cfg.kind;
  rep.seed = cfg.seed;
  auto [src, ref] = detail::reference_sample(cfg, rep);
  const EmpiricalVarphi centering(cfg.loss, ref);

  std::vector<EmpiricalVarphi> blocks;
  const std::size_t block_len = ref.size() / detail::kCenteringBlocks;
  for (std::size_t b = 0; b < detail::kCenteringBlocks; ++b)
    blocks.emplace_back(cfg.loss, std::span<const double>(ref.data() + b * block_len, block_len));
  const std::span<const double> m_sample(ref.data(), std::min<std::size_t>(ref.size(), 200000));
  const bool linear = detail::psi_is_linear(cfg.loss);

  std::vector<double> ratios, log_bound, log_med;
  for (std::size_t gi = 0; gi < cfg.n_grid.size(); ++gi) {
    const std::size_t n = cfg.n_grid[gi];
    const auto& rd = rds[gi];
    const double delta = deltas[gi];
    const Vector znorm = rd.z.rowwise().norm();
    const detail::ModulusTable mt(cfg.loss, m_sample, znorm.minCoeff() * delta, znorm.maxCoeff() * delta);
    double tau = 0.0;
    for (Eigen::Index i = 0; i < rd.n(); ++i) {
      const double t = znorm(i) * delta;
      const double mp = mt(t), mn = mt(-t);
      tau += znorm(i) * znorm(i) * (mp * mp + mn * mn);
    }
    const double centering_error = linear ? 0.0 : detail::centering_standard_error(rd, delta, cfg.grid_per_axis, blocks);
    const double nn = static_cast<double>(n);
    const double bound = std::sqrt(tau * std::log(nn)) + delta * std::sqrt(rd.summary.zeta.at(4.0));

    auto recs = detail::replicate(cfg, n, [&](std::uint64_t seed) {
      const auto e = src.draw(n, seed);
      const auto osc = m_process_oscillation(rd, e, cfg.loss, delta, cfg.grid_per_axis,
                                             derive_seed(seed, detail::kGridStream), centering);
      return std::vector<double>{osc.max_norm};
    });
    const auto ok = detail::book(rep, std::move(recs), n);
    rep.add(n, "delta_n", "", delta);
    rep.add(n, "delta_n_r_n", "", delta * rd.summary.r_n);
    rep.add(n, "tau_hat", "", tau);
    rep.add(n, "bound", "", bound);
    rep.add(n, "centering_mc_error", "", centering_error);
    if (ok.empty()) continue;
    std::vector<double> v;
    for (const auto* r : ok) v.push_back(r->values[0]);
    detail::add_quantiles(rep, n, "oscillation", v);
    const double med = rep.value(n, "oscillation", "0.5");
    rep.add(n, "ratio", "", med / bound);
    ratios.push_back(med / bound);
    if (!linear && centering_error > 0.1 * med) {
      rep.valid = false;
      rep.notes.push_back("n=" + std::to_string(n) + ": centering Monte-Carlo error " +
                          std::to_string(centering_error) + " exceeds 10% of the median statistic " +
                          std::to_string(med) + "; increase varphi_sample");
    }
    if (med > 0.0) {
      log_bound.push_back(std::log(bound));
      log_med.push_back(std::log(med));
    }
  }
  if (!ratios.empty() && !linear) {
    const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
    rep.add(0, "ratio_band", "", *lo > 0.0 ? *hi / *lo : INFINITY);
  }
  if (log_bound.size() >= 2) rep.add(0, "log_log_slope", "", stats::fit_line(log_bound, log_med).slope);
  detail::finish(rep, start);
  return rep;
}

inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::Clt: return run_clt(cfg);
    case ExperimentKind::Bahadur: return run_bahadur(cfg);
    case ExperimentKind::Dependence: return run_dependence(cfg);
    default: return run_oscillation(cfg);
  }
}

}  // namespace mest

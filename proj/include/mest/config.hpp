#pragma once

/**
 * \file config.hpp
 * Flat key=value run configuration with strict key checking, plus parsers for
 * the short spec strings used on the command line:
 *
 *   model   iid | geometric:rho | polynomial:mu[,J] | explicit:a0,a1,... |
 *           ma1:theta | arch:a,b | tar:alpha1,alpha2
 *   innov   gaussian[:mean,sd] | t:dof | stable:index | uniform:a,b
 *   loss    huber[:c] | powerq:q | quantile:alpha | square
 *   design  polynomial:p | random:p[,lo,hi]
 *   delta   log[:c] | power:a[,c]
 */

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mest/error.hpp"
#include "mest/inference.hpp"
#include "mest/loss.hpp"
#include "mest/mc.hpp"
#include "mest/process.hpp"

namespace mest::config {

inline constexpr const char* kOutputDirEnv = "MEST_OUTPUT_DIR";

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view text, std::string_view what) {
  const std::string s = trim(text);
  double v = 0.0;
  const char* b = s.data();
  if (!s.empty() && s.front() == '+') ++b;
  const auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw UsageError(std::string(what) + ": '" + s + "' is not a finite number");
  return v;
}

inline std::uint64_t parse_uint(std::string_view text, std::string_view what) {
  const std::string s = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw UsageError(std::string(what) + ": '" + s + "' is not a non-negative integer");
  return v;
}

inline bool parse_bool(std::string_view text, std::string_view what) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError(std::string(what) + ": '" + s + "' is not a boolean");
}

namespace detail {

struct SpecParts {
  std::string name;
  std::vector<double> args;
};

inline SpecParts spec_parts(std::string_view text, std::string_view what) {
  const std::string s = trim(text);
  const auto colon = s.find(':');
  SpecParts out;
  out.name = s.substr(0, colon);
  std::transform(out.name.begin(), out.name.end(), out.name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (colon != std::string::npos)
    for (const auto& a : split(std::string_view(s).substr(colon + 1), ','))
      out.args.push_back(parse_double(a, what));
  if (out.name.empty()) throw UsageError(std::string(what) + ": empty spec");
  return out;
}

inline void arity(const SpecParts& p, std::size_t lo, std::size_t hi, std::string_view what) {
  if (p.args.size() < lo || p.args.size() > hi)
    throw UsageError(std::string(what) + " '" + p.name + "' takes " + std::to_string(lo) +
                     (hi > lo ? "-" + std::to_string(hi) : "") + " parameter(s)");
}

}  // namespace detail

inline InnovationDist parse_innov(std::string_view text) {
  const auto p = detail::spec_parts(text, "innov");
  InnovationDist d;
  if (p.name == "gaussian" || p.name == "normal") {
    detail::arity(p, 0, 2, "innov");
    if (p.args.size() == 1) throw UsageError("innov gaussian takes mean,sd");
    d = p.args.empty() ? Gaussian{} : Gaussian{p.args[0], p.args[1]};
  } else if (p.name == "t" || p.name == "student") {
    detail::arity(p, 1, 1, "innov");
    d = StudentT{p.args[0]};
  } else if (p.name == "stable" || p.name == "sas") {
    detail::arity(p, 1, 1, "innov");
    d = StableSAS{p.args[0]};
  } else if (p.name == "uniform") {
    detail::arity(p, 2, 2, "innov");
    d = UniformInnov{p.args[0], p.args[1]};
  } else {
    throw UsageError("unknown innovation distribution '" + p.name + "'");
  }
  validate(d);
  return d;
}

/// Builds the model; `check_stability` runs the ARCH contraction check.
inline ErrorModel parse_model(std::string_view text, const InnovationDist& innov, bool check_stability = true) {
  const auto p = detail::spec_parts(text, "model");
  ErrorModel m;
  if (p.name == "iid" || p.name == "white") {
    detail::arity(p, 0, 0, "model");
    m = LinearProcess{ExplicitCoeffs{{1.0}}, innov};
  } else if (p.name == "geometric" || p.name == "ar1") {
    detail::arity(p, 1, 1, "model");
    m = LinearProcess{GeometricCoeffs{p.args[0]}, innov};
  } else if (p.name == "polynomial") {
    detail::arity(p, 1, 2, "model");
    PolynomialCoeffs c{p.args[0]};
    if (p.args.size() == 2) {
      if (p.args[1] < 0.0 || p.args[1] != std::floor(p.args[1])) throw UsageError("model polynomial: J must be a count");
      c.max_lag = static_cast<std::size_t>(p.args[1]);
    }
    m = LinearProcess{c, innov};
  } else if (p.name == "explicit") {
    if (p.args.empty()) throw UsageError("model explicit needs coefficients");
    m = LinearProcess{ExplicitCoeffs{p.args}, innov};
  } else if (p.name == "ma1") {
    detail::arity(p, 1, 1, "model");
    m = LinearProcess{ExplicitCoeffs{{1.0, p.args[0]}}, innov};
  } else if (p.name == "arch") {
    detail::arity(p, 2, 2, "model");
    m = Arch{p.args[0], p.args[1], innov};
  } else if (p.name == "tar") {
    detail::arity(p, 2, 2, "model");
    m = ThresholdAR{p.args[0], p.args[1], innov};
  } else {
    throw UsageError("unknown error model '" + p.name + "'");
  }
  validate(m, check_stability);
  return m;
}

inline LossSpec parse_loss(std::string_view text) {
  const auto p = detail::spec_parts(text, "loss");
  LossSpec l;
  if (p.name == "huber") {
    detail::arity(p, 0, 1, "loss");
    l = Huber{p.args.empty() ? 1.345 : p.args[0]};
  } else if (p.name == "powerq" || p.name == "lq") {
    detail::arity(p, 1, 1, "loss");
    l = PowerQ{p.args[0]};
  } else if (p.name == "quantile") {
    detail::arity(p, 0, 1, "loss");
    l = Quantile{p.args.empty() ? 0.5 : p.args[0]};
  } else if (p.name == "square" || p.name == "ls") {
    detail::arity(p, 0, 0, "loss");
    l = Square{};
  } else {
    throw UsageError("unknown loss '" + p.name + "'");
  }
  validate(l);
  return l;
}

inline DesignSpec parse_design(std::string_view text, std::uint64_t seed) {
  const auto p = detail::spec_parts(text, "design");
  DesignSpec d;
  d.seed = seed;
  auto dim = [&](double v) {
    if (v < 1.0 || v != std::floor(v)) throw UsageError("design: p must be a positive integer");
    return static_cast<Eigen::Index>(v);
  };
  if (p.name == "polynomial") {
    detail::arity(p, 1, 1, "design");
    d.kind = DesignKind::Polynomial;
    d.p = dim(p.args[0]);
  } else if (p.name == "random") {
    if (p.args.size() != 1 && p.args.size() != 3) throw UsageError("design random takes p or p,lo,hi");
    d.kind = DesignKind::Random;
    d.p = dim(p.args[0]);
    if (p.args.size() == 3) {
      if (!(p.args[1] < p.args[2])) throw UsageError("design random: need lo < hi");
      d.dist = {p.args[1], p.args[2]};
    }
  } else {
    throw UsageError("unknown design '" + p.name + "'");
  }
  return d;
}

inline Kernel parse_kernel(std::string_view text) {
  const std::string s = trim(text);
  if (s == "bartlett") return Kernel::Bartlett;
  if (s == "truncated") return Kernel::Truncated;
  throw UsageError("unknown kernel '" + s + "' (bartlett or truncated)");
}

inline DeltaRule parse_delta_rule(std::string_view text) {
  const auto p = detail::spec_parts(text, "delta_rule");
  DeltaRule r;
  if (p.name == "log") {
    detail::arity(p, 0, 1, "delta_rule");
    r.kind = DeltaRule::Kind::LogCapped;
    if (!p.args.empty()) r.c = p.args[0];
  } else if (p.name == "power") {
    detail::arity(p, 1, 2, "delta_rule");
    r.kind = DeltaRule::Kind::Power;
    r.power = p.args[0];
    if (p.args.size() == 2) r.c = p.args[1];
  } else {
    throw UsageError("unknown delta_rule '" + p.name + "'");
  }
  if (!(r.c > 0.0)) throw UsageError("delta_rule: constant must be positive");
  return r;
}

inline ExperimentKind parse_experiment(std::string_view text) {
  const std::string s = trim(text);
  if (s == "clt") return ExperimentKind::Clt;
  if (s == "bahadur") return ExperimentKind::Bahadur;
  if (s == "dependence") return ExperimentKind::Dependence;
  if (s == "oscillation") return ExperimentKind::Oscillation;
  throw UsageError("unknown experiment '" + s + "'");
}

inline std::vector<std::size_t> parse_grid(std::string_view text) {
  std::vector<std::size_t> out;
  for (const auto& part : split(text, ',')) out.push_back(parse_uint(part, "n"));
  return out;
}

/// Strict flat configuration: every key must belong to the subcommand's schema.
struct KeySpec {
  std::string name;
  std::string default_value;
  std::string help;
};

using Values = std::map<std::string, std::string>;

inline Values parse_text(const std::string& text) {
  Values v;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
    if (!v.emplace(key, trim(std::string_view(t).substr(eq + 1))).second)
      throw UsageError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return v;
}

inline std::string to_text(const Values& v, const std::string& title) {
  std::string out = "# " + title + "\n";
  for (const auto& [k, val] : v) out += k + "=" + val + "\n";
  return out;
}

inline std::string default_output_dir() {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? std::string(env) : std::string(".");
}

inline std::vector<KeySpec> schema(std::string_view subcommand) {
  std::vector<KeySpec> common = {
      {"seed", "1", "master random seed"},
      {"threads", "0", "worker threads (0 = all cores)"},
      {"out_dir", default_output_dir(), "output directory (default from $MEST_OUTPUT_DIR)"},
      {"output", "", "primary output file (empty = default location)"},
      {"header", "false", "CSV files carry a single header line"},
  };
  auto with = [&](std::vector<KeySpec> extra) {
    extra.insert(extra.end(), common.begin(), common.end());
    return extra;
  };
  const std::vector<KeySpec> solver = {
      {"max_iter", "2000", "solver iteration budget"},
      {"grad_tol", "1e-8", "relative gradient tolerance"},
      {"obj_tol", "1e-12", "relative objective tolerance"},
  };
  auto cat = [](std::vector<KeySpec> a, const std::vector<KeySpec>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  if (subcommand == "simulate")
    return with({{"model", "iid", "error model"},
                 {"innov", "gaussian", "innovation distribution"},
                 {"n", "1000", "path length"},
                 {"burn_in", "1000", "burn-in for recursive models"}});
  if (subcommand == "fit")
    return with(cat({{"x", "", "design matrix CSV"},
                     {"y", "", "response CSV"},
                     {"loss", "huber:1.345", "loss function"}},
                    solver));
  if (subcommand == "infer")
    return with(cat({{"x", "", "design matrix CSV"},
                     {"y", "", "response CSV"},
                     {"loss", "huber:1.345", "loss function"},
                     {"level", "0.95", "confidence level"},
                     {"bandwidth", "auto", "lag-window bandwidth (auto = ceil(n^(1/3)))"},
                     {"kernel", "bartlett", "lag-window kernel"},
                     {"varphi_prime0", "auto", "phi'(0) (auto = estimate from residuals)"}},
                    solver));
  if (subcommand == "dep-measure")
    return with({{"model", "geometric:0.5", "error model"},
                 {"innov", "gaussian", "innovation distribution"},
                 {"loss", "huber:1.345", "loss function"},
                 {"max_lag", "20", "largest lag K"},
                 {"nrep", "1000", "coupled replications"},
                 {"burn_in", "1000", "burn-in for recursive models"}});
  if (subcommand == "mc")
    return with({{"experiment", "clt", "clt | bahadur | dependence | oscillation"},
                 {"design", "random:2", "design builder"},
                 {"design_seed", "1", "seed of the random design"},
                 {"n", "500", "comma-separated n grid"},
                 {"model", "iid", "error model"},
                 {"extra_models", "", "further models for dependence runs, separated by ';'"},
                 {"innov", "gaussian", "innovation distribution"},
                 {"loss", "huber:1.345", "loss function"},
                 {"replications", "100", "replications per n"},
                 {"bandwidth", "auto", "lag-window bandwidth"},
                 {"kernel", "bartlett", "lag-window kernel"},
                 {"level", "0.95", "confidence level"},
                 {"center_errors", "false", "shift errors so that E psi(e) = 0"},
                 {"aux_factor", "20", "oracle path length as a multiple of max n"},
                 {"varphi_sample", "1000000", "reference sample size for phi'(0) and centering"},
                 {"delta_rule", "log:1", "oscillation radius rule"},
                 {"grid_per_axis", "5", "oscillation grid points per axis"},
                 {"max_lag", "20", "largest lag for dependence runs"},
                 {"burn_in", "1000", "burn-in for recursive models"}});
  throw UsageError("unknown subcommand '" + std::string(subcommand) + "'");
}

/// Defaults, then the file, then flags. Unknown keys anywhere are rejected.
inline Values resolve(std::string_view subcommand, const Values& file, const Values& flags) {
  const auto keys = schema(subcommand);
  Values out;
  for (const auto& k : keys) out[k.name] = k.default_value;
  for (const Values* layer : {&file, &flags})
    for (const auto& [k, v] : *layer) {
      if (!out.contains(k)) throw UsageError("unknown key '" + k + "' for subcommand " + std::string(subcommand));
      out[k] = v;
    }
  return out;
}

inline std::optional<std::size_t> parse_bandwidth(const std::string& v) {
  if (v == "auto") return std::nullopt;
  return static_cast<std::size_t>(parse_uint(v, "bandwidth"));
}

inline SolverConfig solver_config(const Values& v) {
  SolverConfig c;
  c.max_iter = parse_uint(v.at("max_iter"), "max_iter");
  c.grad_tol = parse_double(v.at("grad_tol"), "grad_tol");
  c.obj_tol = parse_double(v.at("obj_tol"), "obj_tol");
  c.keep_trace = false;
  c.validate();
  return c;
}

inline SimulationOptions simulation_options(const Values& v) {
  SimulationOptions s;
  s.burn_in = parse_uint(v.at("burn_in"), "burn_in");
  return s;
}

inline unsigned threads(const Values& v) {
  const auto t = parse_uint(v.at("threads"), "threads");
  if (t > 4096) throw UsageError("threads: at most 4096");
  return static_cast<unsigned>(t);
}

inline ExperimentConfig experiment_config(const Values& v) {
  ExperimentConfig c;
  c.kind = parse_experiment(v.at("experiment"));
  const auto seed = parse_uint(v.at("seed"), "seed");
  c.design = parse_design(v.at("design"), parse_uint(v.at("design_seed"), "design_seed"));
  c.n_grid = parse_grid(v.at("n"));
  const auto innov = parse_innov(v.at("innov"));
  c.error = {v.at("model"), parse_model(v.at("model"), innov)};
  if (!v.at("extra_models").empty())
    for (const auto& m : split(v.at("extra_models"), ';'))
      if (!m.empty()) c.extra_models.push_back({m, parse_model(m, innov)});
  c.loss = parse_loss(v.at("loss"));
  c.replications = parse_uint(v.at("replications"), "replications");
  c.seed = seed;
  c.threads = threads(v);
  c.bandwidth = parse_bandwidth(v.at("bandwidth"));
  c.kernel = parse_kernel(v.at("kernel"));
  c.level = parse_double(v.at("level"), "level");
  c.center_errors = parse_bool(v.at("center_errors"), "center_errors");
  c.aux_factor = parse_uint(v.at("aux_factor"), "aux_factor");
  c.varphi_sample = parse_uint(v.at("varphi_sample"), "varphi_sample");
  c.delta_rule = parse_delta_rule(v.at("delta_rule"));
  c.grid_per_axis = parse_uint(v.at("grid_per_axis"), "grid_per_axis");
  c.max_lag = parse_uint(v.at("max_lag"), "max_lag");
  c.simulation = simulation_options(v);
  c.validate();
  return c;
}

}  // namespace mest::config

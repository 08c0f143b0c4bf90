// mest: simulate dependent errors, fit M-estimators, build confidence regions,
// measure dependence and run Monte-Carlo experiments.
//
// Exit status: 0 success, 2 usage or configuration error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "mest/config.hpp"
#include "mest/csv.hpp"
#include "mest/dependence.hpp"
#include "mest/estimator.hpp"
#include "mest/inference.hpp"
#include "mest/mc.hpp"
#include "mest/process.hpp"

namespace {

using mest::config::Values;
namespace fs = std::filesystem;

constexpr int kUsageExit = 2;
constexpr int kNumericExit = 3;

struct Subcommand {
  std::string name;
  CLI::App* app = nullptr;
  std::string config_file;
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> options;

  Values flags() const {
    Values v;
    for (const auto& [k, opt] : options)
      if (opt->count() > 0) v[k] = flag_values.at(k);
    return v;
  }

  Values resolve() const {
    const Values file = config_file.empty() ? Values{}
                                            : mest::config::parse_text(mest::csv::read_file(config_file));
    return mest::config::resolve(name, file, flags());
  }
};

void register_keys(Subcommand& sc) {
  sc.app->add_option("--config", sc.config_file, "key=value configuration file")->check(CLI::ExistingFile);
  for (const auto& key : mest::config::schema(sc.name)) {
    std::string names = "--" + key.name;
    std::string dashed = key.name;
    std::replace(dashed.begin(), dashed.end(), '_', '-');
    if (dashed != key.name) names += ",--" + dashed;
    std::string help = key.help;
    if (!key.default_value.empty()) help += " [" + key.default_value + "]";
    sc.options[key.name] = sc.app->add_option(names, sc.flag_values[key.name], help);
  }
}

fs::path out_dir(const Values& v) {
  fs::path dir = v.at("out_dir");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw mest::UsageError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

fs::path primary_output(const Values& v, const std::string& fallback) {
  const auto& o = v.at("output");
  return o.empty() ? out_dir(v) / fallback : fs::path(o);
}

void echo_config(const std::string& name, const Values& v) {
  mest::csv::write_file((out_dir(v) / (name + ".conf")).string(),
                        mest::config::to_text(v, "mest " + name + " resolved configuration"));
}

bool header(const Values& v) { return mest::config::parse_bool(v.at("header"), "header"); }

std::vector<double> read_response(const Values& v) {
  if (v.at("y").empty()) throw mest::UsageError("missing --y (response CSV)");
  return mest::csv::to_vector(mest::csv::read(v.at("y"), header(v)));
}

mest::Design read_design(const Values& v) {
  if (v.at("x").empty()) throw mest::UsageError("missing --x (design CSV)");
  return mest::Design(mest::csv::to_matrix(mest::csv::read(v.at("x"), header(v))));
}

int run_simulate(const Values& v) {
  const auto innov = mest::config::parse_innov(v.at("innov"));
  const auto model = mest::config::parse_model(v.at("model"), innov);
  const auto n = mest::config::parse_uint(v.at("n"), "n");
  const auto path = mest::simulate_path(model, n, mest::config::parse_uint(v.at("seed"), "seed"),
                                        mest::config::simulation_options(v));
  const std::string text = mest::csv::column(path, header(v) ? "e" : "");
  echo_config("simulate", v);
  if (v.at("output").empty()) std::cout << text;
  else mest::csv::write_file(v.at("output"), text);
  return 0;
}

int run_fit(const Values& v) {
  const auto design = read_design(v);
  const auto y = read_response(v);
  if (static_cast<Eigen::Index>(y.size()) != design.n()) throw mest::UsageError("x and y have different lengths");
  const auto loss = mest::config::parse_loss(v.at("loss"));
  const auto res = mest::fit(design, y, loss, mest::config::solver_config(v));
  echo_config("fit", v);
  mest::csv::write_file(primary_output(v, "fit.csv").string(), res.csv_header() + res.csv_row());
  std::cout << "loss=" << mest::to_string(loss) << '\n' << res.to_text();
  if (!res.converged) std::cerr << "warning: solver stopped before convergence\n";
  return 0;
}

int run_infer(const Values& v) {
  const auto design = read_design(v);
  const auto y = read_response(v);
  const auto loss = mest::config::parse_loss(v.at("loss"));
  if (static_cast<Eigen::Index>(y.size()) != design.n()) throw mest::UsageError("x and y have different lengths");
  const auto rd = mest::rescale(design);
  const auto res = mest::fit(design, rd, y, loss, mest::config::solver_config(v));

  const mest::Vector fitted = design.x() * res.beta_hat;
  std::vector<double> resid(y.size()), psi(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    resid[i] = y[i] - fitted(static_cast<Eigen::Index>(i));
    psi[i] = mest::psi_eval(loss, resid[i]);
  }
  const auto delta = mest::estimate_delta(rd, psi, mest::config::parse_bandwidth(v.at("bandwidth")),
                                          mest::config::parse_kernel(v.at("kernel")));
  const double slope = v.at("varphi_prime0") == "auto"
                           ? mest::estimate_varphi_prime0(loss, resid)
                           : mest::config::parse_double(v.at("varphi_prime0"), "varphi_prime0");
  if (!(slope > 0.0)) throw mest::NumericError("phi'(0) estimate is not positive");
  const auto cr = mest::confidence_region(res, rd, delta, slope,
                                          mest::config::parse_double(v.at("level"), "level"));

  echo_config("infer", v);
  mest::csv::write_file(primary_output(v, "intervals.csv").string(), cr.to_csv());
  mest::csv::write_file((out_dir(v) / "delta.csv").string(), delta.to_csv());
  std::cout << "loss=" << mest::to_string(loss) << "  phi'(0)=" << slope << "  bandwidth=" << delta.bandwidth
            << '\n'
            << cr.to_table();
  if (!res.converged) std::cerr << "warning: solver stopped before convergence\n";
  return 0;
}

int run_dep(const Values& v) {
  const auto innov = mest::config::parse_innov(v.at("innov"));
  const auto model = mest::config::parse_model(v.at("model"), innov);
  const auto loss = mest::config::parse_loss(v.at("loss"));
  mest::DependenceOptions opts;
  opts.simulation = mest::config::simulation_options(v);
  opts.threads = mest::config::threads(v);
  const auto prof = mest::measure_dependence(model, loss, mest::config::parse_uint(v.at("max_lag"), "max_lag"),
                                             mest::config::parse_uint(v.at("nrep"), "nrep"),
                                             mest::config::parse_uint(v.at("seed"), "seed"), opts);
  const auto srd = mest::srd_diagnostic(prof);
  echo_config("dep-measure", v);
  mest::csv::write_file(primary_output(v, "profile.csv").string(), mest::profile_to_csv(prof));

  std::ostringstream os;
  os.precision(6);
  os << "model=" << v.at("model") << "  loss=" << mest::to_string(loss) << "  nrep=" << prof.nrep
     << "  raw moment order=" << prof.moment_order << '\n';
  for (std::size_t i = 0; i < prof.lags.size(); ++i)
    os << "k=" << prof.lags[i] << "  d_psi=" << prof.d_psi[i] << " (se " << prof.stderr_psi[i]
       << ")  d_raw=" << prof.d_raw[i] << '\n';
  if (srd.fit) {
    if (srd.fit->kind == mest::DecayKind::Geometric)
      os << "decay: geometric rate " << srd.fit->rate;
    else
      os << "decay: polynomial exponent " << srd.fit->exponent;
    os << "  R^2 " << srd.fit->r_squared << "  lags used " << srd.fit->lags_used << '\n';
  } else {
    os << "decay: too few positive lags to fit\n";
  }
  os << "partial sum " << srd.partial_sums.back() << "  verdict " << mest::to_string(srd.verdict) << '\n';
  std::cout << os.str();
  return 0;
}

int run_mc(const Values& v) {
  const auto cfg = mest::config::experiment_config(v);
  const auto rep = mest::run_experiment(cfg);
  echo_config("mc", v);
  mest::csv::write_file(primary_output(v, "report.csv").string(), rep.to_csv());
  mest::csv::write_file((out_dir(v) / "summary.txt").string(), rep.summary(false));
  std::cout << rep.summary(true);
  if (!rep.valid) {
    std::cerr << "error: experiment invalid (see notes in the summary)\n";
    return kNumericExit;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"M-estimation of linear regression with dependent errors"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mest 1.0.0");

  const std::vector<std::pair<std::string, std::string>> names = {
      {"simulate", "simulate a stationary error path"},
      {"fit", "fit an M-estimator"},
      {"infer", "fit and build asymptotic confidence intervals"},
      {"dep-measure", "estimate the functional dependence measure of psi(e)"},
      {"mc", "run a Monte-Carlo experiment"},
  };
  std::vector<std::unique_ptr<Subcommand>> subs;
  for (const auto& [name, help] : names) {
    auto sc = std::make_unique<Subcommand>();
    sc->name = name;
    sc->app = app.add_subcommand(name, help);
    register_keys(*sc);
    subs.push_back(std::move(sc));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsageExit;
  }

  try {
    for (const auto& sc : subs) {
      if (!sc->app->parsed()) continue;
      const Values v = sc->resolve();
      if (sc->name == "simulate") return run_simulate(v);
      if (sc->name == "fit") return run_fit(v);
      if (sc->name == "infer") return run_infer(v);
      if (sc->name == "dep-measure") return run_dep(v);
      return run_mc(v);
    }
  } catch (const mest::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageExit;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericExit;
  }
  return kUsageExit;
}

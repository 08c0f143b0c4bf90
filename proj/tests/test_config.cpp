#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>

#include "mest/config.hpp"
#include "mest/csv.hpp"

using namespace mest;
using namespace mest::config;

TEST(ConfigText, ParsesCommentsAndWhitespace) {
  const auto v = parse_text("# header\n\n  seed = 7 \n   # indented comment\nmodel=a#b\n");
  EXPECT_EQ(v.size(), 2u);
  EXPECT_EQ(v.at("seed"), "7");
  EXPECT_EQ(v.at("model"), "a#b");
}

TEST(ConfigText, RejectsMalformedAndDuplicateLines) {
  EXPECT_THROW(parse_text("seed 7\n"), UsageError);
  EXPECT_THROW(parse_text("=3\n"), UsageError);
  EXPECT_THROW(parse_text("seed=1\nseed=2\n"), UsageError);
}

TEST(ConfigResolve, UnknownKeysRejectedPerSubcommand) {
  EXPECT_NO_THROW(resolve("dep-measure", {{"nrep", "200"}}, {}));
  EXPECT_THROW(resolve("simulate", {{"nrep", "200"}}, {}), UsageError);
  EXPECT_THROW(resolve("fit", {}, {{"replications", "5"}}), UsageError);
  EXPECT_THROW(schema("plot"), UsageError);
}

TEST(ConfigResolve, FlagsOverrideFileOverrideDefaults) {
  const auto v = resolve("simulate", {{"n", "50"}, {"seed", "9"}}, {{"n", "60"}});
  EXPECT_EQ(v.at("n"), "60");
  EXPECT_EQ(v.at("seed"), "9");
  EXPECT_EQ(v.at("model"), "iid");
}

TEST(ConfigResolve, EchoRoundTrips) {
  const auto v = resolve("mc", {{"experiment", "bahadur"}, {"n", "200,400,800"}}, {{"threads", "2"}});
  const auto again = resolve("mc", parse_text(to_text(v, "resolved")), {});
  EXPECT_EQ(v, again);
}

TEST(ConfigResolve, OutputDirFromEnvironment) {
  ::setenv(kOutputDirEnv, "/tmp/mest-env-dir", 1);
  EXPECT_EQ(resolve("fit", {}, {}).at("out_dir"), "/tmp/mest-env-dir");
  EXPECT_EQ(resolve("fit", {}, {{"out_dir", "elsewhere"}}).at("out_dir"), "elsewhere");
  ::unsetenv(kOutputDirEnv);
  EXPECT_EQ(resolve("fit", {}, {}).at("out_dir"), ".");
}

TEST(SpecStrings, Models) {
  const auto g = parse_model("geometric:0.5", Gaussian{});
  ASSERT_TRUE(std::holds_alternative<LinearProcess>(g));
  EXPECT_EQ(std::get<GeometricCoeffs>(std::get<LinearProcess>(g).coeffs).rho, 0.5);
  const auto p = parse_model("polynomial:1.5,300", StudentT{5.0});
  EXPECT_EQ(std::get<PolynomialCoeffs>(std::get<LinearProcess>(p).coeffs).max_lag, 300u);
  const auto ma = parse_model("ma1:0.4", Gaussian{});
  EXPECT_EQ(std::get<ExplicitCoeffs>(std::get<LinearProcess>(ma).coeffs).a, (std::vector<double>{1.0, 0.4}));
  EXPECT_TRUE(std::holds_alternative<Arch>(parse_model("arch:1,0.5", Gaussian{})));
  EXPECT_TRUE(std::holds_alternative<ThresholdAR>(parse_model("tar:0.5,-0.3", Gaussian{})));
  EXPECT_THROW(parse_model("arch:1,3", Gaussian{}), UsageError);
  EXPECT_NO_THROW(parse_model("arch:1,3", Gaussian{}, false));
  EXPECT_THROW(parse_model("geometric:1.2", Gaussian{}), UsageError);
  EXPECT_THROW(parse_model("geometric", Gaussian{}), UsageError);
  EXPECT_THROW(parse_model("polynomial:2,1.5", Gaussian{}), UsageError);
  EXPECT_THROW(parse_model("garch:1,1", Gaussian{}), UsageError);
}

TEST(SpecStrings, InnovationsLossesDesigns) {
  EXPECT_EQ(std::get<Gaussian>(parse_innov("gaussian:1,2")).sd, 2.0);
  EXPECT_EQ(std::get<StudentT>(parse_innov("t:3")).dof, 3.0);
  EXPECT_EQ(std::get<StableSAS>(parse_innov("stable:1.5")).index, 1.5);
  EXPECT_THROW(parse_innov("stable:2.5"), UsageError);
  EXPECT_THROW(parse_innov("gaussian:1"), UsageError);

  EXPECT_EQ(std::get<Huber>(parse_loss("huber")).c, 1.345);
  EXPECT_EQ(std::get<PowerQ>(parse_loss("powerq:1.5")).q, 1.5);
  EXPECT_EQ(std::get<Quantile>(parse_loss("quantile:0.25")).alpha, 0.25);
  EXPECT_TRUE(std::holds_alternative<Square>(parse_loss("square")));
  EXPECT_THROW(parse_loss("quantile:1"), UsageError);
  EXPECT_THROW(parse_loss("huber:abc"), UsageError);

  const auto d = parse_design("random:3,0,2", 5);
  EXPECT_EQ(d.p, 3);
  EXPECT_EQ(d.dist.hi, 2.0);
  EXPECT_EQ(d.seed, 5u);
  EXPECT_EQ(parse_design("polynomial:2", 1).kind, DesignKind::Polynomial);
  EXPECT_THROW(parse_design("random:2.5", 1), UsageError);
  EXPECT_THROW(parse_design("random:2,1,0", 1), UsageError);
}

TEST(SpecStrings, ScalarsAndRules) {
  EXPECT_EQ(parse_grid("500, 2000,8000"), (std::vector<std::size_t>{500, 2000, 8000}));
  EXPECT_THROW(parse_grid("500,-1"), UsageError);
  EXPECT_THROW(parse_double("nan", "x"), UsageError);
  EXPECT_THROW(parse_double("1e999", "x"), UsageError);
  EXPECT_THROW(parse_uint("3.0", "x"), UsageError);
  EXPECT_TRUE(parse_bool("yes", "b"));
  EXPECT_THROW(parse_bool("maybe", "b"), UsageError);
  EXPECT_EQ(parse_kernel("truncated"), Kernel::Truncated);
  EXPECT_THROW(parse_kernel("parzen"), UsageError);
  const auto r = parse_delta_rule("power:0.25,2");
  EXPECT_DOUBLE_EQ(r(16, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(parse_delta_rule("log:0.5")(100, 1e-6), 0.5 * std::log(100.0));
  EXPECT_DOUBLE_EQ(parse_delta_rule("log")(100, 0.25), 2.0);
}

TEST(ExperimentFromConfig, BuildsAndValidates) {
  const auto c = experiment_config(resolve("mc",
                                           {{"experiment", "dependence"},
                                            {"model", "geometric:0.5"},
                                            {"extra_models", "arch:1,0.5; tar:0.5,-0.3"},
                                            {"replications", "200"},
                                            {"bandwidth", "6"}},
                                           {}));
  EXPECT_EQ(c.kind, ExperimentKind::Dependence);
  ASSERT_EQ(c.extra_models.size(), 2u);
  EXPECT_EQ(c.extra_models[1].label, "tar:0.5,-0.3");
  EXPECT_EQ(c.bandwidth, std::optional<std::size_t>(6));
  EXPECT_THROW(experiment_config(resolve("mc", {{"experiment", "bahadur"}, {"n", "500,2000"}}, {})), UsageError);
  EXPECT_THROW(experiment_config(resolve("mc", {{"n", "2000,500"}}, {})), UsageError);
  EXPECT_THROW(experiment_config(resolve("mc", {{"model", "arch:1,3"}}, {})), UsageError);
}

TEST(Csv, RoundTripsDoublesExactly) {
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  csv::Table t;
  t.header = {"a", "b", "c"};
  for (int i = 0; i < 200; ++i) t.rows.push_back({u(eng), u(eng) * 1e-300, std::nextafter(u(eng), 0.0)});
  t.rows.push_back({std::numeric_limits<double>::denorm_min(), -0.0, 1.0 / 3.0});
  const auto back = csv::parse(csv::to_text(t), true);
  EXPECT_EQ(back.header, t.header);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(back.rows[i][j], t.rows[i][j]);
}

TEST(Csv, RejectsBadInput) {
  EXPECT_THROW(csv::parse("1,2\n3\n", false), UsageError);
  EXPECT_THROW(csv::parse("1,x\n", false), UsageError);
  EXPECT_THROW(csv::parse("1,inf\n", false), UsageError);
  EXPECT_THROW(csv::read("/nonexistent/file.csv", false), UsageError);
  EXPECT_THROW(csv::to_vector(csv::parse("1,2\n3,4\n", false)), UsageError);
  EXPECT_EQ(csv::to_vector(csv::parse("1,2,3\n", false)), (std::vector<double>{1, 2, 3}));
  const auto m = csv::to_matrix(csv::parse("x0,x1\n1,2\n3,4\n", true));
  EXPECT_EQ(m(1, 0), 3.0);
}

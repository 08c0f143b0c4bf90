#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mest/dependence.hpp"

using namespace mest;

namespace {

// Pool-adjacent-violators fit of a nonincreasing sequence.
std::vector<double> isotonic_nonincreasing(const std::vector<double>& y) {
  std::vector<double> val, wt;
  std::vector<std::size_t> len;
  for (double v : y) {
    val.push_back(v);
    wt.push_back(1.0);
    len.push_back(1);
    while (val.size() > 1 && val[val.size() - 2] < val.back()) {
      const std::size_t j = val.size() - 2;
      val[j] = (val[j] * wt[j] + val.back() * wt.back()) / (wt[j] + wt.back());
      wt[j] += wt.back();
      len[j] += len.back();
      val.pop_back();
      wt.pop_back();
      len.pop_back();
    }
  }
  std::vector<double> out;
  for (std::size_t b = 0; b < val.size(); ++b) out.insert(out.end(), len[b], val[b]);
  return out;
}

DependenceProfile synthetic_profile(const std::vector<double>& d) {
  DependenceProfile p;
  for (std::size_t i = 0; i < d.size(); ++i) {
    p.lags.push_back(i + 1);
    p.d_psi.push_back(d[i]);
    p.d_raw.push_back(d[i]);
    p.stderr_psi.push_back(0.0);
    p.stderr_raw.push_back(0.0);
  }
  p.nrep = 1000;
  return p;
}

const ErrorModel kGeometric = LinearProcess{GeometricCoeffs{0.5}, Gaussian{}};
const ErrorModel kArch = Arch{1.0, 0.5, Gaussian{}};

}  // namespace

TEST(MeasureDependence, FiniteMemoryProfileVanishes) {
  const auto prof = measure_dependence(LinearProcess{ExplicitCoeffs{{1.0, 0.5}}, Gaussian{}}, Huber{1.0}, 5, 1000, 1);
  EXPECT_GT(prof.d_psi[0], 0.0);
  for (std::size_t k = 2; k <= 5; ++k) {
    EXPECT_EQ(prof.d_psi[k - 1], 0.0);
    EXPECT_EQ(prof.d_raw[k - 1], 0.0);
  }
}

TEST(MeasureDependence, GeometricMatchesClosedForm) {
  const auto prof = measure_dependence(kGeometric, Huber{1e6}, 10, 10000, 2);
  for (std::size_t k = 1; k <= 10; ++k) {
    const double oracle = std::pow(0.5, static_cast<double>(k)) * std::sqrt(2.0);
    EXPECT_NEAR(prof.d_psi[k - 1], oracle, 0.05 * oracle) << "lag " << k;
    EXPECT_NEAR(prof.d_raw[k - 1], oracle, 0.05 * oracle) << "lag " << k;
  }
}

TEST(MeasureDependence, ArchDecaysAndMatchesLargerRun) {
  const auto prof = measure_dependence(kArch, Huber{1.345}, 20, 10000, 3);
  EXPECT_GT(prof.d_psi[0], 0.0);
  EXPECT_LT(prof.d_psi[19], 1e-2);
  const auto big = measure_dependence(kArch, Huber{1.345}, 20, 100000, 4);
  const auto f = fit_decay(prof, DecayKind::Geometric), fb = fit_decay(big, DecayKind::Geometric);
  EXPECT_NEAR(f.rate, fb.rate, 0.05);
  EXPECT_LT(f.rate, 1.0);
  EXPECT_GT(f.r_squared, 0.8);
}

TEST(MeasureDependence, LipschitzBoundHolds) {
  for (const ErrorModel& m : {kGeometric, kArch, ErrorModel{ThresholdAR{0.5, -0.3, StudentT{4.0}}}}) {
    for (const LossSpec& loss : {LossSpec{Huber{1.0}}, LossSpec{Square{}}}) {
      const auto prof = measure_dependence(m, loss, 12, 4000, 5);
      for (std::size_t i = 0; i < prof.d_psi.size(); ++i) {
        EXPECT_GE(prof.d_psi[i], 0.0);
        EXPECT_LE(prof.d_psi[i], prof.d_raw[i] + 2.0 * (prof.stderr_psi[i] + prof.stderr_raw[i]) + 1e-15);
      }
    }
  }
}

TEST(MeasureDependence, StableInnovationsUseFractionalMoment) {
  const auto prof = measure_dependence(LinearProcess{GeometricCoeffs{0.5}, StableSAS{1.5}}, Huber{1.345}, 6, 2000, 6);
  EXPECT_NEAR(prof.moment_order, 1.4, 1e-12);
  for (double d : prof.d_raw) EXPECT_TRUE(std::isfinite(d));
}

TEST(MeasureDependence, ContractiveProfilesAreNearlyMonotone) {
  for (const ErrorModel& m : {kArch, ErrorModel{ThresholdAR{0.6, -0.4, Gaussian{}}}}) {
    const auto prof = measure_dependence(m, Huber{1.345}, 15, 5000, 7);
    const auto iso = isotonic_nonincreasing(prof.d_psi);
    for (std::size_t i = 0; i < iso.size(); ++i)
      EXPECT_LT(std::abs(prof.d_psi[i] - iso[i]), 3.0 * prof.stderr_psi[i] + 1e-15);
  }
}

TEST(MeasureDependence, StandardErrorShrinksWithNrep) {
  const auto a = measure_dependence(kGeometric, Huber{1.345}, 10, 10000, 8);
  const auto b = measure_dependence(kGeometric, Huber{1.345}, 10, 20000, 9);
  for (std::size_t i = 0; i < 10; ++i) {
    const double ratio = b.stderr_psi[i] / a.stderr_psi[i];
    EXPECT_GE(ratio, 0.6) << "lag " << i + 1;
    EXPECT_LE(ratio, 0.82) << "lag " << i + 1;
  }
}

TEST(MeasureDependence, DeterministicAcrossThreadCounts) {
  DependenceOptions one, four;
  four.threads = 4;
  const auto a = measure_dependence(kArch, Huber{1.345}, 8, 500, 10, one);
  const auto b = measure_dependence(kArch, Huber{1.345}, 8, 500, 10, four);
  EXPECT_EQ(a.d_psi, b.d_psi);
  EXPECT_EQ(a.d_raw, b.d_raw);
  EXPECT_EQ(a.stderr_psi, b.stderr_psi);
}

TEST(MeasureDependence, PreconditionsAndPropagation) {
  EXPECT_THROW(measure_dependence(kGeometric, Huber{1.0}, 0, 1000, 1), UsageError);
  EXPECT_THROW(measure_dependence(kGeometric, Huber{1.0}, 5, 99, 1), UsageError);
  EXPECT_THROW(measure_dependence(kGeometric, Huber{-1.0}, 5, 100, 1), UsageError);
  const ErrorModel explode = Recursion{[](double e, double eps) { return 3.0 * e + eps; }, Gaussian{}};
  EXPECT_THROW(measure_dependence(explode, Huber{1.0}, 5, 100, 1), NumericError);
}

TEST(FitDecay, ExactGeometricInput) {
  std::vector<double> d;
  for (int k = 1; k <= 20; ++k) d.push_back(std::pow(0.7, k));
  const auto f = fit_decay(synthetic_profile(d));
  EXPECT_EQ(f.kind, DecayKind::Geometric);
  EXPECT_NEAR(f.rate, 0.7, 1e-10);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  EXPECT_TRUE(f.summable);
}

TEST(FitDecay, ExactPolynomialInput) {
  std::vector<double> d;
  for (int k = 1; k <= 20; ++k) d.push_back(3.0 * std::pow(k, -0.8));
  const auto f = fit_decay(synthetic_profile(d));
  EXPECT_EQ(f.kind, DecayKind::Polynomial);
  EXPECT_NEAR(f.exponent, 0.8, 1e-10);
  EXPECT_FALSE(f.summable);
}

TEST(FitDecay, TooFewUsableLags) {
  EXPECT_THROW(fit_decay(synthetic_profile({0.5, 0.25, 0.125, 0.0, 0.0})), DiagnosticError);
  EXPECT_THROW(fit_decay(synthetic_profile({0.5, 0.25, 1e-13, 1e-14})), DiagnosticError);
}

TEST(FitDecay, GeometricLinearProcessRate) {
  const auto f = fit_decay(measure_dependence(kGeometric, Huber{1.345}, 15, 10000, 11), DecayKind::Geometric);
  EXPECT_GE(f.rate, 0.4);
  EXPECT_LE(f.rate, 0.6);
}

TEST(FitDecay, PolynomialLinearProcessExponent) {
  const ErrorModel m = LinearProcess{PolynomialCoeffs{2.0, 10000}, Gaussian{}};
  const auto f = fit_decay(measure_dependence(m, Huber{1.345}, 50, 2000, 12), DecayKind::Polynomial);
  EXPECT_GE(f.exponent, 1.6);
  EXPECT_LE(f.exponent, 2.4);
  EXPECT_TRUE(f.summable);
}

TEST(Srd, FiniteMemoryIsSummable) {
  const auto prof = measure_dependence(LinearProcess{ExplicitCoeffs{{1.0, 0.5}}, Gaussian{}}, Huber{1.0}, 8, 1000, 13);
  const auto rep = srd_diagnostic(prof);
  EXPECT_EQ(rep.verdict, SrdVerdict::SummableEvidence);
  for (std::size_t k = 1; k < rep.partial_sums.size(); ++k) EXPECT_EQ(rep.partial_sums[k], rep.partial_sums[0]);
}

TEST(Srd, GeometricIsSummable) {
  const auto rep = srd_diagnostic(measure_dependence(kGeometric, Huber{1.345}, 20, 10000, 14));
  EXPECT_EQ(rep.verdict, SrdVerdict::SummableEvidence);
  ASSERT_TRUE(rep.fit.has_value());
  EXPECT_TRUE(rep.fit->summable);
}

TEST(Srd, LongRangeDependenceNeverSummable) {
  const ErrorModel m = LinearProcess{PolynomialCoeffs{0.8, 10000}, Gaussian{}};
  const auto rep = srd_diagnostic(measure_dependence(m, Huber{1.345}, 40, 2000, 15));
  EXPECT_NE(rep.verdict, SrdVerdict::SummableEvidence) << to_string(rep.verdict);
  const auto synthetic = srd_diagnostic(synthetic_profile([] {
    std::vector<double> d;
    for (int k = 1; k <= 40; ++k) d.push_back(std::pow(k, -0.8));
    return d;
  }()));
  EXPECT_EQ(synthetic.verdict, SrdVerdict::DivergenceEvidence);
}

TEST(Srd, PartialSumsAccumulate) {
  const auto rep = srd_diagnostic(synthetic_profile({0.5, 0.25, 0.125, 0.0625}));
  EXPECT_DOUBLE_EQ(rep.partial_sums[3], 0.9375);
}

TEST(Export, CsvColumns) {
  const auto csv = profile_to_csv(synthetic_profile({0.5, 0.25}));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "lag,d_psi,d_raw,stderr");
  EXPECT_NE(csv.find("\n1,0.5,0.5,0\n"), std::string::npos);
}

#include <cmath>

#include <gtest/gtest.h>

#include <pathent/tomo.hpp>

#include "test_support.hpp"

using namespace pathent;

namespace {

DeviceConfig noisy_device() {
  DeviceConfig cfg;
  cfg.multipair_noise = 0.0435;
  return cfg;
}

ProbabilityEstimates with_error(ProbabilityEstimates e, double sd) {
  e.std_error.fill(sd);
  return e;
}

TEST(ProjectorSet, FirstEntryIsZeroZeroOnPortZero) {
  const auto set = projector_set();
  EXPECT_EQ(set[0].setting, MeasurementSetting{});
  EXPECT_EQ(set[0].port, 0);
  EXPECT_EQ(set[0].signal, Label::zero);
  EXPECT_EQ(set[0].idler, Label::zero);
}

TEST(ProjectorSet, CompletenessByDirectSummation) {
  const auto set = projector_set();
  Matrix4c sum = Matrix4c::Zero();
  for (const auto& e : set) sum += e.projector / 9.0;
  EXPECT_TRUE(approx_equal(sum, Matrix4c::Identity(), 1e-12));
}

TEST(ProjectorSet, EachBasisResolvesIdentity) {
  const auto set = projector_set();
  for (int b = 0; b < 9; ++b) {
    Matrix4c sum = Matrix4c::Zero();
    int n = 0;
    for (const auto& e : set)
      if (e.basis == b) {
        sum += e.projector;
        ++n;
      }
    EXPECT_EQ(n, 4);
    EXPECT_TRUE(approx_equal(sum, Matrix4c::Identity(), 1e-12)) << basis_name(b);
  }
}

TEST(ProjectorSet, PortProjectorsMatchLabelKets) {
  // Independent catalogue: |s><s| (x) |i><i| straight from the label kets.
  for (const auto& e : projector_set()) {
    const Ket4 k = tensor(label_ket(e.signal), label_ket(e.idler));
    const Matrix4c want = k * k.adjoint();
    EXPECT_TRUE(approx_equal(e.projector, want, 1e-12)) << to_string(e.signal) << to_string(e.idler);
    Eigen::SelfAdjointEigenSolver<Matrix4c> es(e.projector);
    EXPECT_NEAR(es.eigenvalues()(3), 1.0, 1e-12);
    EXPECT_NEAR(es.eigenvalues()(2), 0.0, 1e-12);
  }
}

TEST(ProjectorSet, NineDistinctSettings) {
  const auto s = tomography_settings();
  for (std::size_t a = 0; a < 9; ++a)
    for (std::size_t b = a + 1; b < 9; ++b) EXPECT_FALSE(s[a] == s[b]);
  EXPECT_EQ(basis_name(0), "ZZ");
  EXPECT_EQ(basis_name(5), "XY");
}

std::vector<CountRecord> uniform_records(std::array<std::int64_t, 4> c, double acc = 0.0) {
  std::vector<CountRecord> out;
  for (const auto& s : tomography_settings()) out.push_back({s, c, acc, 1.0});
  return out;
}

TEST(EstimateProbabilities, Examples) {
  auto e = estimate_probabilities(uniform_records({300, 0, 0, 300}));
  EXPECT_NEAR(e.p[0], 0.5, 1e-15);   // 00
  EXPECT_NEAR(e.p[1], 0.0, 1e-15);   // 01
  EXPECT_NEAR(e.p[7], 0.5, 1e-15);   // 11
  // (100, 100, 100, 100): p = 1/4, var = sum_j ((delta - 1/4)/400)^2 * 100.
  e = estimate_probabilities(uniform_records({100, 100, 100, 100}));
  const double var = (0.75 * 0.75 + 3 * 0.0625) * 100.0 / (400.0 * 400.0);
  for (std::size_t k = 0; k < 36; ++k) {
    EXPECT_NEAR(e.p[k], 0.25, 1e-15);
    EXPECT_NEAR(e.std_error[k], std::sqrt(var), 1e-15);
  }
  e = estimate_probabilities(uniform_records({310, 10, 10, 310}, 10.0));
  EXPECT_NEAR(e.p[0], 0.5, 1e-15);
  EXPECT_NEAR(e.p[1], 0.0, 1e-15);
  EXPECT_NEAR(e.p[6], 0.0, 1e-15);
  EXPECT_NEAR(e.p[7], 0.5, 1e-15);
  e = estimate_probabilities(uniform_records({310, 10, 10, 310}, 10.0), {false, 1.0});
  EXPECT_NEAR(e.p[0], 310.0 / 640.0, 1e-15);
}

TEST(EstimateProbabilities, StderrScaleOverride) {
  const auto a = estimate_probabilities(uniform_records({120, 80, 90, 110}));
  const auto b = estimate_probabilities(uniform_records({120, 80, 90, 110}), {true, 2.5});
  for (std::size_t k = 0; k < 36; ++k) EXPECT_NEAR(b.std_error[k], 2.5 * a.std_error[k], 1e-15);
}

TEST(EstimateProbabilities, EmptyBasisIsNamed) {
  auto recs = uniform_records({5, 5, 5, 5});
  recs[4].coincidences = {0, 0, 0, 0};
  try {
    estimate_probabilities(recs);
    FAIL() << "expected an error";
  } catch (const TomographyError& e) {
    EXPECT_NE(std::string(e.what()).find("XX"), std::string::npos) << e.what();
  }
  recs[4].coincidences = {5, 5, 5, 5};
  recs.erase(recs.begin() + 8);
  try {
    estimate_probabilities(recs);
    FAIL() << "expected an error";
  } catch (const TomographyError& e) {
    EXPECT_NE(std::string(e.what()).find("YY"), std::string::npos) << e.what();
  }
}

TEST(EstimateProbabilities, GroupsRecordsAcrossWrappedAngles) {
  auto recs = uniform_records({50, 0, 0, 50});
  CountRecord extra = recs[4];
  extra.setting.theta_sz += 2 * kPi;
  recs.push_back(extra);
  const auto g = group_by_basis(recs);
  EXPECT_EQ(g[4].coincidences[0], 100);
  EXPECT_EQ(g[3].coincidences[0], 50);
}

TEST(ClsReconstruct, BellStateClosedLoop) {
  const auto bell = DensityMatrix::from_ket(kets::phi_plus());
  const auto r = cls_reconstruct(ideal_probabilities(bell.matrix()));
  EXPECT_GE(fidelity(r.rho, bell), 0.999);
  EXPECT_LE(r.objective, 1e-12);
}

TEST(ClsReconstruct, MixedStatePurity) {
  const auto r = cls_reconstruct(ideal_probabilities(build_state({0.5, 0.0, 0.0}).matrix()));
  EXPECT_NEAR(purity(r.rho), 0.5, 0.01);
}

TEST(ClsReconstruct, RandomStatesClosedLoop) {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 100; ++k) {
    const Matrix4c truth = fixtures::random_density_any_rank(rng);
    const auto est = ideal_probabilities(truth);
    const auto r = cls_reconstruct(est);
    EXPECT_GE(fidelity(r.rho.matrix(), truth), 0.999) << k;
    EXPECT_LE(r.objective, 1e-12);
    EXPECT_LE(r.objective, cls_objective(est, truth) + 1e-12);
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix4c>(r.rho.matrix()).eigenvalues().minCoeff(), -1e-10);
    EXPECT_NEAR(r.rho.matrix().trace().real(), 1.0, 1e-12);
    EXPECT_TRUE(approx_equal(r.rho.matrix(), r.rho.matrix().adjoint(), 0.0));
  }
}

TEST(ClsReconstruct, NoisyEstimatesBeatTheTruthOnTheObjective) {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> n(0.0, 0.02);
  for (int k = 0; k < 20; ++k) {
    const Matrix4c truth = fixtures::random_density_any_rank(rng);
    auto est = ideal_probabilities(truth);
    for (auto& p : est.p) p = std::clamp(p + n(rng), 0.0, 1.0);
    const auto r = cls_reconstruct(est);
    EXPECT_LE(r.objective, cls_objective(est, truth) + 1e-12);
    EXPECT_NEAR(r.objective, cls_objective(est, r.rho.matrix()), 1e-12);
  }
}

TEST(ClsReconstruct, DegenerateZeroOneEstimates) {
  ProbabilityEstimates est;
  est.p.fill(0.0);
  for (std::size_t k = 0; k < 36; ++k)
    if (k == 0) est.p[k] = 1.0;
  const auto r = cls_reconstruct(est);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix4c>(r.rho.matrix()).eigenvalues().minCoeff(), -1e-10);
}

TEST(ClsReconstruct, ExhaustedBudgetRaisesWithBestIterate) {
  ClsOptions opt;
  opt.lm.max_iterations = 1;
  opt.starts = 2;
  const auto est = ideal_probabilities(build_state({0.4, 0.8, 0.3}).matrix());
  try {
    cls_reconstruct(est, opt);
    FAIL() << "expected a convergence error";
  } catch (const ConvergenceError& e) {
    EXPECT_TRUE(validate(e.best_iterate()).ok());
    EXPECT_GT(e.residual(), 0.0);
  }
}

TEST(ClsReconstruct, SingleSourceUnderDeviceNoise) {
  const auto top = build_state({1.0, 0.0, 0.0});
  const auto recs = simulate_tomography(top, noisy_device(), PumpParams{}, 60.0, 77);
  const auto r = cls_reconstruct(estimate_probabilities(recs));
  EXPECT_GE(fidelity(r.rho, top), 0.96);
}

TEST(MonteCarlo, ZeroErrorGivesZeroSpread) {
  MonteCarloOptions opt;
  opt.samples = 20;
  const auto target = build_state({0.49, 0.99, 0.0});
  const auto r = monte_carlo(ideal_probabilities(target.matrix()), target, opt);
  EXPECT_EQ(r.mc_samples, 20u);
  // Identical samples; only the rounding of the mean remains.
  EXPECT_NEAR(r.fidelity_to_target.std, 0.0, 1e-14);
  EXPECT_NEAR(r.purity.std, 0.0, 1e-14);
  EXPECT_NEAR(r.s_optimal.std, 0.0, 1e-14);
  EXPECT_NEAR(r.s_optimal.value, chsh_optimal(target), 1e-6);
  EXPECT_NEAR(r.s_fixed.value, chsh_model(0.49, 0.99), 1e-5);
}

TEST(MonteCarlo, DefaultsToFiveHundredSamples) { EXPECT_EQ(MonteCarloOptions{}.samples, 500u); }

TEST(MonteCarlo, RejectsFewerThanTwoSamples) {
  MonteCarloOptions opt;
  opt.samples = 1;
  const auto t = build_state({0.5, 1.0, 0.0});
  EXPECT_THROW(monte_carlo(ideal_probabilities(t.matrix()), t, opt), TomographyError);
}

TEST(MonteCarlo, ReproducibleAndThreadIndependent) {
  const auto target = build_state({0.49, 0.99, 0.0});
  const auto est = with_error(ideal_probabilities(target.matrix()), 0.01);
  MonteCarloOptions opt;
  opt.samples = 16;
  opt.seed = 5;
  opt.keep_samples = true;
  opt.threads = 1;
  const auto a = monte_carlo(est, target, opt);
  opt.threads = 3;
  const auto b = monte_carlo(est, target, opt);
  EXPECT_EQ(a.s_optimal_samples, b.s_optimal_samples);
  EXPECT_EQ(a.fidelity_samples, b.fidelity_samples);
  opt.seed = 6;
  const auto c = monte_carlo(est, target, opt);
  EXPECT_NE(a.s_optimal_samples, c.s_optimal_samples);
}

TEST(MonteCarlo, DoublingCountsShrinksSpreadBySqrtTwo) {
  const auto target = build_state({0.49, 0.99, 0.0});
  const auto cfg = noisy_device();
  double ratio_sum = 0.0;
  const int seeds = 6;
  for (int s = 0; s < seeds; ++s) {
    MonteCarloOptions opt;
    opt.samples = 120;
    opt.seed = static_cast<std::uint64_t>(100 + s);
    const auto one = monte_carlo(simulate_tomography(target, cfg, PumpParams{}, 60.0, 10 + s), target, opt);
    const auto two = monte_carlo(simulate_tomography(target, cfg, PumpParams{}, 120.0, 10 + s), target, opt);
    ratio_sum += one.purity.std / two.purity.std;
  }
  EXPECT_NEAR(ratio_sum / seeds, std::sqrt(2.0), 0.2);
}

TEST(MonteCarlo, FidelityImprovesWithCounts) {
  const auto target = build_state({0.49, 0.99, 0.3});
  DeviceConfig cfg;
  cfg.car = 0.0;
  double previous = 0.0;
  // 100 .. 100000 counts per setting at 30 cps.
  for (double counts : {1e2, 1e3, 1e4, 1e5}) {
    double mean = 0.0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
      const auto recs = simulate_tomography(target, cfg, PumpParams{}, counts / 30.0, 1000 + s);
      mean += fidelity(cls_reconstruct(estimate_probabilities(recs)).rho, target) / seeds;
    }
    EXPECT_GE(mean, previous) << counts;
    previous = mean;
  }
  EXPECT_GT(previous, 0.999);
}

TEST(MonteCarlo, CountBootstrapAgreesWithNormalResampling) {
  const auto target = build_state({0.49, 0.99, 0.0});
  const auto recs = simulate_tomography(target, noisy_device(), PumpParams{}, 60.0, 3);
  MonteCarloOptions opt;
  opt.samples = 150;
  const auto normal = monte_carlo(recs, target, opt);
  opt.resampling = Resampling::poisson_counts;
  const auto poisson = monte_carlo(recs, target, opt);
  EXPECT_NEAR(poisson.s_optimal.std / normal.s_optimal.std, 1.0, 0.35);
  EXPECT_EQ(poisson.s_optimal.value, normal.s_optimal.value);
}

TEST(TomographyReport, Fields) {
  const auto target = build_state({0.5, 0.0, 0.0});
  MonteCarloOptions opt;
  opt.samples = 4;
  opt.keep_samples = true;
  const auto r = monte_carlo(with_error(ideal_probabilities(target.matrix()), 0.005), target, opt);
  const auto j = tomography_report(r, target, true);
  for (const char* key : {"rho_hat", "target", "fidelity", "purity", "s_optimal", "s_fixed", "mc_samples", "samples"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["samples"]["purity"].size(), 4u);
  EXPECT_EQ(j["rho_hat"]["re"].size(), 4u);
  const auto back = density_matrix_from_json(j["rho_hat"]);
  EXPECT_TRUE(approx_equal(back.matrix(), r.rho_hat.matrix(), 1e-15));
  EXPECT_FALSE(tomography_report(r, target).contains("samples"));
}

TEST(ChshFromCounts, RecoversModelWithLargeCounts) {
  const auto rho = build_state({0.49, 0.99, 0.4});
  DeviceConfig cfg;
  const auto settings = canonical_chsh_settings(0.4);
  const auto m = chsh_measurements(settings);
  std::array<CountRecord, 4> recs;
  for (std::size_t k = 0; k < 4; ++k) recs[k] = simulate_counts(rho, m[k], cfg, PumpParams{}, 1e5, 40 + k);
  const auto r = chsh_from_counts(recs, 200, 9);
  EXPECT_NEAR(r.s_value, chsh_model(0.49, 0.99), 5 * r.standard_error);
  EXPECT_GT(r.standard_error, 0.0);
  EXPECT_LT(r.standard_error, 0.01);
}

}  // namespace

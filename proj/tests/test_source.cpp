#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include <pathent/source.hpp>

using namespace pathent;

namespace {

RingParams device_ring() { return {0.0, 21.0, 800.0}; }
PumpParams device_pump() { return {10.8, 40.0, 51.0, 0.075, 1.0}; }

TEST(CavityEnhancement, Lorentzian) {
  const auto ring = device_ring();
  EXPECT_EQ(cavity_enhancement(ring, 0.0), Complex(1.0, 0.0));
  EXPECT_NEAR(std::norm(cavity_enhancement(ring, 10.5)), 0.5, 1e-15);
  // (G/2)^2 / ((G/2)^2 + (10 G)^2) = 0.25 / 100.25
  EXPECT_NEAR(std::norm(cavity_enhancement(ring, 210.0)), 0.0024937655860349127, 1e-15);
  // Periodic in the FSR: the signal resonance is also a unit response.
  EXPECT_NEAR(std::abs(cavity_enhancement(ring, 800.0) - Complex(1.0, 0.0)), 0.0, 1e-15);
}

TEST(PumpEnvelope, GaussianWithFortyGigahertzFwhm) {
  const auto pump = device_pump();
  const double peak = std::norm(pump_envelope(pump, 0.0));
  EXPECT_GT(peak, std::norm(pump_envelope(pump, 1.0)));
  EXPECT_NEAR(std::norm(pump_envelope(pump, 20.0)) / peak, 0.5, 1e-12);
  EXPECT_NEAR(std::norm(pump_envelope(pump, -20.0)) / peak, 0.5, 1e-12);
}

TEST(PumpEnvelope, UnitNormOnQuadratureGrid) {
  const auto pump = device_pump();
  const int n = 20001;
  const double lo = -400.0, hi = 400.0, h = (hi - lo) / (n - 1);
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const double w = (k == 0 || k == n - 1) ? 0.5 : 1.0;
    acc += w * std::norm(pump_envelope(pump, lo + k * h));
  }
  EXPECT_NEAR(acc * h, 1.0, 1e-10);
}

TEST(PumpParams, TimeBandwidthNearGaussianLimit) {
  EXPECT_NEAR(device_pump().time_bandwidth_product(), 0.432, 1e-3);
}

TEST(ComputeJsa, IsNormalisedWithIncreasingAxes) {
  const auto g = compute_jsa(device_ring(), device_pump(), 63.0, 64);
  EXPECT_NEAR(g.norm_squared(), 1.0, 1e-9);
  for (std::size_t k = 1; k < g.signal_freqs.size(); ++k) EXPECT_GT(g.signal_freqs[k], g.signal_freqs[k - 1]);
  EXPECT_NEAR(g.signal_freqs.front(), 800.0 - 63.0, 1e-12);
  EXPECT_NEAR(g.idler_freqs.back(), -800.0 + 63.0, 1e-12);
}

TEST(ComputeJsa, RejectsDegenerateGrids) {
  EXPECT_THROW(compute_jsa(device_ring(), device_pump(), 0.0, 64), SourceError);
  EXPECT_THROW(compute_jsa(device_ring(), device_pump(), -1.0, 64), SourceError);
  EXPECT_THROW(compute_jsa(device_ring(), device_pump(), 63.0, 8), SourceError);
}

TEST(ComputeJsa, NarrowPumpCollapsesOntoAntiDiagonal) {
  auto pump = device_pump();
  pump.linewidth_fwhm = 0.01;
  const auto g = compute_jsa(device_ring(), pump, 63.0, 64);
  double off = 0.0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (i + j != 63) off += std::norm(g.amplitudes(i, j));
  EXPECT_LT(off, 1e-12);
  EXPECT_GT(schmidt_decompose(g).schmidt_number, 5.0);
}

TEST(ComputeJsa, DeviceParametersNearlySeparable) {
  const double k = schmidt_decompose(compute_jsa(device_ring(), device_pump(), 63.0, 64)).schmidt_number;
  EXPECT_GE(k, 1.0);
  EXPECT_LE(k, 1.35);
}

// The pump resonance filters a broad pump, so K saturates above 1 instead of reaching it.
TEST(ComputeJsa, BroadPumpSaturatesBelowDeviceK) {
  auto pump = device_pump();
  pump.linewidth_fwhm = 400.0;
  const double k_broad = schmidt_decompose(compute_jsa(device_ring(), pump, 63.0, 64)).schmidt_number;
  pump.linewidth_fwhm = 4000.0;
  const double k_broader = schmidt_decompose(compute_jsa(device_ring(), pump, 63.0, 64)).schmidt_number;
  const double k_device = schmidt_decompose(compute_jsa(device_ring(), device_pump(), 63.0, 64)).schmidt_number;
  EXPECT_LT(k_broad, k_device);
  EXPECT_NEAR(k_broader, k_broad, 0.01);
  EXPECT_LT(k_broad, 1.1);
}

TEST(ComputeJsa, BroadeningFactorWidensThePumpLine) {
  auto pump = device_pump();
  pump.broadening = 2.0;
  EXPECT_DOUBLE_EQ(pump.effective_linewidth(), 80.0);
  const double k1 = schmidt_decompose(compute_jsa(device_ring(), device_pump(), 63.0, 64)).schmidt_number;
  const double k2 = schmidt_decompose(compute_jsa(device_ring(), pump, 63.0, 64)).schmidt_number;
  EXPECT_LT(k2, k1);
}

TEST(ComputeJsa, GridRefinementConverges) {
  const double k64 = schmidt_decompose(compute_jsa(device_ring(), device_pump(), 63.0, 64)).schmidt_number;
  const double k128 = schmidt_decompose(compute_jsa(device_ring(), device_pump(), 63.0, 128)).schmidt_number;
  EXPECT_LT(std::abs(k128 - k64) / k64, 0.01);
}

TEST(ComputeJsa, NarrowerPumpNeverDecreasesK) {
  double previous = 0.0;
  for (double width : {800.0, 400.0, 160.0, 80.0, 40.0, 20.0, 10.0, 5.0, 2.0}) {
    auto pump = device_pump();
    pump.linewidth_fwhm = width;
    const double k = schmidt_decompose(compute_jsa(device_ring(), pump, 63.0, 64)).schmidt_number;
    EXPECT_GE(k, previous - 1e-9) << "pump width " << width;
    previous = k;
  }
}

JsaGrid product_grid(int n) {
  JsaGrid g;
  g.signal_freqs = linspace(0, 1, n);
  g.idler_freqs = linspace(0, 1, n);
  g.amplitudes.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      g.amplitudes(i, j) = Complex(std::exp(-0.1 * i), 0.3 * i) * Complex(1.0 / (1.0 + j), -0.2);
  g.amplitudes /= g.amplitudes.norm();
  return g;
}

TEST(Schmidt, ProductIsRankOne) {
  const auto s = schmidt_decompose(product_grid(32));
  EXPECT_NEAR(s.schmidt_number, 1.0, 1e-9);
  double sum2 = 0.0;
  for (double v : s.singular_values) sum2 += v * v;
  EXPECT_NEAR(sum2, 1.0, 1e-9);
  EXPECT_FALSE(s.lower_bound);
}

TEST(Schmidt, EqualTwoModeSuperposition) {
  JsaGrid g;
  g.signal_freqs = linspace(0, 1, 16);
  g.idler_freqs = linspace(0, 1, 16);
  g.amplitudes = ComplexMatrix::Zero(16, 16);
  g.amplitudes(2, 5) = 1.0 / std::sqrt(2.0);
  g.amplitudes(9, 11) = Complex(0.0, 1.0 / std::sqrt(2.0));
  EXPECT_NEAR(schmidt_decompose(g).schmidt_number, 2.0, 1e-12);
}

// Eigenvalues of the Gram matrix J J^dagger are the squared singular values.
double gram_schmidt_number(const JsaGrid& g) {
  const ComplexMatrix gram = g.amplitudes * g.amplitudes.adjoint();
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(gram);
  const Eigen::VectorXd mu = es.eigenvalues().cwiseMax(0.0) / es.eigenvalues().cwiseMax(0.0).sum();
  return 1.0 / mu.squaredNorm();
}

TEST(Schmidt, MatchesGramMatrixOracle) {
  for (double width : {5.0, 40.0, 400.0}) {
    auto pump = device_pump();
    pump.linewidth_fwhm = width;
    const auto g = compute_jsa(device_ring(), pump, 63.0, 64);
    EXPECT_NEAR(schmidt_decompose(g).schmidt_number, gram_schmidt_number(g), 1e-6) << width;
  }
}

TEST(Schmidt, InvariantUnderGlobalPhaseAndAxisExchange) {
  const auto g = compute_jsa(device_ring(), device_pump(), 63.0, 64);
  const double k = schmidt_decompose(g).schmidt_number;
  JsaGrid phased = g;
  phased.amplitudes *= std::polar(1.0, 1.234);
  EXPECT_NEAR(schmidt_decompose(phased).schmidt_number, k, 1e-9);
  JsaGrid swapped = g;
  swapped.amplitudes = g.amplitudes.transpose();
  std::swap(swapped.signal_freqs, swapped.idler_freqs);
  EXPECT_NEAR(schmidt_decompose(swapped).schmidt_number, k, 1e-9);
}

TEST(Schmidt, RejectsZeroGrid) {
  JsaGrid g;
  g.signal_freqs = linspace(0, 1, 16);
  g.idler_freqs = linspace(0, 1, 16);
  g.amplitudes = ComplexMatrix::Zero(16, 16);
  EXPECT_THROW(schmidt_decompose(g), SourceError);
}

TEST(HomVisibility, ReciprocalOfK) {
  SchmidtResult s;
  s.schmidt_number = 1.0;
  EXPECT_DOUBLE_EQ(hom_visibility(s), 1.0);
  s.schmidt_number = 2.0;
  EXPECT_DOUBLE_EQ(hom_visibility(s), 0.5);
  s.schmidt_number = 1.19;
  EXPECT_NEAR(hom_visibility(s), 0.840, 5e-4);
}

TEST(Overlap, IdenticalRings) {
  const auto g = compute_jsa(device_ring(), device_pump(), 63.0, 64);
  EXPECT_NEAR(std::abs(jsa_overlap(g, g)), 1.0, 1e-9);
  JsaGrid phased = g;
  phased.amplitudes *= std::polar(1.0, -0.7);
  EXPECT_NEAR(std::abs(jsa_overlap(g, phased)), 1.0, 1e-9);
}

TEST(Overlap, FarDetunedRingsAreDistinguishable) {
  const auto ring = device_ring();
  const double delta = 50.0 * ring.linewidth_fwhm;
  const GridSpec spec{ring.signal_resonance() + delta / 2, ring.idler_resonance() + delta / 2, 63.0 + delta / 2, 512};
  auto pump = device_pump();
  pump.carrier = delta;
  const auto a = compute_jsa(ring.detuned(delta), pump, spec);
  const auto b = compute_jsa(ring, device_pump(), spec);
  EXPECT_LT(std::abs(jsa_overlap(a, b)), 0.01);
}

TEST(Overlap, RejectsMismatchedAxes) {
  const auto a = compute_jsa(device_ring(), device_pump(), 63.0, 64);
  const auto b = compute_jsa(device_ring(), device_pump(), 60.0, 64);
  const auto c = compute_jsa(device_ring(), device_pump(), 63.0, 32);
  EXPECT_THROW(jsa_overlap(a, b), SourceError);
  EXPECT_THROW(jsa_overlap(a, c), SourceError);
}

TEST(Overlap, BoundedByOne) {
  for (double lw : {15.0, 21.0, 30.0})
    for (double d : {-30.0, 0.0, 12.0}) {
      const RingParams a{d, lw, 800.0};
      const GridSpec spec{800.0, -800.0, 80.0, 64};
      const double s = std::abs(jsa_overlap(compute_jsa(a, device_pump(), spec), compute_jsa(device_ring(), device_pump(), spec)));
      EXPECT_LE(s, 1.0 + 1e-12);
      EXPECT_LE(s, density_overlap(compute_jsa(a, device_pump(), spec), compute_jsa(device_ring(), device_pump(), spec)) + 1e-12);
    }
}

// Independent model evaluation for the refinement oracle: direct Lorentzians,
// direct Gaussian, and Simpson quadrature for the pump self-convolution.
Complex model_jsa(double lw, double nus, double nui) {
  const double fp = 40.0;
  const double ln2 = std::log(2.0);
  auto lor = [&](double d) { return Complex(lw / 2, 0) / Complex(lw / 2, d); };
  auto field = [&](double v) { return lor(v) * std::exp(-2.0 * ln2 * v * v / (fp * fp)); };
  const double omega = nus + nui;
  const int m = 4000;
  const double lo = -200.0, hi = 200.0, h = (hi - lo) / m;
  Complex a2 = 0.0;
  for (int k = 0; k <= m; ++k) {
    const double v = lo + k * h;
    const double w = (k == 0 || k == m) ? 1.0 : (k % 2 ? 4.0 : 2.0);
    a2 += w * field(v) * field(omega - v);
  }
  a2 *= h / 3.0;
  return lor(nus - 800.0) * lor(nui + 800.0) * a2;
}

TEST(Overlap, RefinementOracleForMismatchedLinewidths) {
  const RingParams a{0.0, 21.0, 800.0}, b{0.0, 23.0, 800.0};
  const double hw = 63.0;
  const GridSpec spec{800.0, -800.0, hw, 64};
  const double sigma = std::abs(jsa_overlap(compute_jsa(a, device_pump(), spec), compute_jsa(b, device_pump(), spec)));

  const int n = 128;
  const auto xs = linspace(800.0 - hw, 800.0 + hw, n);
  const auto ys = linspace(-800.0 - hw, -800.0 + hw, n);
  Complex ab = 0.0;
  double aa = 0.0, bb = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double w = ((i == 0 || i == n - 1) ? 0.5 : 1.0) * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
      const Complex fa = model_jsa(21.0, xs[static_cast<std::size_t>(i)], ys[static_cast<std::size_t>(j)]);
      const Complex fb = model_jsa(23.0, xs[static_cast<std::size_t>(i)], ys[static_cast<std::size_t>(j)]);
      ab += w * std::conj(fa) * fb;
      aa += w * std::norm(fa);
      bb += w * std::norm(fb);
    }
  const double oracle = std::abs(ab) / std::sqrt(aa * bb);
  EXPECT_LT(sigma, 1.0);
  EXPECT_NEAR(sigma, oracle, 1e-3);
}

TEST(DetuningSweep, Examples) {
  const auto ring = device_ring();
  const auto at_zero = detuning_sweep(ring, ring, device_pump(), {0.0}, 0.0, 1.0);
  EXPECT_NEAR(at_zero[0].overlap, 1.0, 1e-9);
  EXPECT_NEAR(at_zero[0].visibility, 1.0, 1e-9);
  const auto far = detuning_sweep(ring, ring, device_pump(), {5.0 * ring.linewidth_fwhm}, 0.37, 1.0);
  EXPECT_DOUBLE_EQ(far[0].visibility, 0.37);
}

TEST(DetuningSweep, OverlapEvenInDetuning) {
  const auto ring = device_ring();
  for (double d : {5.0, 21.0, 47.0, 90.0}) {
    const auto pts = detuning_sweep(ring, ring, device_pump(), {d, -d}, 0.0);
    EXPECT_NEAR(pts[0].overlap, pts[1].overlap, 1e-6) << d;
  }
  EXPECT_THROW(detuning_sweep(ring, ring, device_pump(), {std::nan("")}, 0.0), SourceError);
}

TEST(JsaIo, CsvRoundTrip) {
  const auto g = compute_jsa(device_ring(), device_pump(), 63.0, 16);
  std::stringstream ss;
  write_jsa_csv(g, ss);
  const auto back = read_jsa_csv(ss);
  EXPECT_FALSE(back.magnitude_only);
  EXPECT_NEAR(std::abs(jsa_overlap(g, back)), 1.0, 1e-12);
}

TEST(JsaIo, MagnitudeOnlyImportIsFlaggedAsBound) {
  const auto g = compute_jsa(device_ring(), device_pump(), 63.0, 16);
  std::stringstream ss;
  ss << "nu_s,nu_i,jsd\n";
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      ss << g.signal_freqs[static_cast<std::size_t>(i)] << ',' << g.idler_freqs[static_cast<std::size_t>(j)] << ','
         << std::norm(g.amplitudes(i, j)) << '\n';
  const auto mag = read_jsa_csv(ss);
  EXPECT_TRUE(mag.magnitude_only);
  EXPECT_NEAR((mag.amplitudes.cwiseAbs() - g.amplitudes.cwiseAbs()).norm(), 0.0, 1e-6);
  const auto s = schmidt_decompose(mag);
  EXPECT_TRUE(s.lower_bound);
  EXPECT_EQ(mag.amplitudes.imag().norm(), 0.0);
}

TEST(JsaIo, JsonRoundTripAndMagnitudeForm) {
  const auto g = compute_jsa(device_ring(), device_pump(), 63.0, 16);
  const auto back = jsa_from_json(nlohmann::json::parse(to_json(g).dump()));
  EXPECT_NEAR(std::abs(jsa_overlap(g, back)), 1.0, 1e-12);
  nlohmann::json j = {{"signal_freqs", {1.0, 2.0}}, {"idler_freqs", {1.0, 2.0}}, {"magnitude", {{1.0, 0.0}, {0.0, 1.0}}}};
  const auto m = jsa_from_json(j);
  EXPECT_TRUE(m.magnitude_only);
  EXPECT_NEAR(schmidt_decompose(m).schmidt_number, 2.0, 1e-12);
  j["signal_freqs"] = {2.0, 1.0};
  EXPECT_THROW(jsa_from_json(j), SourceError);
}

}  // namespace

// The chip: path-entangled state of two coherently pumped sources, the two
// analysis interferometers, and photon counting.

#ifndef PATHENT_DEVICE_HPP
#define PATHENT_DEVICE_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qstate.hpp"
#include "source.hpp"

namespace pathent {

class DeviceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Balance beta, spectral overlap sigma and entangled phase theta.
struct StateParams {
  double beta = 0.5;
  Complex sigma{1.0, 0.0};
  double theta = 0.0;
};

/// rho = beta |00><00| + (1-beta) |11><11|
///     + e^{-i theta} sqrt(beta (1-beta)) sigma |00><11| + h.c.
/// The phase of sigma is folded into theta, so only |sigma| is stored.
inline DensityMatrix build_state(const StateParams& p) {
  if (!(p.beta >= 0.0 && p.beta <= 1.0)) throw DeviceError("beta must lie in [0, 1]");
  const double mag = std::abs(p.sigma);
  if (mag > 1.0 + 1e-12) throw DeviceError("|sigma| must not exceed 1");
  const double theta = p.theta - (mag > 0.0 ? std::arg(p.sigma) : 0.0);
  const double c = std::sqrt(p.beta * (1.0 - p.beta)) * std::min(mag, 1.0);
  Matrix4c m = Matrix4c::Zero();
  m(0, 0) = p.beta;
  m(3, 3) = 1.0 - p.beta;
  m(0, 3) = std::polar(c, -theta);
  m(3, 0) = std::conj(m(0, 3));
  return DensityMatrix(m);
}

/// How the pump split of the first coupler weights the two source rates.
enum class BalanceWeighting {
  quadratic,  // SFWM rate ~ (pump power)^2: weights r^2, (1-r)^2
  linear,     // weights r, 1-r
  none,       // rates taken as-is
};

inline double balance_from_brightness(double mu_top, double mu_bottom, double coupler_reflectivity,
                                      BalanceWeighting weighting = BalanceWeighting::quadratic) {
  if (mu_top < 0.0 || mu_bottom < 0.0) throw DeviceError("source rates must be non-negative");
  const double r = coupler_reflectivity;
  double wt = 1.0, wb = 1.0;
  switch (weighting) {
    case BalanceWeighting::quadratic:
      wt = r * r;
      wb = (1.0 - r) * (1.0 - r);
      break;
    case BalanceWeighting::linear:
      wt = r;
      wb = 1.0 - r;
      break;
    case BalanceWeighting::none:
      break;
  }
  const double denom = wt * mu_top + wb * mu_bottom;
  if (!(denom > 0.0)) throw DeviceError("both source rates are zero");
  return wt * mu_top / denom;
}

/// Relative phase rotation diag(1, e^{i theta}).
inline Matrix2c rz(double theta) {
  Matrix2c m = Matrix2c::Zero();
  m(0, 0) = 1.0;
  m(1, 1) = std::polar(1.0, theta);
  return m;
}

inline Matrix2c ry(double theta) {
  const double c = std::cos(0.5 * theta), s = std::sin(0.5 * theta);
  return (Matrix2c() << c, -s, s, c).finished();
}

/// Directional coupler with power reflectivity r, as a real rotation.
inline Matrix2c coupler(double r) {
  const double a = std::sqrt(r), b = std::sqrt(1.0 - r);
  return (Matrix2c() << a, -b, b, a).finished();
}

/// Mach-Zehnder transfer: coupler(r_out) . diag(1, e^{i theta}) . coupler(r_in)^T,
/// conjugated by diag(1, i) and with the global phase e^{-i theta/2} removed so
/// that two 50:50 couplers give exactly ry(theta).
inline Matrix2c mzi(double theta, double r_in = 0.5, double r_out = 0.5) {
  const Matrix2c s = rz(0.5 * kPi);
  const Matrix2c core = coupler(r_out) * rz(theta) * coupler(r_in).transpose();
  return std::polar(1.0, -0.5 * theta) * s * core * s.adjoint();
}

struct MeasurementSetting {
  double theta_sy = 0.0;
  double theta_sz = 0.0;
  double theta_iy = 0.0;
  double theta_iz = 0.0;

  bool operator==(const MeasurementSetting&) const = default;
};

struct DeviceConfig {
  double first_coupler_reflectivity = 0.54;
  // signal input, signal output, idler input, idler output
  std::array<double, 4> analysis_coupler_reflectivities{0.5, 0.5, 0.5, 0.5};
  double filter_bandwidth = 35.0;    // GHz
  double filter_selectivity = 22.0;  // dB
  double filter_fsr = 640.0;         // GHz
  double per_arm_transmission = 0.0112;
  double detector_efficiency = 0.25;
  double rep_rate = 51.0;  // MHz
  // Coincidence-to-accidental ratio of the flat background; <= 0 disables it.
  double car = 10.0;
  // Fraction of detected pairs replaced by uncorrelated two-fold events
  // (multi-pair contamination); mixes I/4 into the detected state.
  double multipair_noise = 0.0;

  void validate() const {
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw DeviceError(std::string(name) + " must lie in [0, 1]");
    };
    prob(first_coupler_reflectivity, "first_coupler_reflectivity");
    for (double r : analysis_coupler_reflectivities) prob(r, "analysis coupler reflectivity");
    prob(per_arm_transmission, "per_arm_transmission");
    prob(detector_efficiency, "detector_efficiency");
    prob(multipair_noise, "multipair_noise");
    if (!(filter_selectivity >= 0.0)) throw DeviceError("filter_selectivity must be non-negative");
    if (!(filter_bandwidth > 0.0 && filter_fsr > 0.0)) throw DeviceError("filter bandwidth and FSR must be positive");
    if (!(rep_rate > 0.0)) throw DeviceError("rep_rate must be positive");
  }

  bool ideal_couplers() const {
    for (double r : analysis_coupler_reflectivities)
      if (r != 0.5) return false;
    return true;
  }
};

/// (R_y R_z)_signal (x) (R_y R_z)_idler, with the configured couplers.
inline Matrix4c measurement_unitary(const MeasurementSetting& s, const DeviceConfig& config = {}) {
  const auto& r = config.analysis_coupler_reflectivities;
  const Matrix2c ys = config.ideal_couplers() ? ry(s.theta_sy) : mzi(s.theta_sy, r[0], r[1]);
  const Matrix2c yi = config.ideal_couplers() ? ry(s.theta_iy) : mzi(s.theta_iy, r[2], r[3]);
  return tensor(Matrix2c(ys * rz(s.theta_sz)), Matrix2c(yi * rz(s.theta_iz)));
}

/// Probabilities of the four output-port pairs (0s0i, 0s1i, 1s0i, 1s1i).
inline std::array<double, 4> measurement_probabilities(const Matrix4c& rho, const MeasurementSetting& setting,
                                                       const DeviceConfig& config = {}) {
  const Matrix4c u = measurement_unitary(setting, config);
  const Matrix4c out = u * rho * u.adjoint();
  return {out(0, 0).real(), out(1, 1).real(), out(2, 2).real(), out(3, 3).real()};
}

inline std::array<double, 4> measurement_probabilities(const DensityMatrix& rho, const MeasurementSetting& setting,
                                                       const DeviceConfig& config = {}) {
  return measurement_probabilities(rho.matrix(), setting, config);
}

/// Rank-one projector measured at `port` (0..3) under `setting`.
inline Matrix4c port_projector(const MeasurementSetting& setting, int port, const DeviceConfig& config = {}) {
  const Matrix4c u = measurement_unitary(setting, config);
  const Ket4 row = u.row(port).adjoint();
  return row * row.adjoint();
}

struct CountRecord {
  MeasurementSetting setting;
  std::array<std::int64_t, 4> coincidences{0, 0, 0, 0};
  double accidentals_estimate = 0.0;  // expected accidentals per port pair
  double integration_time = 0.0;      // s

  std::int64_t total() const { return coincidences[0] + coincidences[1] + coincidences[2] + coincidences[3]; }
};

/// Detected pair rate (all port pairs), before accidentals.
inline double coincidence_rate(const DeviceConfig& config, const PumpParams& pump) {
  const double t = config.per_arm_transmission, eta = config.detector_efficiency;
  return config.rep_rate * 1e6 * pump.pairs_per_pulse * t * t * eta * eta;
}

/// Flat accidental rate per port pair.
inline double accidental_rate_per_port(const DeviceConfig& config, const PumpParams& pump) {
  if (!(config.car > 0.0) || std::isinf(config.car)) return 0.0;
  return coincidence_rate(config, pump) / (4.0 * config.car);
}

/// Expected counts per port pair for one setting.
inline std::array<double, 4> expected_counts(const DensityMatrix& rho, const MeasurementSetting& setting,
                                             const DeviceConfig& config, const PumpParams& pump,
                                             double integration_time) {
  const auto p = measurement_probabilities(rho, setting, config);
  const double signal = coincidence_rate(config, pump) * integration_time;
  const double acc = accidental_rate_per_port(config, pump) * integration_time;
  const double eps = config.multipair_noise;
  std::array<double, 4> mean{};
  for (int k = 0; k < 4; ++k) mean[static_cast<std::size_t>(k)] = signal * ((1.0 - eps) * std::max(0.0, p[static_cast<std::size_t>(k)]) + 0.25 * eps) + acc;
  return mean;
}

/// Independent Poisson draws around expected_counts; deterministic per seed.
inline CountRecord simulate_counts(const DensityMatrix& rho, const MeasurementSetting& setting,
                                   const DeviceConfig& config, const PumpParams& pump, double integration_time,
                                   std::uint64_t rng_seed) {
  if (integration_time < 0.0) throw DeviceError("integration time must be non-negative");
  const auto mean = expected_counts(rho, setting, config, pump, integration_time);
  std::mt19937_64 rng(rng_seed);
  CountRecord rec;
  rec.setting = setting;
  rec.integration_time = integration_time;
  rec.accidentals_estimate = accidental_rate_per_port(config, pump) * integration_time;
  for (std::size_t k = 0; k < 4; ++k) {
    if (mean[k] <= 0.0) continue;
    std::poisson_distribution<std::int64_t> draw(mean[k]);
    rec.coincidences[k] = draw(rng);
  }
  return rec;
}

/// Per-arm transmission (excluding detectors) that yields `target_rate`
/// coincidences per second.
inline double back_solve_transmission(double target_rate, const DeviceConfig& config, const PumpParams& pump) {
  const double per_pair = target_rate / (config.rep_rate * 1e6 * pump.pairs_per_pulse);
  const double eta = config.detector_efficiency;
  if (!(per_pair > 0.0 && eta > 0.0)) throw DeviceError("cannot back-solve transmission");
  return std::sqrt(per_pair) / eta;
}

inline double to_db(double ratio) { return 10.0 * std::log10(ratio); }

/// Periodic Lorentzian drop filter with a finite extinction floor.
inline double filter_transmission(const DeviceConfig& config, double nu_offset) {
  const double fsr = config.filter_fsr;
  const double wrapped = nu_offset - fsr * std::round(nu_offset / fsr);
  const double x = 2.0 * wrapped / config.filter_bandwidth;
  const double floor = std::pow(10.0, -config.filter_selectivity / 10.0);
  return std::max(1.0 / (1.0 + x * x), floor);
}

// ---- count record CSV ------------------------------------------------------
// Columns: theta_sy, theta_sz, theta_iy, theta_iz, c00, c01, c10, c11, t, acc.
// Readers also accept the first nine columns alone (acc = 0).

inline void write_counts_csv(const std::vector<CountRecord>& records, std::ostream& os) {
  os.precision(17);
  os << "theta_sy,theta_sz,theta_iy,theta_iz,c00,c01,c10,c11,t,acc\n";
  for (const auto& r : records) {
    os << r.setting.theta_sy << ',' << r.setting.theta_sz << ',' << r.setting.theta_iy << ',' << r.setting.theta_iz;
    for (auto c : r.coincidences) os << ',' << c;
    os << ',' << r.integration_time << ',' << r.accidentals_estimate << '\n';
  }
}

inline std::vector<CountRecord> read_counts_csv(std::istream& is) {
  std::string line;
  std::vector<CountRecord> out;
  if (!std::getline(is, line)) throw DeviceError("empty count CSV");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> v;
    while (std::getline(ss, cell, ',')) v.push_back(cell);
    if (v.size() != 9 && v.size() != 10)
      throw DeviceError("count CSV line " + std::to_string(lineno) + ": expected 9 or 10 columns");
    CountRecord r;
    try {
      r.setting = {std::stod(v[0]), std::stod(v[1]), std::stod(v[2]), std::stod(v[3])};
      for (std::size_t k = 0; k < 4; ++k) {
        r.coincidences[k] = std::stoll(v[4 + k]);
        if (r.coincidences[k] < 0) throw DeviceError("negative count");
      }
      r.integration_time = std::stod(v[8]);
      r.accidentals_estimate = v.size() == 10 ? std::stod(v[9]) : 0.0;
    } catch (const std::logic_error&) {
      throw DeviceError("count CSV line " + std::to_string(lineno) + ": unparseable value");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace pathent

#endif  // PATHENT_DEVICE_HPP

// Bell-CHSH evaluation on two-qubit states.

#ifndef PATHENT_BELL_HPP
#define PATHENT_BELL_HPP

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/SVD>
#include <json.hpp>

#include "device.hpp"
#include "qstate.hpp"

namespace pathent {

/// One qubit's analysis setting. The measured observable at port 0 vs 1 is
/// n.sigma with n = (-sin ty cos tz, sin ty sin tz, cos ty).
struct Direction {
  double theta_y = 0.0;
  double theta_z = 0.0;
};

struct ChshSettings {
  Direction a, a_prime;  // signal
  Direction b, b_prime;  // idler
};

struct ChshResult {
  double s_value = 0.0;
  double standard_error = 0.0;
  std::array<double, 4> correlators{};  // E(a,b), E(a,b'), E(a',b), E(a',b')
  bool violated() const { return s_value > 2.0; }
};

inline constexpr double kTsirelson = 2.8284271247461903;

inline MeasurementSetting combine(const Direction& s, const Direction& i) {
  return {s.theta_y, s.theta_z, i.theta_y, i.theta_z};
}

/// Z, X on the signal; (Z+X)/sqrt2, (Z-X)/sqrt2 on the idler. The signal
/// phase shifter undoes the entangled phase `theta` of the state.
inline ChshSettings canonical_chsh_settings(double theta = 0.0) {
  return {{0.0, 0.0 - theta}, {-0.5 * kPi, 0.0 - theta}, {-0.25 * kPi, 0.0}, {0.25 * kPi, 0.0}};
}

inline double chsh_model(double beta, double sigma_mag) {
  return std::sqrt(2.0) * (1.0 + 2.0 * sigma_mag * std::sqrt(beta) * std::sqrt(1.0 - beta));
}

inline double correlator(const std::array<double, 4>& p) { return p[0] - p[1] - p[2] + p[3]; }

inline double correlator(const Matrix4c& rho, const MeasurementSetting& setting, const DeviceConfig& config = {}) {
  return correlator(measurement_probabilities(rho, setting, config));
}

inline std::array<MeasurementSetting, 4> chsh_measurements(const ChshSettings& s) {
  return {combine(s.a, s.b), combine(s.a, s.b_prime), combine(s.a_prime, s.b), combine(s.a_prime, s.b_prime)};
}

inline double chsh_combination(const std::array<double, 4>& e) { return e[0] + e[1] + e[2] - e[3]; }

inline ChshResult chsh_fixed_settings(const Matrix4c& rho, const ChshSettings& settings,
                                      const DeviceConfig& config = {}) {
  ChshResult r;
  const auto m = chsh_measurements(settings);
  for (std::size_t k = 0; k < 4; ++k) r.correlators[k] = correlator(rho, m[k], config);
  r.s_value = chsh_combination(r.correlators);
  return r;
}

inline ChshResult chsh_fixed_settings(const DensityMatrix& rho, const ChshSettings& settings,
                                      const DeviceConfig& config = {}) {
  return chsh_fixed_settings(rho.matrix(), settings, config);
}

/// T_ij = Tr(rho sigma_i (x) sigma_j), i, j in {x, y, z}.
inline Eigen::Matrix3d correlation_matrix(const Matrix4c& rho) {
  const std::array<Matrix2c, 3> s{pauli::x(), pauli::y(), pauli::z()};
  Eigen::Matrix3d t;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t(i, j) = (rho * tensor(s[static_cast<std::size_t>(i)], s[static_cast<std::size_t>(j)])).trace().real();
  return t;
}

/// Maximum CHSH value over all settings: 2 sqrt(t1^2 + t2^2) from the two
/// largest singular values of the correlation matrix.
inline double chsh_optimal(const Matrix4c& rho) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(correlation_matrix(rho));
  const auto sv = svd.singularValues();
  return 2.0 * std::sqrt(sv(0) * sv(0) + sv(1) * sv(1));
}

inline double chsh_optimal(const DensityMatrix& rho) { return chsh_optimal(rho.matrix()); }

/// Fringe visibility of the entangled phase for the balance/overlap state.
inline double visibility_from_state(double beta, double sigma_mag) {
  return 2.0 * sigma_mag * std::sqrt(beta) * std::sqrt(1.0 - beta);
}

enum class SConvention {
  additive,        // S = sqrt2 (1 + v)
  multiplicative,  // S = 2 sqrt2 v, isotropic noise
};

inline SConvention parse_s_convention(const std::string& name) {
  if (name == "additive") return SConvention::additive;
  if (name == "multiplicative") return SConvention::multiplicative;
  throw std::invalid_argument("unknown S convention '" + name + "' (expected additive or multiplicative)");
}

inline std::string to_string(SConvention c) { return c == SConvention::additive ? "additive" : "multiplicative"; }

inline double s_from_visibility(double v, SConvention convention) {
  switch (convention) {
    case SConvention::additive:
      return std::sqrt(2.0) * (1.0 + v);
    case SConvention::multiplicative:
      return kTsirelson * v;
  }
  throw std::invalid_argument("unknown S convention");
}

inline nlohmann::json to_json(const Direction& d) { return {{"theta_y", d.theta_y}, {"theta_z", d.theta_z}}; }

/// Settings, correlators, S, its standard error, and the violation expressed
/// in standard errors and as a fraction of the maximal quantum excess.
inline nlohmann::json chsh_report(const ChshResult& r, const ChshSettings& s) {
  nlohmann::json j;
  j["settings"] = {{"a", to_json(s.a)}, {"a_prime", to_json(s.a_prime)}, {"b", to_json(s.b)}, {"b_prime", to_json(s.b_prime)}};
  j["correlators"] = r.correlators;
  j["s"] = r.s_value;
  j["standard_error"] = r.standard_error;
  j["violated"] = r.violated();
  j["violation_fraction"] = (r.s_value - 2.0) / (kTsirelson - 2.0);
  j["violation_sigmas"] = r.standard_error > 0.0 ? nlohmann::json((r.s_value - 2.0) / r.standard_error) : nlohmann::json();
  return j;
}

}  // namespace pathent

#endif  // PATHENT_BELL_HPP

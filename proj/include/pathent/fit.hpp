// Regression: sinusoidal fringes and interferometer phase-voltage
// calibration.

#ifndef PATHENT_FIT_HPP
#define PATHENT_FIT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "detail/levenberg_marquardt.hpp"
#include "montecarlo.hpp"
#include "qstate.hpp"
#include "source.hpp"

namespace pathent {

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Without count_errors the fit is ordinary least squares. Raw counts
/// (`poisson`) take their variance from the fitted curve; other data take it
/// from the residual scatter. Weighting by observed sqrt(c) is deliberately
/// not the default: it biases the visibility upward when troughs hold few
/// counts. `background` is a known flat level inside every count (the
/// accidentals); offset and visibility then refer to the counts above it.
struct FringeData {
  std::vector<double> phases;  // rad
  std::vector<double> counts;
  std::optional<std::vector<double>> count_errors;
  bool poisson = true;
  double background = 0.0;
};

/// c(theta) = background + offset * (1 + visibility * cos(theta - phase0))
struct FringeFit {
  double offset = 0.0;
  double amplitude = 0.0;  // offset * visibility
  double phase0 = 0.0;
  double visibility = 0.0;
  double offset_err = 0.0;
  double amplitude_err = 0.0;
  double phase0_err = 0.0;
  double visibility_err = 0.0;
  double residual_variance = 0.0;  // chi^2 / dof: weighted, Pearson (Poisson) or s^2
  bool phase_defined = true;
};

/// Supplied errors give a weighted fit whose covariance is only inflated
/// when the residuals exceed them, likewise for the Poisson variance of raw
/// counts; other unweighted data scale by s^2.
inline FringeFit fit_fringe(const FringeData& data) {
  const std::size_t n = data.phases.size();
  if (n != data.counts.size()) throw FitError("phases and counts differ in length");
  if (data.count_errors && data.count_errors->size() != n) throw FitError("count errors differ in length");
  if (n < 5) throw FitError("a fringe needs at least 5 points");
  const auto [lo, hi] = std::minmax_element(data.phases.begin(), data.phases.end());
  if (*hi - *lo < kPi - 1e-12) throw FitError("fringe phases must span at least pi");

  // c = a + b cos(theta) + d sin(theta) is linear; its least-squares solution
  // is the global optimum of the sinusoid model.
  Eigen::MatrixXd design(static_cast<Eigen::Index>(n), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n)), w(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    design(i, 0) = 1.0;
    design(i, 1) = std::cos(data.phases[k]);
    design(i, 2) = std::sin(data.phases[k]);
    y(i) = data.counts[k];
    double sigma = 1.0;
    if (data.count_errors) {
      sigma = (*data.count_errors)[k];
      if (!(sigma > 0.0)) throw FitError("count errors must be positive");
    }
    w(i) = 1.0 / (sigma * sigma);
  }
  const Eigen::MatrixXd normal = design.transpose() * w.asDiagonal() * design;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  if (lu.rank() < 3) throw FitError("singular normal equations");
  const Eigen::Vector3d beta = lu.solve(design.transpose() * w.asDiagonal() * y);
  const Eigen::VectorXd fitted = design * beta;
  const Eigen::VectorXd resid = y - fitted;
  const double dof = static_cast<double>(n) - 3.0;
  const Eigen::Matrix3d inv = lu.inverse();
  double scale = 0.0;
  Eigen::Matrix3d cov;
  if (data.count_errors) {
    scale = dof > 0.0 ? resid.dot(w.asDiagonal() * resid) / dof : 0.0;
    cov = inv * std::max(1.0, scale);
  } else if (data.poisson) {
    // Sandwich covariance of the OLS estimate under Poisson variance.
    Eigen::VectorXd var(static_cast<Eigen::Index>(n));
    double pearson = 0.0;
    for (Eigen::Index i = 0; i < var.size(); ++i) {
      var(i) = std::max(fitted(i), 1.0);
      pearson += resid(i) * resid(i) / var(i);
    }
    scale = dof > 0.0 ? pearson / dof : 0.0;
    cov = inv * design.transpose() * var.asDiagonal() * design * inv * std::max(1.0, scale);
  } else {
    scale = dof > 0.0 ? resid.squaredNorm() / dof : 0.0;
    cov = inv * scale;
  }

  const double a = beta(0) - data.background, b = beta(1), d = beta(2);
  if (!(a > 0.0)) throw FitError("fringe offset is not above the background");
  const double amp = std::hypot(b, d);
  FringeFit f;
  f.offset = a;
  f.amplitude = amp;
  f.visibility = amp / a;
  f.residual_variance = scale;
  f.offset_err = std::sqrt(cov(0, 0));
  f.phase_defined = amp > 1e-9 * std::abs(a);
  if (f.phase_defined) {
    f.phase0 = std::atan2(d, b);
    const Eigen::Vector3d g_amp(0.0, b / amp, d / amp);
    const Eigen::Vector3d g_vis(-amp / (a * a), b / (amp * a), d / (amp * a));
    const Eigen::Vector3d g_phi(0.0, -d / (amp * amp), b / (amp * amp));
    f.amplitude_err = std::sqrt(g_amp.dot(cov * g_amp));
    f.visibility_err = std::sqrt(g_vis.dot(cov * g_vis));
    f.phase0_err = std::sqrt(g_phi.dot(cov * g_phi));
  } else {
    f.phase0 = std::numeric_limits<double>::quiet_NaN();
    f.amplitude_err = std::sqrt(0.5 * (cov(1, 1) + cov(2, 2)));
    f.visibility_err = f.amplitude_err / a;
    f.phase0_err = std::numeric_limits<double>::quiet_NaN();
  }
  return f;
}

/// `n` evenly spaced phases over [0, 2 pi).
inline std::vector<double> fringe_phases(int n) {
  std::vector<double> p(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) p[static_cast<std::size_t>(k)] = 2.0 * kPi * k / n;
  return p;
}

/// Poisson-noised fringe with mean counts mean_counts * (1 + v cos(theta - phase0)).
inline FringeData synthetic_fringe(double visibility, double mean_counts, const std::vector<double>& phases,
                                   std::uint64_t seed, double phase0 = 0.0) {
  std::mt19937_64 rng(seed);
  FringeData d;
  d.phases = phases;
  for (double th : phases) {
    const double mu = mean_counts * (1.0 + visibility * std::cos(th - phase0));
    double c = 0.0;
    if (mu > 0.0) {
      std::poisson_distribution<std::int64_t> draw(mu);
      c = static_cast<double>(draw(rng));
    }
    d.counts.push_back(c);
  }
  return d;
}

struct DetuningFringe {
  double detuning = 0.0;
  double predicted = 0.0;
  double visibility = 0.0;
  double visibility_err = 0.0;
};

struct DetuningFringeOptions {
  double mean_counts = 100.0;  // per phase point, fringe average
  int phase_points = 16;
  std::uint64_t seed = 7;
};

/// Simulates and fits one fringe per sweep point.
inline std::vector<DetuningFringe> visibility_vs_detuning(const std::vector<SweepPoint>& sweep,
                                                          const DetuningFringeOptions& opt = {}) {
  if (sweep.size() < 5) throw FitError("a detuning sweep needs at least 5 points");
  const auto phases = fringe_phases(opt.phase_points);
  std::vector<DetuningFringe> out;
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    const auto fit = fit_fringe(synthetic_fringe(sweep[k].visibility, opt.mean_counts, phases, derive_seed(opt.seed, k)));
    out.push_back({sweep[k].detuning, sweep[k].visibility, fit.visibility, fit.visibility_err});
  }
  return out;
}

// ---- phase-voltage calibration ---------------------------------------------

struct HeaterSweep {
  std::vector<double> voltages;
  std::vector<double> intensities;
};

/// I(V) = scale * [r^2 + (1-r)^2 + 2 r (1-r) cos(theta0 + kappa V^2)]
/// The curve is unchanged under r -> 1-r and (theta0, kappa) -> (-theta0,
/// -kappa); reported values use r >= 1/2 and kappa >= 0.
struct HeaterCalibration {
  double theta0 = 0.0;
  double kappa = 0.0;
  double reflectivity = 0.5;
  double scale = 1.0;
  double residual_rms = 0.0;
  bool degenerate = false;  // no resolvable modulation: theta0, kappa, r unidentified

  double phase(double voltage) const { return theta0 + kappa * voltage * voltage; }
  double intensity(double voltage) const {
    const double r = reflectivity;
    return scale * (r * r + (1.0 - r) * (1.0 - r) + 2.0 * r * (1.0 - r) * std::cos(phase(voltage)));
  }
  /// Smallest non-negative voltage giving `target` phase (mod 2 pi).
  double voltage_for(double target) const {
    if (degenerate || !(kappa > 0.0)) throw FitError("heater is not calibrated");
    double d = std::fmod(target - theta0, 2.0 * kPi);
    if (d < 0.0) d += 2.0 * kPi;
    return std::sqrt(d / kappa);
  }
};

struct CalibrationModel {
  std::vector<HeaterCalibration> heaters;
};

namespace detail {

struct LinearSinusoid {
  double a = 0.0, b = 0.0, c = 0.0, sse = 0.0;
};

// Least squares for I = a + b cos(kappa u) + c sin(kappa u) at fixed kappa.
inline LinearSinusoid fit_at_kappa(const std::vector<double>& u, const std::vector<double>& y, double kappa) {
  const auto n = static_cast<Eigen::Index>(u.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd v(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    x(k, 0) = 1.0;
    x(k, 1) = std::cos(kappa * u[static_cast<std::size_t>(k)]);
    x(k, 2) = std::sin(kappa * u[static_cast<std::size_t>(k)]);
    v(k) = y[static_cast<std::size_t>(k)];
  }
  const Eigen::Vector3d beta = x.colPivHouseholderQr().solve(v);
  return {beta(0), beta(1), beta(2), (v - x * beta).squaredNorm()};
}

}  // namespace detail

/// Fits one heater sweep: a profile scan over kappa seeds a
/// Levenberg-Marquardt refinement of (a, b, c, kappa).
inline HeaterCalibration calibrate_heater(const HeaterSweep& sweep, double modulation_threshold = 0.05) {
  const std::size_t n = sweep.voltages.size();
  if (n != sweep.intensities.size()) throw FitError("voltages and intensities differ in length");
  if (n < 10) throw FitError("a heater sweep needs at least 10 points");
  std::vector<double> u(n);
  for (std::size_t k = 0; k < n; ++k) u[k] = sweep.voltages[k] * sweep.voltages[k];
  const auto [umin, umax] = std::minmax_element(u.begin(), u.end());
  const double range = *umax - *umin;
  if (!(range > 0.0)) throw FitError("heater sweep has no voltage range");
  std::vector<double> us = u;
  std::sort(us.begin(), us.end());
  double min_gap = range;
  for (std::size_t k = 1; k < n; ++k)
    if (us[k] - us[k - 1] > 0.0) min_gap = std::min(min_gap, us[k] - us[k - 1]);
  double max_gap = 0.0;
  for (std::size_t k = 1; k < n; ++k) max_gap = std::max(max_gap, us[k] - us[k - 1]);

  // At least half a period across the sweep, at most pi per largest gap.
  const double k_lo = kPi / range;
  const double k_hi = std::max(k_lo * 2.0, kPi / max_gap);
  const double k_step = 0.02 / range;
  double best_k = k_lo;
  detail::LinearSinusoid best;
  best.sse = std::numeric_limits<double>::infinity();
  for (double k = k_lo; k <= k_hi; k += k_step) {
    const auto fit = detail::fit_at_kappa(u, sweep.intensities, k);
    if (fit.sse < best.sse) {
      best = fit;
      best_k = k;
    }
  }

  using Vec = Eigen::VectorXd;
  auto residuals = [&](const Vec& p) {
    Vec r(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k)
      r(static_cast<Eigen::Index>(k)) = p(0) + p(1) * std::cos(p(3) * u[k]) + p(2) * std::sin(p(3) * u[k]) - sweep.intensities[k];
    return r;
  };
  Vec p0(4);
  p0 << best.a, best.b, best.c, best_k;
  const auto lm = detail::levenberg_marquardt(residuals, p0);
  if (!lm.converged) throw FitError("calibration fit did not converge (kappa " + std::to_string(lm.params(3)) + ")");

  double a = lm.params(0), b = lm.params(1), c = lm.params(2), kappa = lm.params(3);
  if (kappa < 0.0) {
    kappa = -kappa;
    c = -c;
  }
  HeaterCalibration h;
  h.kappa = kappa;
  h.residual_rms = std::sqrt(lm.objective / static_cast<double>(n));
  const double m = std::hypot(b, c);
  const double q = a > 0.0 ? m / a : 0.0;
  if (!(a > 0.0) || q < modulation_threshold) {
    h.degenerate = true;
    h.scale = a;
    h.theta0 = std::numeric_limits<double>::quiet_NaN();
    h.kappa = 0.0;
    return h;
  }
  // q = 2x / (1 - 2x) with x = r (1 - r).
  const double qc = std::min(q, 1.0);
  const double x = qc / (2.0 * (1.0 + qc));
  h.reflectivity = 0.5 * (1.0 + std::sqrt(std::max(0.0, 1.0 - 4.0 * x)));
  h.scale = a / (1.0 - 2.0 * x);
  h.theta0 = std::atan2(-c, b);
  return h;
}

inline CalibrationModel calibrate_phase_voltage(const std::vector<HeaterSweep>& sweeps) {
  CalibrationModel model;
  for (const auto& s : sweeps) model.heaters.push_back(calibrate_heater(s));
  return model;
}

/// Noisy synthetic sweep of `truth` over [0, v_max] with Gaussian noise of
/// relative size `noise` (times the scale).
inline HeaterSweep synthetic_heater_sweep(const HeaterCalibration& truth, double v_max, int points, double noise,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  HeaterSweep s;
  for (int k = 0; k < points; ++k) {
    const double v = v_max * k / (points - 1);
    s.voltages.push_back(v);
    s.intensities.push_back(truth.intensity(v) + noise * truth.scale * normal(rng));
  }
  return s;
}

// ---- export -------------------------------------------------------------------

/// Plot-ready (x, y, yerr) rows.
inline void write_xy_csv(std::ostream& os, const std::string& header, const std::vector<double>& x,
                         const std::vector<double>& y, const std::vector<double>& yerr) {
  os.precision(17);
  os << header << '\n';
  for (std::size_t k = 0; k < x.size(); ++k) os << x[k] << ',' << y[k] << ',' << (k < yerr.size() ? yerr[k] : 0.0) << '\n';
}

inline nlohmann::json to_json(const FringeFit& f) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  return {{"offset", f.offset},          {"offset_err", f.offset_err},       {"amplitude", f.amplitude},
          {"amplitude_err", f.amplitude_err}, {"phase0", num(f.phase0)},   {"phase0_err", num(f.phase0_err)},
          {"visibility", f.visibility},  {"visibility_err", f.visibility_err}, {"residual_variance", f.residual_variance},
          {"phase_defined", f.phase_defined}};
}

inline nlohmann::json to_json(const HeaterCalibration& h) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
  return {{"theta0", num(h.theta0)}, {"kappa", h.kappa}, {"reflectivity", h.reflectivity},
          {"scale", h.scale},        {"residual_rms", h.residual_rms}, {"degenerate", h.degenerate}};
}

}  // namespace pathent

#endif  // PATHENT_FIT_HPP

// Over-complete two-qubit state tomography: 36 projectors from 9 hardware
// settings, probability estimation from coincidence counts, and a
// constrained least-squares reconstruction with Monte-Carlo error bars.

#ifndef PATHENT_TOMO_HPP
#define PATHENT_TOMO_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "bell.hpp"
#include "detail/levenberg_marquardt.hpp"
#include "device.hpp"
#include "montecarlo.hpp"
#include "qstate.hpp"

namespace pathent {

class TomographyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when every start exhausts its iteration budget; carries the best
/// iterate found.
class ConvergenceError : public TomographyError {
 public:
  ConvergenceError(const std::string& what, Matrix4c best, double residual)
      : TomographyError(what), best_(std::move(best)), residual_(residual) {}
  const Matrix4c& best_iterate() const { return best_; }
  double residual() const { return residual_; }

 private:
  Matrix4c best_;
  double residual_;
};

/// The six single-qubit projection states, paired by measurement basis.
enum class Label { zero, one, plus, minus, plus_i, minus_i };

inline constexpr std::array<Label, 6> kLabels{Label::zero, Label::one, Label::plus, Label::minus, Label::plus_i, Label::minus_i};

inline std::string to_string(Label l) {
  switch (l) {
    case Label::zero: return "0";
    case Label::one: return "1";
    case Label::plus: return "+";
    case Label::minus: return "-";
    case Label::plus_i: return "+i";
    case Label::minus_i: return "-i";
  }
  return "?";
}

inline Ket2 label_ket(Label l) {
  switch (l) {
    case Label::zero: return kets::zero();
    case Label::one: return kets::one();
    case Label::plus: return kets::plus();
    case Label::minus: return kets::minus();
    case Label::plus_i: return kets::plus_i();
    case Label::minus_i: return kets::minus_i();
  }
  return kets::zero();
}

inline constexpr std::array<const char*, 3> kBasisNames{"Z", "X", "Y"};

/// (theta_y, theta_z) that sends the first label of `basis` to port 0:
/// Z -> (0, 0), X -> (pi/2, pi), Y -> (pi/2, pi/2).
inline Direction basis_direction(int basis) {
  switch (basis) {
    case 0: return {0.0, 0.0};
    case 1: return {0.5 * kPi, kPi};
    case 2: return {0.5 * kPi, 0.5 * kPi};
    default: throw TomographyError("basis index out of range");
  }
}

struct ProjectorEntry {
  Label signal = Label::zero;
  Label idler = Label::zero;
  MeasurementSetting setting;
  int port = 0;   // 0..3 = (0s0i, 0s1i, 1s0i, 1s1i)
  int basis = 0;  // 0..8 = 3 * signal basis + idler basis
  Matrix4c projector;
};

using ProjectorSet = std::array<ProjectorEntry, 36>;

inline std::string basis_name(int basis) {
  return std::string(kBasisNames[static_cast<std::size_t>(basis / 3)]) + kBasisNames[static_cast<std::size_t>(basis % 3)];
}

inline MeasurementSetting basis_setting(int basis) {
  return combine(basis_direction(basis / 3), basis_direction(basis % 3));
}

/// Entry 6 s + i projects the signal onto label s and the idler onto label i.
inline ProjectorSet projector_set() {
  ProjectorSet set;
  for (int s = 0; s < 6; ++s)
    for (int i = 0; i < 6; ++i) {
      auto& e = set[static_cast<std::size_t>(6 * s + i)];
      e.signal = kLabels[static_cast<std::size_t>(s)];
      e.idler = kLabels[static_cast<std::size_t>(i)];
      e.basis = 3 * (s / 2) + i / 2;
      e.setting = basis_setting(e.basis);
      e.port = 2 * (s % 2) + i % 2;
      e.projector = port_projector(e.setting, e.port);
    }
  return set;
}

inline std::array<MeasurementSetting, 9> tomography_settings() {
  std::array<MeasurementSetting, 9> out;
  for (int b = 0; b < 9; ++b) out[static_cast<std::size_t>(b)] = basis_setting(b);
  return out;
}

/// One simulated count record per tomography setting, seeded per setting
/// from `seed`.
inline std::vector<CountRecord> simulate_tomography(const DensityMatrix& rho, const DeviceConfig& config,
                                                    const PumpParams& pump, double integration_time,
                                                    std::uint64_t seed) {
  std::vector<CountRecord> out;
  out.reserve(9);
  for (int b = 0; b < 9; ++b)
    out.push_back(simulate_counts(rho, basis_setting(b), config, pump, integration_time,
                                  derive_seed(seed, static_cast<std::uint64_t>(b))));
  return out;
}

struct ProbabilityEstimates {
  std::array<double, 36> p{};
  std::array<double, 36> std_error{};
};

/// Exact projector probabilities of `rho`, zero error bars.
inline ProbabilityEstimates ideal_probabilities(const Matrix4c& rho) {
  ProbabilityEstimates est;
  const auto set = projector_set();
  for (std::size_t k = 0; k < 36; ++k) est.p[k] = std::max(0.0, (set[k].projector * rho).trace().real());
  return est;
}

struct EstimationOptions {
  bool subtract_accidentals = true;
  double stderr_scale = 1.0;  // user override on the Poisson error bars
};

namespace detail {

inline double wrap_angle(double a) {
  const double two_pi = 2.0 * kPi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (two_pi - a < 1e-9) a = 0.0;
  return a;
}

inline bool same_setting(const MeasurementSetting& a, const MeasurementSetting& b) {
  auto eq = [](double x, double y) {
    const double d = std::abs(wrap_angle(x) - wrap_angle(y));
    return d < 1e-9 || std::abs(d - 2.0 * kPi) < 1e-9;
  };
  return eq(a.theta_sy, b.theta_sy) && eq(a.theta_sz, b.theta_sz) && eq(a.theta_iy, b.theta_iy) &&
         eq(a.theta_iz, b.theta_iz);
}

}  // namespace detail

/// Sums the records of each of the nine tomography settings; records with
/// other settings are ignored.
inline std::array<CountRecord, 9> group_by_basis(const std::vector<CountRecord>& records) {
  std::array<CountRecord, 9> grouped;
  for (int b = 0; b < 9; ++b) grouped[static_cast<std::size_t>(b)].setting = basis_setting(b);
  for (const auto& r : records)
    for (int b = 0; b < 9; ++b) {
      auto& g = grouped[static_cast<std::size_t>(b)];
      if (!detail::same_setting(r.setting, g.setting)) continue;
      for (std::size_t k = 0; k < 4; ++k) g.coincidences[k] += r.coincidences[k];
      g.accidentals_estimate += r.accidentals_estimate;
      g.integration_time += r.integration_time;
      break;
    }
  return grouped;
}

/// p = (c - accidentals)_+ / basis total, with error bars propagated from
/// Poisson variances of the raw counts.
inline ProbabilityEstimates estimate_probabilities(const std::vector<CountRecord>& records,
                                                   const EstimationOptions& opt = {}) {
  const auto grouped = group_by_basis(records);
  const auto set = projector_set();
  ProbabilityEstimates est;
  for (int b = 0; b < 9; ++b) {
    const auto& g = grouped[static_cast<std::size_t>(b)];
    std::array<double, 4> net{};
    double total = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      const double acc = opt.subtract_accidentals ? g.accidentals_estimate : 0.0;
      net[k] = std::max(0.0, static_cast<double>(g.coincidences[k]) - acc);
      total += net[k];
    }
    if (!(total > 0.0)) throw TomographyError("basis " + basis_name(b) + " has no counts");
    for (std::size_t k = 0; k < 4; ++k) {
      const double p = net[k] / total;
      // d p_k / d c_j = (delta_kj - p_k) / total for unfloored ports.
      double var = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        if (net[j] <= 0.0) continue;
        const double d = ((j == k ? 1.0 : 0.0) - p) / total;
        var += d * d * static_cast<double>(g.coincidences[j]);
      }
      for (std::size_t idx = 0; idx < 36; ++idx)
        if (set[idx].basis == b && set[idx].port == static_cast<int>(k)) {
          est.p[idx] = p;
          est.std_error[idx] = opt.stderr_scale * std::sqrt(var);
        }
    }
  }
  return est;
}

// ---- constrained least squares ---------------------------------------------

/// rho = L L^dagger / Tr(L L^dagger) with L lower-triangular: four real
/// diagonal entries then (re, im) of the six sub-diagonal entries.
class CholeskyParameterisation {
 public:
  static constexpr int kSize = 16;

  static Matrix4c lower(const Eigen::VectorXd& t) {
    Matrix4c l = Matrix4c::Zero();
    for (int d = 0; d < 4; ++d) l(d, d) = t(d);
    int k = 4;
    for (int r = 1; r < 4; ++r)
      for (int c = 0; c < r; ++c, k += 2) l(r, c) = Complex(t(k), t(k + 1));
    return l;
  }

  static Matrix4c density(const Eigen::VectorXd& t) {
    const Matrix4c l = lower(t);
    const Matrix4c m = l * l.adjoint();
    const Matrix4c rho = m / m.trace().real();
    return 0.5 * (rho + rho.adjoint());
  }

  /// Parameters of a full-rank-regularised Cholesky factor of `rho`.
  static Eigen::VectorXd from_density(const Matrix4c& rho, double floor = 1e-6) {
    const Matrix4c reg = (1.0 - floor) * rho + floor * Matrix4c::Identity() / 4.0;
    Eigen::LLT<Matrix4c> llt(0.5 * (reg + reg.adjoint()));
    const Matrix4c l = llt.matrixL();
    Eigen::VectorXd t(kSize);
    for (int d = 0; d < 4; ++d) t(d) = l(d, d).real();
    int k = 4;
    for (int r = 1; r < 4; ++r)
      for (int c = 0; c < r; ++c, k += 2) {
        t(k) = l(r, c).real();
        t(k + 1) = l(r, c).imag();
      }
    return t;
  }
};

struct ClsOptions {
  int starts = 5;  // identity-scaled start plus (starts - 1) random ones
  std::uint64_t seed = 0x5eed;
  detail::LmOptions lm{};
};

struct ClsResult {
  DensityMatrix rho = DensityMatrix::maximally_mixed();
  double objective = 0.0;  // sum_i |P_ex(i) - P_rho(i)|^2 at the optimum
  int iterations = 0;
};

inline double cls_objective(const ProbabilityEstimates& est, const Matrix4c& rho) {
  const auto set = projector_set();
  double f = 0.0;
  for (std::size_t k = 0; k < 36; ++k) {
    const double d = est.p[k] - (set[k].projector * rho).trace().real();
    f += d * d;
  }
  return f;
}

inline ClsResult cls_reconstruct(const ProbabilityEstimates& est, const ClsOptions& opt = {}) {
  const auto set = projector_set();
  using Vec = Eigen::VectorXd;

  auto residuals = [&](const Vec& t) {
    const Matrix4c l = CholeskyParameterisation::lower(t);
    const Matrix4c m = l * l.adjoint();
    const double tau = m.trace().real();
    Vec r(36);
    for (std::size_t k = 0; k < 36; ++k)
      r(static_cast<Eigen::Index>(k)) = (set[k].projector * m).trace().real() / tau - est.p[k];
    return r;
  };

  // dM = E L^dag + L E^dag for the unit entry E = c e_ab, so
  // dTr(Pi M) = 2 Re(c (L^dag Pi)_ba) and dTr(M) = 2 Re(c conj(L_ab)).
  auto jacobian = [&](const Vec& t) {
    const Matrix4c l = CholeskyParameterisation::lower(t);
    const Matrix4c m = l * l.adjoint();
    const double tau = m.trace().real();
    Eigen::MatrixXd jac(36, CholeskyParameterisation::kSize);
    std::array<Matrix4c, 36> lp;
    std::array<double, 36> tr{};
    for (std::size_t k = 0; k < 36; ++k) {
      lp[k] = l.adjoint() * set[k].projector;
      tr[k] = (set[k].projector * m).trace().real();
    }
    auto fill = [&](int col, int a, int b, Complex c) {
      const double dtau = 2.0 * (c * std::conj(l(a, b))).real();
      for (std::size_t k = 0; k < 36; ++k) {
        const double dtr = 2.0 * (c * lp[k](b, a)).real();
        jac(static_cast<Eigen::Index>(k), col) = (dtr * tau - tr[k] * dtau) / (tau * tau);
      }
    };
    for (int d = 0; d < 4; ++d) fill(d, d, d, 1.0);
    int col = 4;
    for (int r = 1; r < 4; ++r)
      for (int c = 0; c < r; ++c, col += 2) {
        fill(col, r, c, 1.0);
        fill(col + 1, r, c, kI);
      }
    return jac;
  };

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  detail::LmResult best;
  best.objective = std::numeric_limits<double>::infinity();
  bool any_converged = false;
  const int starts = std::max(1, opt.starts);
  for (int s = 0; s < starts; ++s) {
    Vec t0 = Vec::Zero(CholeskyParameterisation::kSize);
    if (s == 0) {
      t0.head(4).setConstant(0.5);
    } else {
      for (Eigen::Index k = 0; k < t0.size(); ++k) t0(k) = normal(rng);
    }
    const auto res = detail::levenberg_marquardt(residuals, jacobian, t0, opt.lm);
    any_converged = any_converged || res.converged;
    if (res.objective < best.objective) best = res;
  }
  const Matrix4c rho = CholeskyParameterisation::density(best.params);
  if (!any_converged)
    throw ConvergenceError("constrained least squares did not converge within the iteration budget", rho,
                           best.objective);
  return {DensityMatrix(rho), best.objective, best.iterations};
}

// ---- Monte-Carlo uncertainty ------------------------------------------------

enum class Resampling {
  normal_probabilities,  // perturb each estimate by its error bar
  poisson_counts,        // redraw raw counts and re-estimate
};

struct MonteCarloOptions {
  std::size_t samples = 500;
  std::uint64_t seed = 1;
  Resampling resampling = Resampling::normal_probabilities;
  ClsOptions cls{};
  EstimationOptions estimation{};  // used by count-level resampling
  bool keep_samples = false;
  unsigned threads = 0;
};

struct Metric {
  double value = 0.0;  // from the point reconstruction
  double mean = 0.0;
  double std = 0.0;
};

struct TomoResult {
  DensityMatrix rho_hat = DensityMatrix::maximally_mixed();
  double objective = 0.0;
  Metric fidelity_to_target;
  Metric purity;
  Metric s_optimal;
  Metric s_fixed;  // canonical settings aligned to the reconstructed phase
  std::size_t mc_samples = 0;
  std::vector<double> fidelity_samples, purity_samples, s_optimal_samples, s_fixed_samples;
};

/// Entangled phase of the |00><11| coherence, for aligning CHSH settings.
inline double coherence_phase(const Matrix4c& rho) {
  const Complex c = rho(0, 3);
  return std::abs(c) > 0.0 ? -std::arg(c) : 0.0;
}

namespace detail {

struct SampleMetrics {
  double fidelity = 0.0, purity = 0.0, s_optimal = 0.0, s_fixed = 0.0;
};

inline SampleMetrics metrics(const DensityMatrix& rho, const DensityMatrix& target) {
  return {pathent::fidelity(target, rho), pathent::purity(rho), chsh_optimal(rho),
          chsh_fixed_settings(rho, canonical_chsh_settings(coherence_phase(rho.matrix()))).s_value};
}

inline TomoResult summarise(const ClsResult& point, const DensityMatrix& target,
                            const std::vector<SampleMetrics>& samples, bool keep) {
  TomoResult r;
  r.rho_hat = point.rho;
  r.objective = point.objective;
  r.mc_samples = samples.size();
  const auto pm = metrics(point.rho, target);
  std::vector<double> f, p, so, sf;
  for (const auto& s : samples) {
    f.push_back(s.fidelity);
    p.push_back(s.purity);
    so.push_back(s.s_optimal);
    sf.push_back(s.s_fixed);
  }
  auto metric = [](double v, const std::vector<double>& xs) {
    const auto sp = spread(xs);
    return Metric{v, sp.mean, sp.std};
  };
  r.fidelity_to_target = metric(pm.fidelity, f);
  r.purity = metric(pm.purity, p);
  r.s_optimal = metric(pm.s_optimal, so);
  r.s_fixed = metric(pm.s_fixed, sf);
  if (keep) {
    r.fidelity_samples = std::move(f);
    r.purity_samples = std::move(p);
    r.s_optimal_samples = std::move(so);
    r.s_fixed_samples = std::move(sf);
  }
  return r;
}

}  // namespace detail

/// Point reconstruction plus `samples` reconstructions of normally perturbed
/// probabilities (clipped to [0, 1]).
inline TomoResult monte_carlo(const ProbabilityEstimates& est, const DensityMatrix& target,
                              const MonteCarloOptions& opt = {}) {
  if (opt.samples < 2) throw TomographyError("Monte-Carlo needs at least two samples");
  const auto point = cls_reconstruct(est, opt.cls);
  const auto samples = sample_indexed(
      opt.samples, opt.seed,
      [&](std::size_t, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        ProbabilityEstimates e = est;
        for (std::size_t k = 0; k < 36; ++k) e.p[k] = std::clamp(est.p[k] + est.std_error[k] * normal(rng), 0.0, 1.0);
        return detail::metrics(cls_reconstruct(e, opt.cls).rho, target);
      },
      opt.threads);
  return detail::summarise(point, target, samples, opt.keep_samples);
}

/// As monte_carlo, resampling either probabilities or raw counts per
/// `opt.resampling`.
inline TomoResult monte_carlo(const std::vector<CountRecord>& records, const DensityMatrix& target,
                              const MonteCarloOptions& opt = {}) {
  const auto est = estimate_probabilities(records, opt.estimation);
  if (opt.resampling == Resampling::normal_probabilities) return monte_carlo(est, target, opt);
  if (opt.samples < 2) throw TomographyError("Monte-Carlo needs at least two samples");
  const auto point = cls_reconstruct(est, opt.cls);
  const auto samples = sample_indexed(
      opt.samples, opt.seed,
      [&](std::size_t, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::vector<CountRecord> redrawn = records;
        for (auto& r : redrawn)
          for (auto& c : r.coincidences) {
            if (c <= 0) continue;
            std::poisson_distribution<std::int64_t> draw(static_cast<double>(c));
            c = draw(rng);
          }
        return detail::metrics(cls_reconstruct(estimate_probabilities(redrawn, opt.estimation), opt.cls).rho, target);
      },
      opt.threads);
  return detail::summarise(point, target, samples, opt.keep_samples);
}

inline nlohmann::json to_json(const Metric& m) { return {{"value", m.value}, {"mean", m.mean}, {"std", m.std}}; }

inline nlohmann::json tomography_report(const TomoResult& r, const DensityMatrix& target, bool include_samples = false) {
  nlohmann::json j;
  j["rho_hat"] = to_json(r.rho_hat);
  j["target"] = to_json(target);
  j["objective"] = r.objective;
  j["fidelity"] = to_json(r.fidelity_to_target);
  j["purity"] = to_json(r.purity);
  j["s_optimal"] = to_json(r.s_optimal);
  j["s_fixed"] = to_json(r.s_fixed);
  j["mc_samples"] = r.mc_samples;
  if (include_samples) {
    j["samples"] = {{"fidelity", r.fidelity_samples},
                    {"purity", r.purity_samples},
                    {"s_optimal", r.s_optimal_samples},
                    {"s_fixed", r.s_fixed_samples}};
  }
  return j;
}

/// CHSH from four count records (canonical order ab, ab', a'b, a'b') with
/// the standard error from Poisson resampling of the counts.
inline ChshResult chsh_from_counts(const std::array<CountRecord, 4>& records, std::size_t samples = 500,
                                   std::uint64_t seed = 1, bool subtract_accidentals = true) {
  auto evaluate = [&](const std::array<CountRecord, 4>& recs) {
    std::array<double, 4> e{};
    for (std::size_t k = 0; k < 4; ++k) {
      std::array<double, 4> net{};
      double total = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double acc = subtract_accidentals ? recs[k].accidentals_estimate : 0.0;
        net[j] = std::max(0.0, static_cast<double>(recs[k].coincidences[j]) - acc);
        total += net[j];
      }
      if (!(total > 0.0)) throw TomographyError("CHSH setting " + std::to_string(k) + " has no counts");
      for (auto& x : net) x /= total;
      e[k] = correlator(net);
    }
    return e;
  };
  ChshResult r;
  r.correlators = evaluate(records);
  r.s_value = chsh_combination(r.correlators);
  const auto draws = sample_indexed(samples, seed, [&](std::size_t, std::uint64_t s) {
    std::mt19937_64 rng(s);
    auto redrawn = records;
    for (auto& rec : redrawn)
      for (auto& c : rec.coincidences) {
        if (c <= 0) continue;
        std::poisson_distribution<std::int64_t> draw(static_cast<double>(c));
        c = draw(rng);
      }
    return chsh_combination(evaluate(redrawn));
  });
  r.standard_error = spread(draws).std;
  return r;
}

}  // namespace pathent

#endif  // PATHENT_TOMO_HPP

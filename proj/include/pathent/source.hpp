// Spectral model of the microring pair sources.
//
// All frequencies are GHz offsets on a common axis; the pump laser sits at
// PumpParams::carrier (default 0). A ring's pump resonance sits at
// `center_frequency`, its signal and idler resonances one free spectral range
// above and below. The joint spectral amplitude is
//
//   JSA(ns, ni) ~ l_s(ns) * l_i(ni) * A2(ns + ni)
//
// where l is the Lorentzian field response of the relevant resonance and A2
// the two-pump-photon amplitude, the self-convolution of the intra-cavity
// pump field l_p(v) * alpha(v). Phase matching is taken as flat over one FSR.

#ifndef PATHENT_SOURCE_HPP
#define PATHENT_SOURCE_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <json.hpp>

#include "qstate.hpp"

namespace pathent {

class SourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RingParams {
  double center_frequency = 0.0;  // GHz, pump resonance
  double linewidth_fwhm = 21.0;   // GHz
  double fsr = 800.0;             // GHz

  void validate() const {
    if (!(linewidth_fwhm > 0.0)) throw SourceError("ring linewidth must be positive");
    if (!(fsr > linewidth_fwhm)) throw SourceError("ring FSR must exceed its linewidth");
  }
  double signal_resonance() const { return center_frequency + fsr; }
  double idler_resonance() const { return center_frequency - fsr; }
  RingParams detuned(double delta) const {
    RingParams r = *this;
    r.center_frequency += delta;
    return r;
  }
};

struct PumpParams {
  double pulse_duration = 10.8;  // ps
  double linewidth_fwhm = 40.0;  // GHz, intensity FWHM
  double rep_rate = 51.0;        // MHz
  double pairs_per_pulse = 0.075;
  // Empirical widening of the pump line inside the cavity (self-phase
  // modulation is not modelled). 1.0 leaves the line untouched.
  double broadening = 1.0;
  double carrier = 0.0;  // GHz, laser line on the common frequency axis

  void validate() const {
    if (!std::isfinite(carrier)) throw SourceError("pump carrier must be finite");
    if (!(pulse_duration > 0.0 && linewidth_fwhm > 0.0 && rep_rate > 0.0 && pairs_per_pulse > 0.0 &&
          broadening > 0.0))
      throw SourceError("pump parameters must all be positive");
    if (!(pairs_per_pulse < 1.0)) throw SourceError("pairs per pulse must be well below one");
  }
  double effective_linewidth() const { return linewidth_fwhm * broadening; }
  double time_bandwidth_product() const { return pulse_duration * 1e-12 * linewidth_fwhm * 1e9; }
};

/// Axes of a JSA grid: `n_points` samples spanning center +/- half_width on each axis.
struct GridSpec {
  double signal_center = 0.0;
  double idler_center = 0.0;
  double half_width = 0.0;
  int n_points = 64;
};

struct JsaGrid {
  std::vector<double> signal_freqs;
  std::vector<double> idler_freqs;
  ComplexMatrix amplitudes;  // rows: signal, cols: idler
  bool magnitude_only = false;

  double norm_squared() const { return amplitudes.squaredNorm(); }
  Eigen::MatrixXd density() const { return amplitudes.cwiseAbs2(); }
};

struct SchmidtResult {
  double schmidt_number = 1.0;
  std::vector<double> singular_values;  // descending, sum of squares = 1
  bool lower_bound = false;             // set when computed from magnitudes only
};

inline std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  if (n == 1) {
    v[0] = 0.5 * (lo + hi);
    return v;
  }
  const double step = (hi - lo) / (n - 1);
  for (int k = 0; k < n; ++k) v[static_cast<std::size_t>(k)] = lo + k * step;
  return v;
}

/// Field response of the resonance nearest to `nu`; unity on resonance.
inline Complex cavity_enhancement(const RingParams& ring, double nu) {
  const double order = std::round((nu - ring.center_frequency) / ring.fsr);
  const double nu0 = ring.center_frequency + order * ring.fsr;
  const double half = 0.5 * ring.linewidth_fwhm;
  return half / Complex(half, nu - nu0);
}

/// Transform-limited Gaussian pump amplitude, normalised so that the
/// integral of |alpha|^2 over frequency is one.
inline Complex pump_envelope(const PumpParams& pump, double nu) {
  const double f = pump.effective_linewidth();
  const double ln2 = std::log(2.0);
  const double norm = std::pow(4.0 * ln2 / (kPi * f * f), 0.25);
  const double x = nu - pump.carrier;
  return {norm * std::exp(-2.0 * ln2 * x * x / (f * f)), 0.0};
}

namespace detail {

// Two-pump-photon amplitude A2(Omega) by trapezoidal quadrature. The pump
// Gaussian bounds the integrand to |v| < 4 FWHM (amplitude below 2^-32).
class PumpPairAmplitude {
 public:
  PumpPairAmplitude(const RingParams& ring, const PumpParams& pump) : ring_(ring), pump_(pump) {
    const double f = pump.effective_linewidth();
    const double reach = 4.0 * f;
    const double step = std::min(f, ring.linewidth_fwhm) / 40.0;
    const int n = 2 * static_cast<int>(std::ceil(reach / step)) + 1;
    nodes_ = linspace(pump.carrier - reach, pump.carrier + reach, n);
    step_ = nodes_[1] - nodes_[0];
    field_.resize(nodes_.size());
    for (std::size_t k = 0; k < nodes_.size(); ++k) field_[k] = intracavity(nodes_[k]);
  }

  Complex operator()(double omega) const {
    Complex acc{0.0, 0.0};
    const std::size_t n = nodes_.size();
    for (std::size_t k = 0; k < n; ++k) {
      const double w = (k == 0 || k + 1 == n) ? 0.5 : 1.0;
      acc += w * field_[k] * intracavity(omega - nodes_[k]);
    }
    return acc * step_;
  }

 private:
  Complex intracavity(double nu) const {
    const double half = 0.5 * ring_.linewidth_fwhm;
    const Complex lp = half / Complex(half, nu - ring_.center_frequency);
    return lp * pump_envelope(pump_, nu);
  }

  RingParams ring_;
  PumpParams pump_;
  std::vector<double> nodes_;
  std::vector<Complex> field_;
  double step_ = 0.0;
};

inline void normalise(JsaGrid& g) {
  const double n2 = g.norm_squared();
  if (!(n2 > 0.0)) throw SourceError("JSA grid is identically zero");
  g.amplitudes /= std::sqrt(n2);
}

}  // namespace detail

inline JsaGrid compute_jsa(const RingParams& ring, const PumpParams& pump, const GridSpec& spec) {
  ring.validate();
  pump.validate();
  if (!(spec.half_width > 0.0)) throw SourceError("grid half-width must be positive");
  if (spec.n_points < 16) throw SourceError("JSA grid needs at least 16 points per axis");

  JsaGrid g;
  g.signal_freqs = linspace(spec.signal_center - spec.half_width, spec.signal_center + spec.half_width, spec.n_points);
  g.idler_freqs = linspace(spec.idler_center - spec.half_width, spec.idler_center + spec.half_width, spec.n_points);
  const int n = spec.n_points;
  g.amplitudes.resize(n, n);

  const detail::PumpPairAmplitude a2(ring, pump);
  std::vector<Complex> ls(static_cast<std::size_t>(n)), li(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    ls[static_cast<std::size_t>(k)] = cavity_enhancement(ring, g.signal_freqs[static_cast<std::size_t>(k)]);
    li[static_cast<std::size_t>(k)] = cavity_enhancement(ring, g.idler_freqs[static_cast<std::size_t>(k)]);
  }
  // Both axes share one step, so the frequency sum depends on i + j only.
  std::vector<Complex> by_sum(static_cast<std::size_t>(2 * n - 1));
  const double lo = g.signal_freqs.front() + g.idler_freqs.front();
  const double step = (g.signal_freqs.back() - g.signal_freqs.front()) / (n - 1);
  for (int s = 0; s < 2 * n - 1; ++s) by_sum[static_cast<std::size_t>(s)] = a2(lo + s * step);

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      g.amplitudes(i, j) = ls[static_cast<std::size_t>(i)] * li[static_cast<std::size_t>(j)] *
                           by_sum[static_cast<std::size_t>(i + j)];
  detail::normalise(g);
  return g;
}

/// Grid centred on the ring's own signal/idler resonances.
inline JsaGrid compute_jsa(const RingParams& ring, const PumpParams& pump, double grid_half_width,
                           int n_points = 64) {
  return compute_jsa(ring, pump,
                     GridSpec{ring.signal_resonance(), ring.idler_resonance(), grid_half_width, n_points});
}

inline SchmidtResult schmidt_decompose(const JsaGrid& jsa) {
  const double n2 = jsa.norm_squared();
  if (!(n2 > 0.0)) throw SourceError("cannot decompose an all-zero JSA");
  Eigen::BDCSVD<ComplexMatrix> svd(jsa.amplitudes / std::sqrt(n2));
  SchmidtResult r;
  const auto& sv = svd.singularValues();
  const double total = sv.squaredNorm();
  double sum4 = 0.0;
  for (Eigen::Index k = 0; k < sv.size(); ++k) {
    const double lam = sv(k) / std::sqrt(total);
    r.singular_values.push_back(lam);
    sum4 += lam * lam * lam * lam;
  }
  r.schmidt_number = 1.0 / sum4;
  r.lower_bound = jsa.magnitude_only;
  return r;
}

/// Heralded two-photon interference visibility, 1/K.
inline double hom_visibility(const SchmidtResult& s) { return 1.0 / s.schmidt_number; }

namespace detail {
inline void require_same_axes(const JsaGrid& a, const JsaGrid& b) {
  auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (std::abs(x[k] - y[k]) > 1e-9 * std::max(1.0, std::abs(x[k]))) return false;
    return true;
  };
  if (!same(a.signal_freqs, b.signal_freqs) || !same(a.idler_freqs, b.idler_freqs))
    throw SourceError("JSA grids have mismatched axes");
}
}  // namespace detail

/// Normalised amplitude inner product <a|b>.
inline Complex jsa_overlap(const JsaGrid& a, const JsaGrid& b) {
  detail::require_same_axes(a, b);
  const double na = std::sqrt(a.norm_squared()), nb = std::sqrt(b.norm_squared());
  if (!(na > 0.0 && nb > 0.0)) throw SourceError("cannot overlap an all-zero JSA");
  const Complex s = (a.amplitudes.conjugate().cwiseProduct(b.amplitudes)).sum() / (na * nb);
  return s;
}

/// Overlap of the square-rooted joint spectral densities (phase-blind).
inline double density_overlap(const JsaGrid& a, const JsaGrid& b) {
  detail::require_same_axes(a, b);
  const double na = std::sqrt(a.norm_squared()), nb = std::sqrt(b.norm_squared());
  if (!(na > 0.0 && nb > 0.0)) throw SourceError("cannot overlap an all-zero JSA");
  return (a.amplitudes.cwiseAbs().cwiseProduct(b.amplitudes.cwiseAbs())).sum() / (na * nb);
}

struct SweepPoint {
  double detuning = 0.0;
  double overlap = 0.0;  // |sigma|
  double visibility = 0.0;
};

/// Shift ring_a by each detuning, overlap its JSA with ring_b's on a common
/// grid wide enough for both, and predict the fringe visibility
/// max(ideal_visibility * |sigma|, background_floor).
///
/// `ideal_visibility` is the zero-detuning value for the configured balance
/// and white-noise level (see bell::visibility_from_state).
inline std::vector<SweepPoint> detuning_sweep(const RingParams& ring_a, const RingParams& ring_b,
                                              const PumpParams& pump, const std::vector<double>& detunings,
                                              double background_floor, double ideal_visibility = 1.0,
                                              double base_half_width = 0.0, int base_points = 64) {
  if (base_half_width <= 0.0) base_half_width = 3.0 * ring_b.linewidth_fwhm;
  const double step = 2.0 * base_half_width / (base_points - 1);
  std::vector<SweepPoint> out;
  out.reserve(detunings.size());
  for (double delta : detunings) {
    if (!std::isfinite(delta)) throw SourceError("detuning must be finite");
    const RingParams shifted = ring_a.detuned(delta);
    const double offset = 0.5 * (shifted.center_frequency - ring_b.center_frequency);
    const double half = base_half_width + std::abs(offset);
    const int n = std::max(base_points, static_cast<int>(std::ceil(2.0 * half / step)) + 1);
    const GridSpec spec{ring_b.signal_resonance() + offset, ring_b.idler_resonance() + offset, half, n};
    // Each source is pumped on its own pump resonance, so sigma compares the
    // emitted lineshapes alone. A ring walking off a fixed laser mostly loses
    // brightness, which belongs in the balance beta rather than here.
    PumpParams pump_a = pump, pump_b = pump;
    pump_a.carrier = shifted.center_frequency;
    pump_b.carrier = ring_b.center_frequency;
    const double s = std::abs(jsa_overlap(compute_jsa(shifted, pump_a, spec), compute_jsa(ring_b, pump_b, spec)));
    out.push_back({delta, s, std::max(ideal_visibility * s, background_floor)});
  }
  return out;
}

// ---- import / export ------------------------------------------------------

inline void write_jsa_csv(const JsaGrid& g, std::ostream& os) {
  os.precision(17);
  os << "nu_s,nu_i,re,im\n";
  for (std::size_t i = 0; i < g.signal_freqs.size(); ++i)
    for (std::size_t j = 0; j < g.idler_freqs.size(); ++j) {
      const Complex a = g.amplitudes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      os << g.signal_freqs[i] << ',' << g.idler_freqs[j] << ',' << a.real() << ',' << a.imag() << '\n';
    }
}

/// Reads rows of (nu_s, nu_i, re, im), or (nu_s, nu_i, value) for
/// magnitude-only data. A three-column file whose header names the value
/// column `jsd` holds densities and is square-rooted on import.
inline JsaGrid read_jsa_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw SourceError("empty JSA CSV");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  const std::size_t cols = header.size();
  if (cols != 3 && cols != 4) throw SourceError("JSA CSV needs 3 or 4 columns");
  const bool density = cols == 3 && header[2].find("jsd") != std::string::npos;

  struct Row {
    double s, i, re, im;
  };
  std::vector<Row> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != cols) throw SourceError("ragged JSA CSV row: " + line);
    double re = v[2];
    if (density) re = std::sqrt(std::max(0.0, re));
    rows.push_back({v[0], v[1], re, cols == 4 ? v[3] : 0.0});
  }

  JsaGrid g;
  g.magnitude_only = cols == 3;
  auto axis = [&](auto pick) {
    std::vector<double> a;
    for (const auto& r : rows) a.push_back(pick(r));
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    return a;
  };
  g.signal_freqs = axis([](const Row& r) { return r.s; });
  g.idler_freqs = axis([](const Row& r) { return r.i; });
  const auto ns = static_cast<Eigen::Index>(g.signal_freqs.size());
  const auto ni = static_cast<Eigen::Index>(g.idler_freqs.size());
  if (rows.size() != static_cast<std::size_t>(ns * ni)) throw SourceError("JSA CSV is not a full grid");
  g.amplitudes = ComplexMatrix::Zero(ns, ni);
  for (const auto& r : rows) {
    const auto i = std::lower_bound(g.signal_freqs.begin(), g.signal_freqs.end(), r.s) - g.signal_freqs.begin();
    const auto j = std::lower_bound(g.idler_freqs.begin(), g.idler_freqs.end(), r.i) - g.idler_freqs.begin();
    g.amplitudes(i, j) = Complex(r.re, r.im);
  }
  detail::normalise(g);
  return g;
}

inline nlohmann::json to_json(const JsaGrid& g) {
  nlohmann::json re = nlohmann::json::array(), im = nlohmann::json::array();
  for (Eigen::Index i = 0; i < g.amplitudes.rows(); ++i) {
    std::vector<double> rr, ir;
    for (Eigen::Index j = 0; j < g.amplitudes.cols(); ++j) {
      rr.push_back(g.amplitudes(i, j).real());
      ir.push_back(g.amplitudes(i, j).imag());
    }
    re.push_back(rr);
    im.push_back(ir);
  }
  return {{"signal_freqs", g.signal_freqs},
          {"idler_freqs", g.idler_freqs},
          {"re", re},
          {"im", im},
          {"magnitude_only", g.magnitude_only}};
}

/// Accepts {"signal_freqs", "idler_freqs", "re", "im"} or, for
/// magnitude-only grids, "magnitude" in place of re/im.
inline JsaGrid jsa_from_json(const nlohmann::json& j) {
  JsaGrid g;
  g.signal_freqs = j.at("signal_freqs").get<std::vector<double>>();
  g.idler_freqs = j.at("idler_freqs").get<std::vector<double>>();
  const auto ns = static_cast<Eigen::Index>(g.signal_freqs.size());
  const auto ni = static_cast<Eigen::Index>(g.idler_freqs.size());
  for (std::size_t k = 1; k < g.signal_freqs.size(); ++k)
    if (!(g.signal_freqs[k] > g.signal_freqs[k - 1])) throw SourceError("signal axis not increasing");
  for (std::size_t k = 1; k < g.idler_freqs.size(); ++k)
    if (!(g.idler_freqs[k] > g.idler_freqs[k - 1])) throw SourceError("idler axis not increasing");
  g.amplitudes = ComplexMatrix::Zero(ns, ni);
  const bool mag = j.contains("magnitude");
  g.magnitude_only = mag || j.value("magnitude_only", false);
  const auto& re = mag ? j.at("magnitude") : j.at("re");
  if (static_cast<Eigen::Index>(re.size()) != ns) throw SourceError("JSA JSON row count mismatch");
  for (Eigen::Index i = 0; i < ns; ++i) {
    if (static_cast<Eigen::Index>(re[i].size()) != ni) throw SourceError("JSA JSON column count mismatch");
    for (Eigen::Index jj = 0; jj < ni; ++jj) {
      const double im = mag ? 0.0 : j.at("im")[i][jj].get<double>();
      g.amplitudes(i, jj) = Complex(re[i][jj].get<double>(), im);
    }
  }
  detail::normalise(g);
  return g;
}

}  // namespace pathent

#endif  // PATHENT_SOURCE_HPP

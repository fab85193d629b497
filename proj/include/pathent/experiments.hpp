// Named experiments behind the command-line tool: config handling, the
// nine runs and their CSV/JSON artifacts.

#ifndef PATHENT_EXPERIMENTS_HPP
#define PATHENT_EXPERIMENTS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "bell.hpp"
#include "device.hpp"
#include "fit.hpp"
#include "montecarlo.hpp"
#include "qstate.hpp"
#include "source.hpp"
#include "tomo.hpp"

namespace pathent::cli {

enum class ExitCode : int {
  ok = 0,
  usage = 2,
  unknown_experiment = 3,
  unparseable_config = 4,
  unknown_key = 5,
  invalid_value = 6,
  unwritable_output = 7,
  runtime_failure = 8,
};

class CliError : public std::runtime_error {
 public:
  CliError(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const { return code_; }

 private:
  ExitCode code_;
};

// ---- config keys --------------------------------------------------------------

enum class Kind { number, integer, text };
enum class Domain { any, positive, nonnegative, probability };

struct KeySpec {
  const char* key;
  const char* value;  // default
  Kind kind;
  Domain domain;
  const char* doc;
  const char* choices = nullptr;  // '|'-separated; text keys only
  bool list = false;              // comma-separated subset of choices
  int min_int = 0;
};

// Defaults reproduce the device preset; configs/preset.conf lists the same values.
inline const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs{
      {"ring_top.linewidth", "21", Kind::number, Domain::positive, "resonance FWHM, GHz"},
      {"ring_top.fsr", "800", Kind::number, Domain::positive, "free spectral range, GHz"},
      {"ring_top.center", "0", Kind::number, Domain::any, "pump resonance on the common axis, GHz"},
      {"ring_bottom.linewidth", "21", Kind::number, Domain::positive, "resonance FWHM, GHz"},
      {"ring_bottom.fsr", "800", Kind::number, Domain::positive, "free spectral range, GHz"},
      {"ring_bottom.center", "0", Kind::number, Domain::any, "pump resonance on the common axis, GHz"},
      {"pump.pulse_duration", "10.8", Kind::number, Domain::positive, "ps"},
      {"pump.linewidth", "40", Kind::number, Domain::positive, "intensity FWHM, GHz"},
      {"pump.rep_rate", "51", Kind::number, Domain::positive, "MHz"},
      {"pump.pairs_per_pulse", "0.075", Kind::number, Domain::probability, "pair probability per pulse at the detector budget"},
      {"pump.broadening", "1", Kind::number, Domain::positive, "in-cavity widening factor of the pump line"},
      {"sources.mu_top", "0.06", Kind::number, Domain::nonnegative, "top source pairs per pulse"},
      {"sources.mu_bottom", "0.09", Kind::number, Domain::nonnegative, "bottom source pairs per pulse"},
      {"sources.weighting", "quadratic", Kind::text, Domain::any, "pump split weighting of the source rates",
       "quadratic|linear|none"},
      {"state.balance", "fixed", Kind::text, Domain::any, "beta from state.beta or from the source rates",
       "fixed|brightness"},
      {"state.beta", "0.49", Kind::number, Domain::probability, "source balance"},
      {"state.sigma", "0.99", Kind::number, Domain::probability, "spectral overlap |sigma|"},
      {"state.theta", "0", Kind::number, Domain::any, "entangled phase, rad"},
      {"device.first_coupler", "0.54", Kind::number, Domain::probability, "pump splitter reflectivity"},
      {"device.coupler_signal_in", "0.5", Kind::number, Domain::probability, "analysis coupler reflectivity"},
      {"device.coupler_signal_out", "0.5", Kind::number, Domain::probability, "analysis coupler reflectivity"},
      {"device.coupler_idler_in", "0.5", Kind::number, Domain::probability, "analysis coupler reflectivity"},
      {"device.coupler_idler_out", "0.5", Kind::number, Domain::probability, "analysis coupler reflectivity"},
      {"device.transmission", "0.0112", Kind::number, Domain::probability, "per-arm transmission excluding detectors"},
      {"device.detector_efficiency", "0.25", Kind::number, Domain::probability, ""},
      {"device.car", "10", Kind::number, Domain::nonnegative, "coincidence-to-accidental ratio, 0 disables accidentals"},
      {"device.multipair_noise", "0.0435", Kind::number, Domain::probability, "white-noise fraction of detected pairs"},
      {"filter.bandwidth", "35", Kind::number, Domain::positive, "GHz"},
      {"filter.selectivity", "22", Kind::number, Domain::nonnegative, "dB"},
      {"filter.fsr", "640", Kind::number, Domain::positive, "GHz"},
      {"grid.half_width", "0", Kind::number, Domain::nonnegative, "JSA half-width in GHz, 0 means 3 linewidths"},
      {"grid.points", "64", Kind::integer, Domain::any, "JSA samples per axis", nullptr, false, 8},
      {"sweep.max_detuning", "0", Kind::number, Domain::nonnegative, "GHz, 0 means 4 linewidths"},
      {"sweep.points", "33", Kind::integer, Domain::any, "detuning steps", nullptr, false, 5},
      {"sweep.floor", "0.37", Kind::number, Domain::probability, "residual visibility of distinguishable pairs"},
      {"sweep.counts", "150", Kind::number, Domain::positive, "mean coincidences per fringe point"},
      {"sweep.phase_points", "16", Kind::integer, Domain::any, "phase steps per fringe", nullptr, false, 5},
      {"fringe.points", "16", Kind::integer, Domain::any, "phase steps", nullptr, false, 5},
      {"fringe.integration_time", "150", Kind::number, Domain::positive, "s per phase step"},
      {"fringe.convention", "multiplicative", Kind::text, Domain::any, "S from visibility",
       "multiplicative|additive"},
      {"chsh.integration_time", "60", Kind::number, Domain::positive, "s per setting"},
      {"chsh.samples", "500", Kind::integer, Domain::any, "Poisson resamples for the error", nullptr, false, 2},
      {"tomo.integration_time", "60", Kind::number, Domain::positive, "s per basis setting"},
      {"tomo.samples", "500", Kind::integer, Domain::any, "Monte-Carlo reconstructions", nullptr, false, 2},
      {"tomo.resampling", "poisson", Kind::text, Domain::any, "Monte-Carlo perturbation", "poisson|normal"},
      {"tomo.configurations", "top,mixed,entangled", Kind::text, Domain::any, "device settings to run",
       "top|mixed|entangled", true},
      {"tomo.mixed_beta", "0.5", Kind::number, Domain::probability, "balance of the incoherent mixture"},
      {"calibrate.theta0", "0.4", Kind::number, Domain::any, "heater phase at 0 V, rad"},
      {"calibrate.kappa", "0.05", Kind::number, Domain::positive, "rad / V^2"},
      {"calibrate.v_max", "12", Kind::number, Domain::positive, "V"},
      {"calibrate.points", "61", Kind::integer, Domain::any, "voltage steps", nullptr, false, 8},
      {"calibrate.noise", "0.01", Kind::number, Domain::nonnegative, "relative intensity noise"},
      {"budget.target_rate", "30", Kind::number, Domain::positive, "coincidences per second to back-solve"},
  };
  return specs;
}

inline const KeySpec* find_key(const std::string& key) {
  for (const auto& s : key_specs())
    if (key == s.key) return &s;
  return nullptr;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n"), b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t used = 0;
    out = std::stod(s, &used);
    return used == s.size() && std::isfinite(out);
  } catch (const std::exception&) {
    return false;
  }
}

inline void check_value(const KeySpec& spec, const std::string& value) {
  auto fail = [&](const std::string& why) {
    throw CliError(ExitCode::invalid_value, "invalid value '" + value + "' for key '" + spec.key + "': " + why);
  };
  if (spec.kind == Kind::text) {
    if (!spec.choices) return;
    const auto allowed = split(spec.choices, '|');
    const auto given = spec.list ? split(value, ',') : std::vector<std::string>{value};
    if (given.empty()) fail("empty");
    for (const auto& g : given)
      if (std::find(allowed.begin(), allowed.end(), g) == allowed.end())
        fail(std::string("expected ") + (spec.list ? "a comma list of " : "one of ") + spec.choices);
    return;
  }
  double x = 0.0;
  if (!parse_double(value, x)) fail("not a number");
  if (spec.kind == Kind::integer) {
    if (x != std::floor(x)) fail("not an integer");
    if (x < spec.min_int) fail("must be at least " + std::to_string(spec.min_int));
  }
  switch (spec.domain) {
    case Domain::positive:
      if (!(x > 0.0)) fail("must be positive");
      break;
    case Domain::nonnegative:
      if (!(x >= 0.0)) fail("must be non-negative");
      break;
    case Domain::probability:
      if (!(x >= 0.0 && x <= 1.0)) fail("must lie in [0, 1]");
      break;
    case Domain::any:
      break;
  }
}

}  // namespace detail

/// Flat `section.key` -> value map; every key starts at its default.
class Config {
 public:
  Config() {
    for (const auto& s : key_specs()) values_[s.key] = s.value;
  }

  /// INI file with `[section]` headers and `key = value` lines.
  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CliError(ExitCode::unparseable_config, "cannot read config '" + path + "'");
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw CliError(ExitCode::unparseable_config,
                     "config '" + path + "' line " + std::to_string(e.line()) + ": " + e.message());
    }
    Config c;
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw CliError(ExitCode::unknown_key, "unknown config key '" + section + "' (keys live in sections)");
      for (const auto& [key, value] : body) c.set(section + "." + key, value.get_value<std::string>());
    }
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (!spec) throw CliError(ExitCode::unknown_key, "unknown config key '" + key + "'");
    detail::check_value(*spec, value);
    values_[key] = value;
  }

  /// `key=value`, as given to --set.
  void assign(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw CliError(ExitCode::usage, "--set expects key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  double number(const std::string& key) const {
    double x = 0.0;
    detail::parse_double(at(key), x);
    return x;
  }
  int integer(const std::string& key) const { return static_cast<int>(number(key)); }
  const std::string& text(const std::string& key) const { return at(key); }

  /// Nested {section: {key: value}} with typed values.
  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& s : key_specs()) {
      const std::string key = s.key;
      const auto dot = key.find('.');
      auto& slot = j[key.substr(0, dot)][key.substr(dot + 1)];
      if (s.kind == Kind::text)
        slot = at(key);
      else if (s.kind == Kind::integer)
        slot = integer(key);
      else
        slot = number(key);
    }
    return j;
  }

 private:
  const std::string& at(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::logic_error("config key '" + key + "' is not registered");
    return it->second;
  }
  std::map<std::string, std::string> values_;
};

/// INI text listing every key at its default, with its documentation.
inline std::string preset_ini() {
  std::ostringstream os;
  std::string section;
  for (const auto& s : key_specs()) {
    const std::string key = s.key;
    const auto dot = key.find('.');
    if (key.substr(0, dot) != section) {
      if (!section.empty()) os << '\n';
      section = key.substr(0, dot);
      os << '[' << section << "]\n";
    }
    std::string doc = s.doc;
    if (s.choices) doc += std::string(doc.empty() ? "" : "; ") + s.choices;
    if (!doc.empty()) os << "; " << doc << '\n';
    os << key.substr(dot + 1) << " = " << s.value << '\n';
  }
  return os.str();
}

// ---- domain objects from a config -------------------------------------------------

inline RingParams ring_params(const Config& c, const std::string& which) {
  RingParams r;
  r.linewidth_fwhm = c.number(which + ".linewidth");
  r.fsr = c.number(which + ".fsr");
  r.center_frequency = c.number(which + ".center");
  return r;
}

inline PumpParams pump_params(const Config& c, double carrier = 0.0) {
  PumpParams p;
  p.pulse_duration = c.number("pump.pulse_duration");
  p.linewidth_fwhm = c.number("pump.linewidth");
  p.rep_rate = c.number("pump.rep_rate");
  p.pairs_per_pulse = c.number("pump.pairs_per_pulse");
  p.broadening = c.number("pump.broadening");
  p.carrier = carrier;
  return p;
}

inline DeviceConfig device_config(const Config& c) {
  DeviceConfig d;
  d.first_coupler_reflectivity = c.number("device.first_coupler");
  d.analysis_coupler_reflectivities = {c.number("device.coupler_signal_in"), c.number("device.coupler_signal_out"),
                                       c.number("device.coupler_idler_in"), c.number("device.coupler_idler_out")};
  d.filter_bandwidth = c.number("filter.bandwidth");
  d.filter_selectivity = c.number("filter.selectivity");
  d.filter_fsr = c.number("filter.fsr");
  d.per_arm_transmission = c.number("device.transmission");
  d.detector_efficiency = c.number("device.detector_efficiency");
  d.rep_rate = c.number("pump.rep_rate");
  d.car = c.number("device.car");
  d.multipair_noise = c.number("device.multipair_noise");
  return d;
}

inline BalanceWeighting weighting(const Config& c) {
  const auto& w = c.text("sources.weighting");
  return w == "linear" ? BalanceWeighting::linear : w == "none" ? BalanceWeighting::none : BalanceWeighting::quadratic;
}

inline StateParams state_params(const Config& c) {
  StateParams s;
  s.beta = c.text("state.balance") == "brightness"
               ? balance_from_brightness(c.number("sources.mu_top"), c.number("sources.mu_bottom"),
                                         c.number("device.first_coupler"), weighting(c))
               : c.number("state.beta");
  s.sigma = c.number("state.sigma");
  s.theta = c.number("state.theta");
  return s;
}

/// State reaching the detectors: (1 - eps) rho + eps I/4.
inline DensityMatrix detected_state(const DensityMatrix& rho, const DeviceConfig& d) {
  const double eps = d.multipair_noise;
  return DensityMatrix(Matrix4c((1.0 - eps) * rho.matrix() + eps * Matrix4c::Identity() / 4.0));
}

/// Cross-key checks the per-key domains cannot express (FSR above linewidth...).
inline void validate_config(const Config& c) {
  try {
    ring_params(c, "ring_top").validate();
    ring_params(c, "ring_bottom").validate();
    pump_params(c).validate();
    device_config(c).validate();
    build_state(state_params(c));
  } catch (const std::runtime_error& e) {
    throw CliError(ExitCode::invalid_value, std::string("inconsistent config: ") + e.what());
  }
}

inline double grid_half_width(const Config& c, const RingParams& ring) {
  const double w = c.number("grid.half_width");
  return w > 0.0 ? w : 3.0 * ring.linewidth_fwhm;
}

// ---- artifacts ---------------------------------------------------------------------

class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void json(const std::string& name, const nlohmann::json& j) {
    write(name, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
  }
  template <typename Fn>
  void write(const std::string& name, Fn fn) {
    std::ofstream os(dir_ / name, std::ios::binary);
    if (!os) throw CliError(ExitCode::unwritable_output, "cannot write '" + (dir_ / name).string() + "'");
    fn(os);
    if (!os) throw CliError(ExitCode::unwritable_output, "failed writing '" + (dir_ / name).string() + "'");
    names_.push_back(name);
  }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> names_;
};

/// Creates `dir` if needed and checks a file can be written there.
inline void prepare_output(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw CliError(ExitCode::unwritable_output, "cannot create output directory '" + dir.string() + "'");
  const auto probe = dir / ".pathent_probe";
  {
    std::ofstream os(probe);
    if (!os) throw CliError(ExitCode::unwritable_output, "output directory '" + dir.string() + "' is not writable");
  }
  std::filesystem::remove(probe, ec);
}

// ---- experiments -----------------------------------------------------------------

struct Context {
  const Config& config;
  std::uint64_t seed;
  Artifacts& out;
};

inline nlohmann::json schmidt_summary(const SchmidtResult& s, std::size_t modes = 10) {
  std::vector<double> head(s.singular_values.begin(),
                           s.singular_values.begin() + static_cast<std::ptrdiff_t>(std::min(modes, s.singular_values.size())));
  return {{"schmidt_number", s.schmidt_number}, {"hom_visibility", hom_visibility(s)}, {"leading_singular_values", head}};
}

inline JsaGrid ring_jsa(const Config& c, const std::string& which, int points_factor = 1) {
  const RingParams ring = ring_params(c, which);
  return compute_jsa(ring, pump_params(c, ring.center_frequency), grid_half_width(c, ring),
                     c.integer("grid.points") * points_factor);
}

inline nlohmann::json run_jsa(Context& ctx) {
  const JsaGrid g = ring_jsa(ctx.config, "ring_top");
  ctx.out.write("jsa.csv", [&](std::ostream& os) { write_jsa_csv(g, os); });
  const auto s = schmidt_decompose(g);
  nlohmann::json j = schmidt_summary(s);
  j["grid"] = {{"points", g.signal_freqs.size()},
               {"signal", {g.signal_freqs.front(), g.signal_freqs.back()}},
               {"idler", {g.idler_freqs.front(), g.idler_freqs.back()}}};
  ctx.out.json("jsa.json", j);
  return j;
}

inline nlohmann::json run_schmidt(Context& ctx) {
  nlohmann::json j;
  for (const std::string which : {"ring_top", "ring_bottom"}) {
    const auto s = schmidt_decompose(ring_jsa(ctx.config, which));
    const auto fine = schmidt_decompose(ring_jsa(ctx.config, which, 2));
    j[which] = schmidt_summary(s);
    j[which]["schmidt_number_doubled_grid"] = fine.schmidt_number;
    j[which]["grid_relative_change"] = std::abs(fine.schmidt_number - s.schmidt_number) / s.schmidt_number;
    if (which == "ring_top")
      ctx.out.write("schmidt_modes.csv", [&](std::ostream& os) {
        os.precision(17);
        os << "mode,singular_value\n";
        for (std::size_t k = 0; k < s.singular_values.size(); ++k) os << k << ',' << s.singular_values[k] << '\n';
      });
  }
  ctx.out.json("schmidt.json", j);
  return j;
}

inline nlohmann::json run_overlap(Context& ctx) {
  const RingParams top = ring_params(ctx.config, "ring_top"), bottom = ring_params(ctx.config, "ring_bottom");
  // Common grid centred between the two rings and wide enough for both.
  const double offset = 0.5 * (top.center_frequency - bottom.center_frequency);
  const double half = std::max(grid_half_width(ctx.config, top), grid_half_width(ctx.config, bottom)) + std::abs(offset);
  const GridSpec spec{bottom.signal_resonance() + offset, bottom.idler_resonance() + offset, half,
                      ctx.config.integer("grid.points")};
  const JsaGrid a = compute_jsa(top, pump_params(ctx.config, top.center_frequency), spec);
  const JsaGrid b = compute_jsa(bottom, pump_params(ctx.config, bottom.center_frequency), spec);
  const Complex s = jsa_overlap(a, b);
  nlohmann::json j{{"sigma", std::abs(s)},
                   {"sigma_phase", std::arg(s)},
                   {"density_overlap", density_overlap(a, b)},
                   {"schmidt_number_top", schmidt_decompose(a).schmidt_number},
                   {"schmidt_number_bottom", schmidt_decompose(b).schmidt_number},
                   {"visibility_limit", visibility_from_state(state_params(ctx.config).beta, std::abs(s))}};
  ctx.out.json("overlap.json", j);
  return j;
}

inline double sweep_ideal_visibility(const Config& c) {
  return visibility_from_state(state_params(c).beta, 1.0) * (1.0 - c.number("device.multipair_noise"));
}

inline nlohmann::json run_sweep(Context& ctx) {
  const Config& c = ctx.config;
  const RingParams top = ring_params(c, "ring_top"), bottom = ring_params(c, "ring_bottom");
  double reach = c.number("sweep.max_detuning");
  if (!(reach > 0.0)) reach = 4.0 * bottom.linewidth_fwhm;
  const auto detunings = linspace(-reach, reach, c.integer("sweep.points"));
  const double ideal = sweep_ideal_visibility(c);
  const double half = c.number("grid.half_width");
  const auto model =
      detuning_sweep(top, bottom, pump_params(c), detunings, c.number("sweep.floor"), ideal, half, c.integer("grid.points"));
  DetuningFringeOptions opt;
  opt.mean_counts = c.number("sweep.counts");
  opt.phase_points = c.integer("sweep.phase_points");
  opt.seed = derive_seed(ctx.seed, 0x5eeb);
  const auto fits = visibility_vs_detuning(model, opt);

  std::vector<double> x, y, e;
  for (const auto& f : fits) {
    x.push_back(f.detuning);
    y.push_back(f.visibility);
    e.push_back(f.visibility_err);
  }
  ctx.out.write("sweep.csv", [&](std::ostream& os) { write_xy_csv(os, "detuning,visibility,visibility_err", x, y, e); });
  ctx.out.write("sweep_model.csv", [&](std::ostream& os) {
    os.precision(17);
    os << "detuning,overlap,visibility\n";
    for (const auto& p : model) os << p.detuning << ',' << p.overlap << ',' << p.visibility << '\n';
  });
  const auto peak = std::max_element(fits.begin(), fits.end(),
                                     [](const auto& a, const auto& b) { return a.predicted < b.predicted; });
  nlohmann::json j{{"ideal_visibility", ideal},
                   {"floor", c.number("sweep.floor")},
                   {"linewidth", bottom.linewidth_fwhm},
                   {"peak",
                    {{"detuning", peak->detuning},
                     {"predicted", peak->predicted},
                     {"visibility", peak->visibility},
                     {"visibility_err", peak->visibility_err}}}};
  ctx.out.json("sweep.json", j);
  return j;
}

/// Correlated fringe: both interferometers at theta_y = pi/2, signal phase swept.
inline MeasurementSetting fringe_setting(double phase) { return {0.5 * kPi, phase, 0.5 * kPi, 0.0}; }

inline nlohmann::json run_fringe(Context& ctx) {
  const Config& c = ctx.config;
  const DeviceConfig dev = device_config(c);
  const PumpParams pump = pump_params(c);
  const DensityMatrix rho = build_state(state_params(c));
  const double t = c.number("fringe.integration_time");
  const auto phases = fringe_phases(c.integer("fringe.points"));

  std::vector<CountRecord> records;
  FringeData data;
  data.phases = phases;
  for (std::size_t k = 0; k < phases.size(); ++k) {
    records.push_back(simulate_counts(rho, fringe_setting(phases[k]), dev, pump, t, derive_seed(ctx.seed, k)));
    data.counts.push_back(static_cast<double>(records.back().coincidences[0]));
  }
  data.background = records.front().accidentals_estimate;
  const FringeFit fit = fit_fringe(data);
  ctx.out.write("fringe_counts.csv", [&](std::ostream& os) { write_counts_csv(records, os); });
  std::vector<double> err;
  for (double n : data.counts) err.push_back(std::sqrt(n));
  ctx.out.write("fringe.csv", [&](std::ostream& os) { write_xy_csv(os, "phase,counts,counts_err", phases, data.counts, err); });

  const SConvention conv = parse_s_convention(c.text("fringe.convention"));
  auto s_json = [&](SConvention k) {
    const double slope = k == SConvention::additive ? std::sqrt(2.0) : kTsirelson;
    return nlohmann::json{{"s", s_from_visibility(fit.visibility, k)}, {"standard_error", slope * fit.visibility_err}};
  };
  const DensityMatrix detected = detected_state(rho, dev);
  nlohmann::json j{{"fit", to_json(fit)},
                   {"background", data.background},
                   {"convention", to_string(conv)},
                   {"s", s_json(conv)["s"]},
                   {"s_standard_error", s_json(conv)["standard_error"]},
                   {"additive", s_json(SConvention::additive)},
                   {"multiplicative", s_json(SConvention::multiplicative)},
                   {"expected_visibility", 2.0 * std::abs(detected.matrix()(0, 3))}};
  ctx.out.json("fringe.json", j);
  return j;
}

/// S from noise-free expected counts after removing the accidental estimate.
inline double expected_chsh(const DensityMatrix& rho, const ChshSettings& s, const DeviceConfig& dev,
                            const PumpParams& pump) {
  const double acc = accidental_rate_per_port(dev, pump);
  std::array<double, 4> e{};
  const auto settings = chsh_measurements(s);
  for (std::size_t k = 0; k < 4; ++k) {
    auto mean = expected_counts(rho, settings[k], dev, pump, 1.0);
    double total = 0.0;
    for (auto& m : mean) total += (m = std::max(0.0, m - acc));
    for (auto& m : mean) m /= total;
    e[k] = correlator(mean);
  }
  return chsh_combination(e);
}

inline nlohmann::json run_chsh(Context& ctx) {
  const Config& c = ctx.config;
  const DeviceConfig dev = device_config(c);
  const PumpParams pump = pump_params(c);
  const StateParams sp = state_params(c);
  const DensityMatrix rho = build_state(sp);
  const ChshSettings settings = canonical_chsh_settings(sp.theta);
  const auto meas = chsh_measurements(settings);
  const double t = c.number("chsh.integration_time");
  std::array<CountRecord, 4> recs;
  for (std::size_t k = 0; k < 4; ++k) recs[k] = simulate_counts(rho, meas[k], dev, pump, t, derive_seed(ctx.seed, k));
  const ChshResult r = chsh_from_counts(recs, static_cast<std::size_t>(c.integer("chsh.samples")),
                                        derive_seed(ctx.seed, 0xc5));
  ctx.out.write("chsh_counts.csv",
                [&](std::ostream& os) { write_counts_csv(std::vector<CountRecord>(recs.begin(), recs.end()), os); });
  const DensityMatrix detected = detected_state(rho, dev);
  nlohmann::json j{{"measured", chsh_report(r, settings)},
                   {"s_expected", expected_chsh(rho, settings, dev, pump)},
                   {"s_model", chsh_model(sp.beta, std::abs(sp.sigma))},
                   {"s_optimal_detected", chsh_optimal(detected)},
                   {"beta", sp.beta},
                   {"sigma", std::abs(sp.sigma)}};
  ctx.out.json("chsh.json", j);
  return j;
}

struct TomoConfiguration {
  std::string name;
  StateParams state;
  DensityMatrix target;
};

inline std::vector<TomoConfiguration> tomo_configurations(const Config& c) {
  std::vector<TomoConfiguration> out;
  const Ket4 zz = tensor(kets::zero(), kets::zero());
  for (const auto& name : split(c.text("tomo.configurations"), ',')) {
    if (name == "top")
      out.push_back({name, {1.0, 0.0, 0.0}, DensityMatrix::from_ket(zz)});
    else if (name == "mixed") {
      Matrix4c m = Matrix4c::Zero();
      m(0, 0) = m(3, 3) = 0.5;
      out.push_back({name, {c.number("tomo.mixed_beta"), 0.0, 0.0}, DensityMatrix(m)});
    } else
      out.push_back({name, state_params(c), DensityMatrix::from_ket(kets::phi_plus())});
  }
  return out;
}

inline nlohmann::json run_tomo(Context& ctx) {
  const Config& c = ctx.config;
  const DeviceConfig dev = device_config(c);
  const PumpParams pump = pump_params(c);
  MonteCarloOptions opt;
  opt.samples = static_cast<std::size_t>(c.integer("tomo.samples"));
  opt.resampling = c.text("tomo.resampling") == "normal" ? Resampling::normal_probabilities : Resampling::poisson_counts;
  nlohmann::json summary;
  std::uint64_t index = 0;
  for (const auto& cfg : tomo_configurations(c)) {
    const std::uint64_t s = derive_seed(ctx.seed, index++);
    const auto records = simulate_tomography(build_state(cfg.state), dev, pump, c.number("tomo.integration_time"), s);
    opt.seed = derive_seed(s, 0x7e);
    const TomoResult r = monte_carlo(records, cfg.target, opt);
    ctx.out.write("tomo_" + cfg.name + "_counts.csv", [&](std::ostream& os) { write_counts_csv(records, os); });
    nlohmann::json j = tomography_report(r, cfg.target);
    j["beta"] = cfg.state.beta;
    j["sigma"] = std::abs(cfg.state.sigma);
    ctx.out.json("tomo_" + cfg.name + ".json", j);
    summary[cfg.name] = {{"fidelity", to_json(r.fidelity_to_target)},
                         {"purity", to_json(r.purity)},
                         {"s_optimal", to_json(r.s_optimal)},
                         {"s_fixed", to_json(r.s_fixed)}};
  }
  ctx.out.json("tomo.json", summary);
  return summary;
}

inline nlohmann::json run_calibrate(Context& ctx) {
  const Config& c = ctx.config;
  const DeviceConfig dev = device_config(c);
  const std::vector<std::pair<std::string, double>> heaters{
      {"signal_y", dev.analysis_coupler_reflectivities[0]}, {"idler_y", dev.analysis_coupler_reflectivities[2]}};
  nlohmann::json j;
  std::uint64_t index = 0;
  for (const auto& [name, r] : heaters) {
    HeaterCalibration truth;
    truth.theta0 = c.number("calibrate.theta0");
    truth.kappa = c.number("calibrate.kappa");
    truth.reflectivity = std::max(r, 1.0 - r);
    const auto sweep = synthetic_heater_sweep(truth, c.number("calibrate.v_max"), c.integer("calibrate.points"),
                                              c.number("calibrate.noise"), derive_seed(ctx.seed, index++));
    const HeaterCalibration fit = calibrate_heater(sweep);
    ctx.out.write("calibrate_" + name + ".csv",
                  [&](std::ostream& os) { write_xy_csv(os, "voltage,intensity,intensity_err", sweep.voltages, sweep.intensities, {}); });
    nlohmann::json h{{"truth", to_json(truth)}, {"fit", to_json(fit)}};
    if (!fit.degenerate) h["voltage_for_pi_over_2"] = fit.voltage_for(0.5 * kPi);
    j[name] = h;
  }
  ctx.out.json("calibrate.json", j);
  return j;
}

inline nlohmann::json run_budget(Context& ctx) {
  const Config& c = ctx.config;
  const DeviceConfig dev = device_config(c);
  const PumpParams pump = pump_params(c);
  const RingParams ring = ring_params(c, "ring_top");
  const double rate = coincidence_rate(dev, pump);
  const double acc = accidental_rate_per_port(dev, pump);
  const double target = c.number("budget.target_rate");
  const double t_needed = back_solve_transmission(target, dev, pump);
  const double mu_t = c.number("sources.mu_top"), mu_b = c.number("sources.mu_bottom"), r = dev.first_coupler_reflectivity;
  nlohmann::json j{
      {"pair_rate_generated", dev.rep_rate * 1e6 * pump.pairs_per_pulse},
      {"coincidence_rate", rate},
      {"accidental_rate_per_port", acc},
      {"accidental_rate_total", 4.0 * acc},
      {"car", acc > 0.0 ? nlohmann::json(rate / (4.0 * acc)) : nlohmann::json()},
      {"per_arm_transmission", dev.per_arm_transmission},
      {"per_arm_loss_db", -to_db(dev.per_arm_transmission)},
      {"per_arm_loss_with_detector_db", -to_db(dev.per_arm_transmission * dev.detector_efficiency)},
      {"target_rate", target},
      {"transmission_for_target", t_needed},
      {"loss_for_target_db", -to_db(t_needed)},
      {"filter",
       {{"passband", filter_transmission(dev, 0.0)},
        {"pump_rejection_db", -to_db(filter_transmission(dev, ring.fsr))},
        {"extinction_floor_db", dev.filter_selectivity}}},
      {"balance_from_brightness",
       {{"quadratic", balance_from_brightness(mu_t, mu_b, r, BalanceWeighting::quadratic)},
        {"linear", balance_from_brightness(mu_t, mu_b, r, BalanceWeighting::linear)},
        {"none", balance_from_brightness(mu_t, mu_b, r, BalanceWeighting::none)}}},
      {"beta_in_use", state_params(c).beta}};
  ctx.out.json("budget.json", j);
  return j;
}

// ---- dispatch ------------------------------------------------------------------------

struct Experiment {
  const char* name;
  const char* mirrors;  // nullptr when no figure corresponds
  nlohmann::json (*run)(Context&);
};

inline const std::vector<Experiment>& experiments() {
  static const std::vector<Experiment> list{
      {"jsa", "Fig. 2e", run_jsa},         {"schmidt", nullptr, run_schmidt}, {"overlap", nullptr, run_overlap},
      {"sweep", "Fig. 2b", run_sweep},     {"fringe", "Fig. 3", run_fringe},  {"chsh", "Fig. 3", run_chsh},
      {"tomo", "Fig. 4", run_tomo},        {"calibrate", nullptr, run_calibrate}, {"budget", nullptr, run_budget},
  };
  return list;
}

inline const Experiment* find_experiment(const std::string& name) {
  for (const auto& e : experiments())
    if (name == e.name) return &e;
  return nullptr;
}

struct ExperimentSpec {
  std::string experiment;
  std::string config_path;  // empty: preset
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  std::vector<std::string> overrides;  // key=value
};

inline Config resolve_config(const ExperimentSpec& spec) {
  Config c = spec.config_path.empty() ? Config{} : Config::load(spec.config_path);
  for (const auto& o : spec.overrides) c.assign(o);
  return c;
}

/// Runs one experiment and writes its artifacts plus manifest.json.
/// Returns the experiment's result summary.
inline nlohmann::json run(const ExperimentSpec& spec) {
  const Experiment* exp = find_experiment(spec.experiment);
  if (!exp) {
    std::string names;
    for (const auto& e : experiments()) names += std::string(names.empty() ? "" : ", ") + e.name;
    throw CliError(ExitCode::unknown_experiment, "unknown experiment '" + spec.experiment + "' (expected one of " + names + ")");
  }
  const Config config = resolve_config(spec);
  validate_config(config);
  const std::filesystem::path dir(spec.out_dir);
  prepare_output(dir);
  Artifacts out(dir);
  Context ctx{config, spec.seed, out};
  nlohmann::json result;
  try {
    result = exp->run(ctx);
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(ExitCode::runtime_failure, std::string(exp->name) + " failed: " + e.what());
  }
  nlohmann::json manifest{{"experiment", exp->name},
                          {"mirrors", exp->mirrors ? nlohmann::json(exp->mirrors) : nlohmann::json()},
                          {"seed", spec.seed},
                          {"outputs", out.names()},
                          {"config", config.to_json()}};
  out.json("manifest.json", manifest);
  return result;
}

}  // namespace pathent::cli

#endif  // PATHENT_EXPERIMENTS_HPP

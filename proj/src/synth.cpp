#include "sbss/synth.hpp"

#include "sbss/config.hpp"
#include "sbss/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <cstdlib>

namespace sbss::synth {

namespace {

double polyval(const std::vector<double>& c, double t) {
  double v = 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * t + *it;
  return v;
}

Vector poly_on_grid(const std::vector<double>& c, const WavelengthGrid& grid) {
  const auto p = grid.pixels();
  Vector out(static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) {
    const double t = 2.0 * static_cast<double>(i) / static_cast<double>(p - 1) - 1.0;
    out(static_cast<Eigen::Index>(i)) = polyval(c, t);
  }
  return out;
}

std::string column_label(std::size_t j) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "m%02zu", j);
  return buf;
}

std::vector<double> ramp(double first, double last, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = n > 1 ? static_cast<double>(j) / static_cast<double>(n - 1) : 0.0;
    out[j] = first + (last - first) * t;
  }
  return out;
}

}  // namespace

Vector GasModel::sigma_on(const WavelengthGrid& grid) const {
  if (cross_section) return resample(*cross_section, grid);
  Vector out = Vector::Zero(static_cast<Eigen::Index>(grid.pixels()));
  for (const auto& peak : peaks) {
    for (std::size_t i = 0; i < grid.pixels(); ++i) {
      const double z = (grid.at(i) - peak.center_nm) / peak.width_nm;
      out(static_cast<Eigen::Index>(i)) += peak.amplitude * std::exp(-0.5 * z * z);
    }
  }
  return out;
}

std::size_t SceneConfig::measurements() const { return gases.empty() ? 0 : gases.front().concentration.size(); }

void SceneConfig::validate() const {
  if (gases.empty()) throw ConfigError("scene has no gases");
  const std::size_t n = measurements();
  if (n == 0) throw ConfigError("scene has no measurements");
  for (const auto& g : gases) {
    if (g.name.empty()) throw ConfigError("gas with empty name");
    if (g.concentration.size() != n) {
      throw ConfigError("gas '" + g.name + "' has " + std::to_string(g.concentration.size()) +
                        " concentrations, expected " + std::to_string(n));
    }
    for (double c : g.concentration) {
      if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("gas '" + g.name + "' has a negative concentration");
    }
    if (!g.cross_section && g.peaks.empty()) throw ConfigError("gas '" + g.name + "' has no cross section");
    for (const auto& pk : g.peaks) {
      if (!(pk.width_nm > 0.0)) throw ConfigError("gas '" + g.name + "' has a peak with width <= 0");
      if (!std::isfinite(pk.amplitude) || !std::isfinite(pk.center_nm)) {
        throw ConfigError("gas '" + g.name + "' has a non-finite peak");
      }
    }
  }
  if (!(path_length_cm > 0.0)) throw ConfigError("path_length_cm must be > 0");
  if (!(noise.sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
  if (!(noise.outlier_rate >= 0.0 && noise.outlier_rate <= 1.0)) throw ConfigError("outlier_rate must lie in [0, 1]");
  if (!(slit_fwhm_nm >= 0.0)) throw ConfigError("slit_fwhm_nm must be >= 0");
  const Vector l = lamp_on_grid();
  if (!(l.minCoeff() > 0.0)) throw ConfigError("lamp spectrum is not positive on the grid");
}

SlitFunction SceneConfig::slit() const {
  return slit_fwhm_nm > 0.0 ? SlitFunction::gaussian(slit_fwhm_nm, grid.step_nm()) : SlitFunction::delta();
}

Vector SceneConfig::lamp_on_grid() const { return poly_on_grid(lamp, grid); }

Vector SceneConfig::background_on_grid() const {
  return background.empty() ? Vector::Zero(static_cast<Eigen::Index>(grid.pixels())) : poly_on_grid(background, grid);
}

namespace {

// Evenly spaced band comb extending past the default window on both sides, so
// a gas carries no broad structure inside it.
std::vector<Peak> comb(double first_nm, double spacing_nm, std::size_t count, double width_nm, double amplitude) {
  std::vector<Peak> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back({first_nm + spacing_nm * static_cast<double>(i), width_nm, amplitude});
  }
  return out;
}

}  // namespace

SceneConfig default_scene() {
  SceneConfig s;
  const std::size_t n = 11;

  GasModel no2;
  no2.name = "no2";
  no2.peaks = comb(335.0, 3.1, 19, 0.55, 2.0e-19);
  no2.concentration = ramp(4.8e12, 2.4e12, n);

  GasModel hono;
  hono.name = "hono";
  hono.peaks = comb(336.2, 4.3, 14, 0.75, 3.0e-19);
  hono.concentration = ramp(1.2e12, 5.2e12, n);

  GasModel o3;
  o3.name = "o3";
  o3.peaks = comb(335.6, 2.45, 24, 0.6, 2.0e-21);
  o3.concentration.resize(n);
  for (std::size_t j = 0; j < n; ++j) o3.concentration[j] = 7.2e14 * std::exp(-0.07 * static_cast<double>(j));
  o3.known = false;

  s.gases = {no2, hono, o3};
  s.background = {0.1, -0.04, 0.01};
  s.lamp = {2.0e4, 3.0e3, -2.5e3};
  s.slit_fwhm_nm = 0.3;
  s.noise.sigma = 1.0e-3;
  s.seed = 1;
  return s;
}

SpectraMatrix simulate_intensity(const SceneConfig& config) {
  config.validate();
  const auto p = static_cast<Eigen::Index>(config.grid.pixels());
  const std::size_t n = config.measurements();
  const Vector lamp = config.lamp_on_grid();
  const Vector background = config.background_on_grid();
  const SlitFunction slit = config.slit();

  std::vector<Vector> sigma;
  sigma.reserve(config.gases.size());
  for (const auto& g : config.gases) sigma.push_back(g.sigma_on(config.grid));

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Matrix out(p, static_cast<Eigen::Index>(n));
  std::vector<std::string> labels;
  for (std::size_t j = 0; j < n; ++j) {
    Vector tau = background;
    for (std::size_t g = 0; g < sigma.size(); ++g) {
      tau += sigma[g] * (config.gases[g].concentration[j] * config.path_length_cm);
    }
    const Vector intensity = lamp.array() * (-tau.array()).exp();
    Vector observed = convolve_instrument(intensity, slit);
    // Noise is additive in ln I.
    for (Eigen::Index i = 0; i < p; ++i) {
      double shift = 0.0;
      if (config.noise.sigma > 0.0) shift += config.noise.sigma * gauss(rng);
      if (config.noise.outlier_rate > 0.0 && unit(rng) < config.noise.outlier_rate) {
        shift += (unit(rng) < 0.5 ? -1.0 : 1.0) * config.noise.outlier_magnitude;
      }
      if (shift != 0.0) observed(i) *= std::exp(shift);
    }
    out.col(static_cast<Eigen::Index>(j)) = observed;
    labels.push_back(column_label(j));
  }
  return {config.grid, std::move(out), std::move(labels)};
}

Vector reference_spectrum(const GasModel& gas, const SceneConfig& config, const emd::SiftConfig& sift,
                          const emd::BandSelection& band) {
  const Vector raw = -convolve_instrument(gas.sigma_on(config.grid), config.slit());
  const SpectraMatrix one(config.grid, raw, {gas.name});
  return emd::bandpass_matrix(one, sift, {0, band.drop_slowest, band.max_period_nm}).filtered.column(0);
}

TruthBundle make_truth_bundle(const SceneConfig& config, const emd::SiftConfig& sift,
                              const emd::BandSelection& band) {
  config.validate();
  const auto p = static_cast<Eigen::Index>(config.grid.pixels());
  const auto n = static_cast<Eigen::Index>(config.measurements());

  std::vector<const GasModel*> known;
  for (const auto& g : config.gases) {
    if (g.known) known.push_back(&g);
  }
  if (known.empty()) throw ConfigError("no gas is flagged known");

  Matrix library(p, static_cast<Eigen::Index>(config.gases.size()));
  std::vector<std::string> names;
  std::vector<HiddenGas> hidden;
  Matrix refs(p, static_cast<Eigen::Index>(known.size()));
  Matrix truth(static_cast<Eigen::Index>(known.size()), n);
  std::vector<std::string> known_names;
  for (std::size_t g = 0; g < config.gases.size(); ++g) {
    const auto& gas = config.gases[g];
    const Vector spectrum = reference_spectrum(gas, config, sift, band);
    library.col(static_cast<Eigen::Index>(g)) = spectrum;
    names.push_back(gas.name);
    Vector coef(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      coef(j) = gas.concentration[static_cast<std::size_t>(j)] * config.path_length_cm;
    }
    if (gas.known) {
      const auto k = static_cast<Eigen::Index>(known_names.size());
      refs.col(k) = spectrum;
      truth.row(k) = coef.transpose();
      known_names.push_back(gas.name);
    } else {
      hidden.push_back({gas.name, spectrum, coef});
    }
  }

  SpectraMatrix intensities = simulate_intensity(config);
  std::vector<std::string> columns = intensities.labels();
  return {std::move(intensities), ReferenceSet(config.grid, std::move(refs), known_names),
          CoefficientMatrix(std::move(truth), known_names, std::move(columns)), std::move(hidden),
          ReferenceSet(config.grid, std::move(library), std::move(names))};
}

const std::vector<SceneKey>& scene_keys() {
  static const std::vector<SceneKey> keys = {
      {"grid_start_nm", "first pixel wavelength"},
      {"grid_step_nm", "pixel step"},
      {"pixels", "pixel count"},
      {"path_length_cm", "absorption path length"},
      {"seed", "noise seed"},
      {"noise_sigma", "Gaussian noise on ln I"},
      {"outlier_rate", "fraction of pixels hit by spikes"},
      {"outlier_magnitude", "spike size on ln I"},
      {"slit_fwhm_nm", "Gaussian slit FWHM (0 = none)"},
      {"lamp", "lamp polynomial coefficients"},
      {"background", "broad optical depth polynomial coefficients"},
      {"gases", "gas names, in order"},
      {"measurements", "number of measurements"},
      {"known", "names of the gases given to the fit"},
  };
  return keys;
}

void write_truth_bundle(const TruthBundle& bundle, const SceneConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_spectra(bundle.intensities, dir / "intensities.csv");
  const Vector lamp = config.lamp_on_grid();
  save_spectra(SpectraMatrix(config.grid, Matrix(lamp), {"i0"}), dir / "i0.csv");
  save_references(bundle.references, dir / "references.csv");
  save_references(bundle.library, dir / "library.csv");

  const auto& known = bundle.truth;
  Matrix all(static_cast<Eigen::Index>(known.gas_names().size() + bundle.hidden.size()), known.values().cols());
  all.topRows(known.values().rows()) = known.values();
  std::vector<std::string> names = known.gas_names();
  for (std::size_t h = 0; h < bundle.hidden.size(); ++h) {
    all.row(known.values().rows() + static_cast<Eigen::Index>(h)) = bundle.hidden[h].coefficients.transpose();
    names.push_back(bundle.hidden[h].name);
    save_spectra(SpectraMatrix(config.grid, Matrix(bundle.hidden[h].spectrum), {bundle.hidden[h].name}),
                 dir / ("hidden_" + bundle.hidden[h].name + ".csv"));
  }
  save_coefficients(CoefficientMatrix(all, names, known.column_labels()), dir / "truth_S.csv");
}

SceneConfig parse_scene(const std::map<std::string, std::string>& entries, SceneConfig base) {
  using namespace sbss::config;
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  };
  auto positive_size = [](const std::string& key, long v) {
    if (v < 1) throw ConfigError("'" + key + "' must be >= 1");
    return static_cast<std::size_t>(v);
  };

  double start = base.grid.start_nm();
  double step = base.grid.step_nm();
  std::size_t pixels = base.grid.pixels();
  if (auto v = get("grid_start_nm")) start = to_double("grid_start_nm", *v);
  if (auto v = get("grid_step_nm")) step = to_double("grid_step_nm", *v);
  if (auto v = get("pixels")) pixels = positive_size("pixels", to_integer("pixels", *v));
  try {
    base.grid = WavelengthGrid(start, step, pixels);
  } catch (const GridError& e) {
    throw ConfigError(e.what());
  }
  if (auto v = get("path_length_cm")) base.path_length_cm = to_double("path_length_cm", *v);
  if (auto v = get("seed")) {
    const long s = to_integer("seed", *v);
    if (s < 0) throw ConfigError("'seed' must be >= 0");
    base.seed = static_cast<std::uint64_t>(s);
  }
  if (auto v = get("noise_sigma")) base.noise.sigma = to_double("noise_sigma", *v);
  if (auto v = get("outlier_rate")) base.noise.outlier_rate = to_double("outlier_rate", *v);
  if (auto v = get("outlier_magnitude")) base.noise.outlier_magnitude = to_double("outlier_magnitude", *v);
  if (auto v = get("slit_fwhm_nm")) base.slit_fwhm_nm = to_double("slit_fwhm_nm", *v);
  if (auto v = get("lamp")) base.lamp = to_doubles("lamp", *v);
  if (auto v = get("background")) base.background = to_doubles("background", *v);

  if (auto v = get("gases")) {
    std::vector<GasModel> gases;
    for (const auto& name : to_list(*v)) {
      GasModel g;
      for (const auto& b : base.gases) {
        if (b.name == name) g = b;
      }
      g.name = name;
      gases.push_back(std::move(g));
    }
    base.gases = std::move(gases);
  }

  std::size_t n = base.measurements();
  if (auto v = get("measurements")) n = positive_size("measurements", to_integer("measurements", *v));

  for (auto& g : base.gases) {
    const std::string prefix = "gas." + g.name + ".";
    if (auto v = get(prefix + "peaks")) {
      g.peaks.clear();
      for (const auto& item : to_list(*v, ';')) {
        const auto f = to_doubles(prefix + "peaks", [&] {
          std::string s = item;
          for (auto& c : s) {
            if (c == ':') c = ',';
          }
          return s;
        }());
        if (f.size() != 3) throw ConfigError("'" + prefix + "peaks' entries are center:width:amplitude");
        g.peaks.push_back({f[0], f[1], f[2]});
      }
      g.cross_section.reset();
    }
    if (auto v = get(prefix + "cross_section_file")) {
      try {
        g.cross_section = load_cross_section(*v);
      } catch (const Error& e) {
        throw ConfigError("'" + prefix + "cross_section_file': " + e.what());
      }
    }
    if (auto v = get(prefix + "concentration")) g.concentration = to_doubles(prefix + "concentration", *v);
    if (auto v = get(prefix + "ramp")) {
      const auto r = to_doubles(prefix + "ramp", *v);
      if (r.size() != 2) throw ConfigError("'" + prefix + "ramp' expects first,last");
      g.concentration = ramp(r[0], r[1], n);
    } else if (g.concentration.size() != n && g.concentration.size() >= 2 && !get(prefix + "concentration")) {
      g.concentration = ramp(g.concentration.front(), g.concentration.back(), n);
    }
    if (auto v = get(prefix + "known")) g.known = to_bool(prefix + "known", *v);
  }

  if (auto v = get("known")) {
    const auto names = to_list(*v);
    for (const auto& name : names) {
      bool found = false;
      for (const auto& g : base.gases) found = found || g.name == name;
      if (!found) throw ConfigError("'known' names unknown gas '" + name + "'");
    }
    for (auto& g : base.gases) {
      g.known = std::find(names.begin(), names.end(), g.name) != names.end();
    }
  }

  for (const auto& [key, value] : entries) {
    bool ok = false;
    for (const auto& k : scene_keys()) ok = ok || k.key == key;
    if (!ok && key.rfind("gas.", 0) == 0) {
      const auto dot = key.rfind('.');
      const std::string name = key.substr(4, dot - 4);
      const std::string field = key.substr(dot + 1);
      bool has_gas = false;
      for (const auto& g : base.gases) has_gas = has_gas || g.name == name;
      ok = has_gas && dot > 4 &&
           (field == "peaks" || field == "cross_section_file" || field == "concentration" || field == "ramp" ||
            field == "known");
    }
    if (!ok) throw ConfigError("unknown scene key '" + key + "'");
  }

  base.validate();
  return base;
}

}  // namespace sbss::synth

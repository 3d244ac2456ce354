#pragma once

// Lambert-Beer forward model for synthetic absorption spectra with known
// ground truth: gas cross sections, broad extinction, lamp, slit and noise.

#include "sbss/emd.hpp"
#include "sbss/spectra.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sbss::synth {

// One Gaussian absorption band; width is the 1-sigma half width.
struct Peak {
  double center_nm = 0.0;
  double width_nm = 1.0;
  double amplitude = 0.0;  // cm^2/molecule
};

struct GasModel {
  std::string name;
  std::vector<Peak> peaks;                   // used when cross_section is empty
  std::optional<CrossSection> cross_section;
  std::vector<double> concentration;         // molecules/cm^3, one per measurement
  bool known = true;

  Vector sigma_on(const WavelengthGrid& grid) const;
};

struct NoiseModel {
  double sigma = 0.0;              // Gaussian, added to ln I
  double outlier_rate = 0.0;       // fraction of pixels hit by a spike
  double outlier_magnitude = 0.0;  // spike size in ln I (random sign)
};

struct SceneConfig {
  WavelengthGrid grid{340.0, 0.043, 1024};
  double path_length_cm = 5200.0;
  std::vector<GasModel> gases;
  // Polynomials in t = 2 i / (p - 1) - 1 over the pixel index i:
  // broad extinction optical depth, and lamp intensity I0.
  std::vector<double> background;
  std::vector<double> lamp{1.0};
  double slit_fwhm_nm = 0.0;  // 0 selects a delta slit
  NoiseModel noise;
  std::uint64_t seed = 0;

  std::size_t measurements() const;
  void validate() const;
  SlitFunction slit() const;
  Vector lamp_on_grid() const;
  Vector background_on_grid() const;
};

// Three-gas stand-in for the NO2 / HONO / O3 laboratory mixtures: 11
// measurements on the 340 nm, 0.043 nm/pixel, 1024-pixel grid. NO2 and HONO
// are known, O3 (100x weaker cross section) is hidden.
SceneConfig default_scene();

// I* per measurement: lamp * exp(-tau) convolved with the slit, then
// log-space noise. Column labels m00, m01, ...
SpectraMatrix simulate_intensity(const SceneConfig& config);

// Reference shape of one gas as the fit sees it: the slit-convolved cross
// section, negated, with its slow part removed by EMD.
// drop_fastest of `band` is ignored: references are noise free.
Vector reference_spectrum(const GasModel& gas, const SceneConfig& config, const emd::SiftConfig& sift,
                          const emd::BandSelection& band);

struct HiddenGas {
  std::string name;
  Vector spectrum;
  Vector coefficients;  // rho * L per measurement
};

struct TruthBundle {
  SpectraMatrix intensities;
  ReferenceSet references;  // known gases
  CoefficientMatrix truth;  // rho * L for known gases
  std::vector<HiddenGas> hidden;
  ReferenceSet library;     // every gas, for component calibration
};

// ConfigError when no gas is flagged known.
TruthBundle make_truth_bundle(const SceneConfig& config, const emd::SiftConfig& sift = {},
                              const emd::BandSelection& band = {});

// Intensities, i0 (the lamp), references, library, truth_S (known gases
// first, then hidden) and one hidden_<gas>.csv spectrum per hidden gas.
void write_truth_bundle(const TruthBundle& bundle, const SceneConfig& config, const std::filesystem::path& dir);

struct SceneKey {
  std::string key;
  std::string help;
};
// Scene-wide keys. Per-gas keys have the form gas.<name>.<field> with field
// peaks, cross_section_file, concentration, ramp or known.
const std::vector<SceneKey>& scene_keys();

// Flat `key = value` scene description; unspecified keys keep the values of
// `base`. See README for the key list.
SceneConfig parse_scene(const std::map<std::string, std::string>& entries, SceneConfig base = default_scene());

}  // namespace sbss::synth

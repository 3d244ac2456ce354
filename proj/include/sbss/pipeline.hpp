#pragma once

// The three analysis stages (band filter, robust fit, component scan) chained
// through files in one output directory. Each stage reads only its input
// files and the configuration, so running the stages one by one reproduces a
// full run byte for byte.

#include "sbss/config.hpp"
#include "sbss/emd.hpp"
#include "sbss/ica.hpp"
#include "sbss/robust_fit.hpp"
#include "sbss/spectra.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace sbss::pipeline {

struct PipelineConfig {
  std::filesystem::path input;       // spectra (intensities, or log spectra when i0 is empty)
  std::filesystem::path i0;          // optional lamp spectrum, one column or one per input column
  std::filesystem::path references;  // band-filtered reference spectra
  std::filesystem::path library;     // optional, for labelling components
  std::filesystem::path out = "out";

  emd::SiftConfig sift;
  emd::BandSelection band{0, 1, 9.0};
  // Pixels dropped at each end of the grid before fitting.
  std::size_t edge_trim = 96;
  robust::HuberConfig huber;
  int d_min = 1;
  int d_max = 5;
  double match_threshold = 0.9;
  double kurtosis_threshold = 0.0;  // <= 0: sampling default for the residual length

  void validate() const;
};

// Every key accepted by parse_config, in a fixed order, with a help line.
struct KeyInfo {
  std::string key;
  std::string help;
};
const std::vector<KeyInfo>& config_keys();

// Unknown keys and malformed values raise ConfigError.
PipelineConfig parse_config(const config::Entries& entries, PipelineConfig base = {});
// Canonical `key = value` text of every key.
std::string render_config(const PipelineConfig& config);

struct Warning {
  std::string stage;
  std::string column;  // empty when the warning concerns the whole matrix
  std::string message;
};
std::string render_warning(const Warning& warning);

struct EmdStage {
  emd::BandpassResult bandpass;
  std::vector<Warning> warnings;
};
struct FitStage {
  robust::FitResult fit;
  std::vector<Warning> warnings;
};
struct IcaStage {
  ica::StabilityReport stability;
  std::vector<Warning> warnings;
};

// Reads `input` (and config.i0), writes preprocessed.csv and emd_report.txt.
EmdStage run_emd_stage(const PipelineConfig& config, const std::filesystem::path& input);
// Reads `input` and config.references, writes coefficients.csv,
// residuals.csv and fit_report.txt.
FitStage run_fit_stage(const PipelineConfig& config, const std::filesystem::path& input);
// Reads `input` (and config.library), writes components_d<k>.csv,
// stability_components.csv, stability_report.txt and, with a library,
// match_table.csv.
IcaStage run_ica_stage(const PipelineConfig& config, const std::filesystem::path& input);

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct PipelineReport {
  emd::BandpassResult bandpass;
  robust::FitResult fit;
  ica::StabilityReport stability;
  std::vector<Warning> warnings;
  std::vector<StageTiming> timings;
};

// All three stages through files under config.out, then report.txt. Input,
// reference, i0 and library grids are checked before any stage runs.
// Failures surface as StageError tagged with the stage name.
PipelineReport run_pipeline(const PipelineConfig& config);

// report.txt content; timings are left out so the file is reproducible.
std::string render_report(const PipelineConfig& config, const PipelineReport& report);

}  // namespace sbss::pipeline

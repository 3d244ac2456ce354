#pragma once

// Empirical mode decomposition and the IMF band filter that strips the slow
// background and the pixel-scale noise from each spectrum.

#include "sbss/spectra.hpp"

#include <cstddef>
#include <filesystem>
#include <utility>
#include <vector>

namespace sbss::emd {

struct Extrema {
  std::vector<std::size_t> max_index;
  std::vector<double> max_value;
  std::vector<std::size_t> min_index;
  std::vector<double> min_value;

  std::size_t count() const { return max_index.size() + min_index.size(); }
};

struct SiftConfig {
  int max_imfs = 10;
  int max_sift_iters = 100;
  double sd_threshold = 0.2;
  // Number of extrema mirrored past each end before spline fitting.
  int boundary = 2;

  void validate() const;
};

// Leading (fastest) and trailing (slowest) IMFs removed by the band filter.
// The trend is always removed.
struct BandSelection {
  int drop_fastest = 1;
  int drop_slowest = 1;
  // When > 0, the slow side is cut by scale instead of by count: every IMF
  // whose mean period exceeds this many nm is removed and drop_slowest is
  // ignored.
  double max_period_nm = 0.0;
};

struct SiftReport {
  int iterations = 0;
  double final_sd = 0.0;
  // max |(upper + lower) / 2| of the last envelope mean subtracted.
  double max_envelope_mean = 0.0;
};

struct ImfStack {
  std::vector<Vector> imfs;  // fastest first
  Vector trend;
  std::size_t source_length = 0;
  std::vector<SiftReport> reports;  // one per IMF

  Vector reconstruct() const;
};

// Strict local extrema; a flat run counts once at its midpoint. Endpoints are
// never extrema. SizeError for fewer than 3 samples.
Extrema find_extrema(const Vector& signal);

// Zero crossings, with runs of exact zeros skipped.
std::size_t count_zero_crossings(const Vector& signal);

// |#extrema - #zero crossings| <= 1.
bool satisfies_imf_condition(const Vector& signal);

// Natural cubic spline through the given extrema (plus `boundary` mirrored
// extrema on each side), evaluated at 0..length-1. EnvelopeError with
// fewer than 2 knots.
Vector envelope(const std::vector<std::size_t>& index, const std::vector<double>& value,
                std::size_t length, int boundary);

// Upper and lower envelopes used by sift. The mirror axis at each end is the
// outermost extremum, or the endpoint when the signal runs outside the
// extrema range there. EnvelopeError unless there is at least one maximum
// and one minimum.
std::pair<Vector, Vector> envelope_pair(const Vector& signal, const Extrema& extrema, int boundary);

struct SiftResult {
  Vector imf;
  Vector residual;
  SiftReport report;
};

// Extracts one IMF. Sifting stops once the Cauchy SD drops below the
// threshold and the candidate satisfies the IMF condition, or after
// max_sift_iters. NoImfError when the input has too few extrema to sift.
SiftResult sift(const Vector& signal, const SiftConfig& config);

ImfStack decompose(const Vector& signal, const SiftConfig& config);

// Mean period of an IMF in samples, from its extrema count (0 if none).
double mean_period_samples(const Vector& imf);

struct ColumnBand {
  std::size_t imf_count = 0;
  std::size_t first_kept = 0;  // index of first retained IMF
  std::size_t kept = 0;        // number of retained IMFs
  bool fallback = false;       // too few IMFs; kept everything but the trend
  std::vector<double> periods_nm;  // mean period of every IMF
};

struct BandpassResult {
  SpectraMatrix filtered;
  std::vector<ColumnBand> columns;
};

// Sum of the retained middle IMFs per column, with the residual column mean
// removed. DegenerateInputError if every column is constant.
BandpassResult bandpass_matrix(const SpectraMatrix& x, const SiftConfig& config, const BandSelection& band);

// One CSV per decomposition: `wavelength_nm,imf1..imfK,trend`.
void write_imf_dump(const WavelengthGrid& grid, const ImfStack& stack, const std::filesystem::path& path);

}  // namespace sbss::emd

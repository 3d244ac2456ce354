#pragma once

// Huber-norm linear unmixing of band-filtered spectra against reference
// spectra, solved per column by iteratively re-weighted least squares.

#include "sbss/spectra.hpp"

#include <string>
#include <vector>

namespace sbss::robust {

enum class ScaleMode { Fixed, MadPerIteration };
enum class NonnegMode { Monitor, Project };

struct HuberConfig {
  double tuning_multiplier = 1.345;
  ScaleMode scale_mode = ScaleMode::MadPerIteration;
  double fixed_sigma = 1.0;  // used in ScaleMode::Fixed
  int max_iters = 100;
  double rel_tol = 1e-8;
  NonnegMode nonneg_mode = NonnegMode::Monitor;

  void validate() const;
};

struct NegativeEntry {
  std::size_t gas = 0;
  std::size_t column = 0;
  double value = 0.0;
};

struct FitResult {
  CoefficientMatrix coefficients;
  SpectraMatrix residuals;
  // Per column: Huber objective after the OLS start and after every IRLS step,
  // each evaluated with that step's tuning constant.
  std::vector<std::vector<double>> objective_trace;
  std::vector<NegativeEntry> negativity_report;
  std::vector<int> iterations;
};

// x^2/2 inside [-k, k], k|x| - k^2/2 outside. ParamError for k <= 0.
double huber_loss(double x, double k);

// IRLS weight psi(x)/x: 1 inside [-k, k], k/|x| outside.
double huber_weight(double x, double k);

// 1.4826 * MAD; falls back to the sample standard deviation, then to 1.
double robust_scale(const Vector& residual);

// Ordinary least squares for one column (A must have full column rank).
Vector ordinary_least_squares(const Matrix& a, const Vector& x);

FitResult irls_fit(const SpectraMatrix& xhat, const ReferenceSet& refs, const HuberConfig& config = {});

struct FitReport {
  std::string text;
  std::string coefficients_csv;  // gas x column table
  std::string negativity_csv;    // gas,column,value
};

FitReport fit_report(const FitResult& result);

std::string to_string(ScaleMode mode);
std::string to_string(NonnegMode mode);
ScaleMode parse_scale_mode(const std::string& text);
NonnegMode parse_nonneg_mode(const std::string& text);

}  // namespace sbss::robust

#pragma once

// JADE independent component analysis of fit residuals, and the scan over
// component counts that separates persistent structure from noise.
//
// Orientation: the n residual columns are the mixture channels and the p
// wavelength pixels are the samples. Recovered sources are the ROWS of
// IcaResult::sources, each a length-p spectrum.

#include "sbss/spectra.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace sbss::ica {

struct WhiteningResult {
  Matrix whitener;            // d x n
  Vector mean;                // n, per-channel mean over pixels
  int retained_d = 0;
  Vector eigenvalue_spectrum; // n, descending
};

struct Whitened {
  WhiteningResult whitening;
  Matrix data;  // d x p, identity sample covariance
};

// d <= 0 selects the smallest d capturing >= 99.9% of the variance.
Whitened center_whiten(const SpectraMatrix& r, int d = 0);

// E[z_i z_j z_k z_l] supplier for moment-level tests of the cumulant formula.
using FourthMoment = std::function<double(int, int, int, int)>;

// The d(d+1)/2 slices Q_kl (k <= l) with
// Q_kl[i,j] = E[z_i z_j z_k z_l] - d_ij d_kl - d_ik d_jl - d_il d_jk.
std::vector<Matrix> cumulant_matrices_from_moments(int d, const FourthMoment& moment);

// Sample-moment slices of whitened data (rows = components).
// PreconditionError unless the sample covariance is identity within 1e-6.
std::vector<Matrix> cumulant_matrices(const Matrix& z);

struct JointDiagonalization {
  Matrix rotation;                  // V, orthogonal; V^T M V approximately diagonal
  std::vector<double> off_energy;   // sum of squared off-diagonals, initial then per accepted rotation
  int sweeps = 0;
};

// Sum over matrices of squared off-diagonal entries.
double off_diagonal_energy(const std::vector<Matrix>& matrices);

// Jacobi sweeps with the closed-form Givens angle for joint diagonalization.
// SymmetryError for any input asymmetric beyond 1e-10 (relative to its scale).
JointDiagonalization joint_diagonalize(std::vector<Matrix> matrices, double tol = 1e-8);

struct JadeOptions {
  int d = 0;  // <= 0: auto
  // Components whose |excess kurtosis| stays below this are treated as
  // Gaussian. Non-positive selects the sampling-based default for p.
  double kurtosis_threshold = 0.0;
};

// Default Gaussianity threshold for p samples: 5 * sqrt(24 / p).
double default_kurtosis_threshold(std::size_t samples);

struct IcaResult {
  Matrix demixing;  // W, d x n: sources = W * (R^T - mean)
  Matrix sources;   // U, d x p; unit-norm rows, max-|value| sample positive
  Vector kurtosis;  // excess kurtosis per row, rows sorted by descending |kurtosis|
  int d = 0;
  WhiteningResult whitening;
  bool gaussian_only = false;  // no row exceeds the kurtosis threshold
  double kurtosis_threshold = 0.0;
};

IcaResult jade(const SpectraMatrix& r, const JadeOptions& options = {});

// Signed Pearson correlation. DegenerateError on zero variance.
double match_component(const Vector& u, const Vector& ref);

struct ClusterMatch {
  int d = 0;
  int component = 0;
  double correlation = 0.0;  // signed, against the representative
};

struct StabilityCluster {
  Vector representative;  // from the largest-d run containing the cluster
  int source_d = 0;
  int source_component = 0;
  double kurtosis = 0.0;
  double persistence = 0.0;
  std::vector<ClusterMatch> matches;
  std::optional<std::string> best_reference;
  double best_correlation = 0.0;  // signed
};

struct StabilityReport {
  int d_min = 0;
  int d_max = 0;
  double match_threshold = 0.9;
  std::vector<StabilityCluster> clusters;  // sorted by descending persistence
  std::vector<IcaResult> runs;             // one per d, ascending
  bool gaussian_only = false;              // every run flagged

  std::size_t persistent_count(double min_persistence = 0.8) const;
};

// Runs jade for every d in [d_min, d_max] and clusters components greedily
// by |correlation| >= match_threshold, highest correlation first. Only
// components beyond the kurtosis threshold take part.
StabilityReport stability_scan(const SpectraMatrix& r, int d_min, int d_max, double match_threshold = 0.9,
                               double kurtosis_threshold = 0.0);

// Labels each cluster with the library spectrum of highest |correlation|.
void calibrate(StabilityReport& report, const ReferenceSet& library);

// Normalised Amari index of a square demixing*mixing product: 0 for a scaled
// permutation, 1 at worst.
double amari_index(const Matrix& product);

std::string render_stability_report(const StabilityReport& report);

}  // namespace sbss::ica

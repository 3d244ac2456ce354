#pragma once

// Wavelength-gridded spectra, reference sets and the shared CSV schema.
//
// Every spectrum in this library lives on a uniform wavelength grid. Matrices
// are stored pixel-major: one row per detector pixel, one column per
// measurement (or per gas for reference sets).

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace sbss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class WavelengthGrid {
 public:
  // Throws GridError unless step > 0 and pixels >= 2.
  WavelengthGrid(double start_nm, double step_nm, std::size_t pixels);

  double start_nm() const { return start_nm_; }
  double step_nm() const { return step_nm_; }
  std::size_t pixels() const { return pixels_; }

  double at(std::size_t i) const { return start_nm_ + static_cast<double>(i) * step_nm_; }
  double end_nm() const { return at(pixels_ - 1); }

  // Same pixel count, and start/step agree to rel_tol (relative to the step).
  bool matches(const WavelengthGrid& other, double rel_tol = 1e-9) const;

 private:
  double start_nm_;
  double step_nm_;
  std::size_t pixels_;
};

class SpectraMatrix {
 public:
  // Labels default to "c0", "c1", ... when empty.
  SpectraMatrix(WavelengthGrid grid, Matrix values, std::vector<std::string> labels = {});

  const WavelengthGrid& grid() const { return grid_; }
  const Matrix& values() const { return values_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t pixels() const { return grid_.pixels(); }
  std::size_t columns() const { return static_cast<std::size_t>(values_.cols()); }
  Vector column(std::size_t j) const { return values_.col(static_cast<Eigen::Index>(j)); }

 private:
  WavelengthGrid grid_;
  Matrix values_;
  std::vector<std::string> labels_;
};

class ReferenceSet {
 public:
  // Requires m >= 1, one name per column and pairwise distinct columns.
  ReferenceSet(WavelengthGrid grid, Matrix references, std::vector<std::string> gas_names);

  const WavelengthGrid& grid() const { return grid_; }
  const Matrix& references() const { return references_; }
  const std::vector<std::string>& gas_names() const { return gas_names_; }
  std::size_t gases() const { return gas_names_.size(); }

  SpectraMatrix as_spectra() const { return {grid_, references_, gas_names_}; }

 private:
  WavelengthGrid grid_;
  Matrix references_;
  std::vector<std::string> gas_names_;
};

// m x n fitted coefficients; rows are gases, columns measurements.
class CoefficientMatrix {
 public:
  CoefficientMatrix(Matrix values, std::vector<std::string> gas_names,
                    std::vector<std::string> column_labels = {});

  const Matrix& values() const { return values_; }
  const std::vector<std::string>& gas_names() const { return gas_names_; }
  const std::vector<std::string>& column_labels() const { return column_labels_; }

 private:
  Matrix values_;
  std::vector<std::string> gas_names_;
  std::vector<std::string> column_labels_;
};

// Absorption cross section (cm^2/molecule) on its native, possibly
// non-uniform, strictly increasing wavelength axis.
class CrossSection {
 public:
  CrossSection(std::vector<double> wavelengths_nm, std::vector<double> sigma);
  CrossSection(const WavelengthGrid& grid, std::vector<double> sigma);

  const std::vector<double>& wavelengths_nm() const { return wavelengths_; }
  const std::vector<double>& sigma() const { return sigma_; }

 private:
  std::vector<double> wavelengths_;
  std::vector<double> sigma_;
};

// Instrument line shape sampled on the detector grid: odd length, unit sum.
class SlitFunction {
 public:
  SlitFunction(std::vector<double> kernel, double fwhm_nm);

  static SlitFunction delta();
  // Gaussian sampled at the pixel step, truncated at +-4 sigma, renormalised.
  static SlitFunction gaussian(double fwhm_nm, double step_nm);

  const std::vector<double>& kernel() const { return kernel_; }
  double fwhm_nm() const { return fwhm_nm_; }

 private:
  std::vector<double> kernel_;
  double fwhm_nm_;
};

// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

// CSV schema: header `wavelength_nm,<label>...`, one row per pixel.
SpectraMatrix load_spectra(const std::filesystem::path& path);
void save_spectra(const SpectraMatrix& matrix, const std::filesystem::path& path);

ReferenceSet load_references(const std::filesystem::path& path);
void save_references(const ReferenceSet& refs, const std::filesystem::path& path);

// Two-column CSV `wavelength_nm,sigma`; the axis must be strictly increasing
// but need not be uniform.
CrossSection load_cross_section(const std::filesystem::path& path);

// CSV schema: header `gas,<column label>...`, one row per gas.
void save_coefficients(const CoefficientMatrix& coefficients, const std::filesystem::path& path);
CoefficientMatrix load_coefficients(const std::filesystem::path& path);

// Pixels [first, first + count) on the matching sub-grid. RangeError if the
// window leaves the grid or holds fewer than 2 pixels.
SpectraMatrix crop_pixels(const SpectraMatrix& matrix, std::size_t first, std::size_t count);

// The rows of `matrix` that lie on `target`. GridError unless `target` is a
// pixel-aligned sub-grid.
SpectraMatrix crop_to_grid(const SpectraMatrix& matrix, const WavelengthGrid& target);

// Elementwise natural log; DomainError names the first non-positive entry.
SpectraMatrix log_transform(const SpectraMatrix& intensity);

// Linear interpolation of the cross section onto the target pixels.
Vector resample(const CrossSection& cs, const WavelengthGrid& target);

// Discrete convolution with half-sample symmetric boundary extension
// (d c b a | a b c d | d c b a). Output has the input length.
Vector convolve_instrument(const Vector& signal, const SlitFunction& slit);

}  // namespace sbss

#include "sbss/spectra.hpp"

#include "csv_io.hpp"
#include "sbss/errors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sbss {

namespace {

std::vector<std::string> default_labels(std::size_t n, const char* prefix) {
  std::vector<std::string> labels;
  labels.reserve(n);
  for (std::size_t j = 0; j < n; ++j) labels.push_back(prefix + std::to_string(j));
  return labels;
}

// Infers a uniform grid from a strictly increasing wavelength column.
WavelengthGrid infer_grid(const std::vector<double>& wl) {
  if (wl.size() < 2) throw ParseError("need at least 2 wavelength rows");
  const double step = (wl.back() - wl.front()) / static_cast<double>(wl.size() - 1);
  if (!(step > 0.0)) throw GridError("wavelengths are not strictly increasing");
  for (std::size_t i = 1; i < wl.size(); ++i) {
    const double d = wl[i] - wl[i - 1];
    if (!(d > 0.0)) throw GridError("wavelengths are not strictly increasing at row " + std::to_string(i + 2));
    if (std::abs(d - step) > 1e-6 * step) {
      throw GridError("non-uniform wavelength step at row " + std::to_string(i + 2));
    }
  }
  return {wl.front(), step, wl.size()};
}

struct NumericTable {
  std::vector<std::string> names;  // header minus the first column
  std::vector<double> first;       // first column
  Matrix values;                   // rows x (columns - 1)
};

NumericTable read_numeric(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  if (table.header.size() < 2) throw ParseError("need a first column plus at least one data column", 1);
  NumericTable out;
  out.names.assign(table.header.begin() + 1, table.header.end());
  const auto rows = table.rows.size();
  out.first.resize(rows);
  out.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out.names.size()));
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = table.rows[r];
    out.first[r] = csv::parse_double(row[0], r + 2, 1);
    for (std::size_t c = 1; c < row.size(); ++c) {
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) =
          csv::parse_double(row[c], r + 2, c + 1);
    }
  }
  return out;
}

std::string spectra_csv(const WavelengthGrid& grid, const Matrix& values,
                        const std::vector<std::string>& labels) {
  std::string text = "wavelength_nm";
  for (const auto& l : labels) {
    csv::check_label(l);
    text += ',';
    text += l;
  }
  text += '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    text += format_double(grid.at(static_cast<std::size_t>(i)));
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      text += ',';
      text += format_double(values(i, j));
    }
    text += '\n';
  }
  return text;
}

}  // namespace

WavelengthGrid::WavelengthGrid(double start_nm, double step_nm, std::size_t pixels)
    : start_nm_(start_nm), step_nm_(step_nm), pixels_(pixels) {
  if (!std::isfinite(start_nm) || !std::isfinite(step_nm) || !(step_nm > 0.0)) {
    throw GridError("grid step must be positive and finite");
  }
  if (pixels < 2) throw GridError("grid needs at least 2 pixels");
}

bool WavelengthGrid::matches(const WavelengthGrid& other, double rel_tol) const {
  return pixels_ == other.pixels_ && std::abs(step_nm_ - other.step_nm_) <= rel_tol * step_nm_ &&
         std::abs(start_nm_ - other.start_nm_) <= rel_tol * step_nm_ * static_cast<double>(pixels_);
}

SpectraMatrix::SpectraMatrix(WavelengthGrid grid, Matrix values, std::vector<std::string> labels)
    : grid_(grid), values_(std::move(values)), labels_(std::move(labels)) {
  if (static_cast<std::size_t>(values_.rows()) != grid_.pixels()) {
    throw GridError("spectra have " + std::to_string(values_.rows()) + " rows but grid has " +
                    std::to_string(grid_.pixels()) + " pixels");
  }
  if (!values_.allFinite()) throw DomainError("spectra contain non-finite entries");
  if (labels_.empty()) labels_ = default_labels(columns(), "c");
  if (labels_.size() != columns()) throw ParamError("label count does not match column count");
}

ReferenceSet::ReferenceSet(WavelengthGrid grid, Matrix references, std::vector<std::string> gas_names)
    : grid_(grid), references_(std::move(references)), gas_names_(std::move(gas_names)) {
  if (static_cast<std::size_t>(references_.rows()) != grid_.pixels()) {
    throw GridError("reference rows do not match grid pixels");
  }
  if (references_.cols() < 1) throw ParamError("reference set needs at least one gas");
  if (gas_names_.size() != static_cast<std::size_t>(references_.cols())) {
    throw ParamError("gas name count does not match reference count");
  }
  if (!references_.allFinite()) throw DomainError("references contain non-finite entries");
  for (Eigen::Index a = 0; a < references_.cols(); ++a) {
    for (Eigen::Index b = a + 1; b < references_.cols(); ++b) {
      if (references_.col(a) == references_.col(b)) {
        throw ParamError("references '" + gas_names_[a] + "' and '" + gas_names_[b] + "' are identical");
      }
    }
  }
}

CoefficientMatrix::CoefficientMatrix(Matrix values, std::vector<std::string> gas_names,
                                     std::vector<std::string> column_labels)
    : values_(std::move(values)), gas_names_(std::move(gas_names)), column_labels_(std::move(column_labels)) {
  if (gas_names_.size() != static_cast<std::size_t>(values_.rows())) {
    throw ParamError("gas name count does not match coefficient rows");
  }
  if (column_labels_.empty()) column_labels_ = default_labels(static_cast<std::size_t>(values_.cols()), "c");
  if (column_labels_.size() != static_cast<std::size_t>(values_.cols())) {
    throw ParamError("column label count does not match coefficient columns");
  }
  if (!values_.allFinite()) throw DomainError("coefficients contain non-finite entries");
}

CrossSection::CrossSection(std::vector<double> wavelengths_nm, std::vector<double> sigma)
    : wavelengths_(std::move(wavelengths_nm)), sigma_(std::move(sigma)) {
  if (wavelengths_.size() != sigma_.size()) throw ParamError("cross section axis/value length mismatch");
  if (wavelengths_.size() < 2) throw GridError("cross section needs at least 2 samples");
  for (std::size_t i = 0; i < sigma_.size(); ++i) {
    if (!std::isfinite(sigma_[i]) || !std::isfinite(wavelengths_[i])) {
      throw DomainError("cross section contains non-finite entries");
    }
    if (i > 0 && !(wavelengths_[i] > wavelengths_[i - 1])) {
      throw GridError("cross section wavelengths must be strictly increasing");
    }
  }
}

CrossSection::CrossSection(const WavelengthGrid& grid, std::vector<double> sigma)
    : CrossSection(
          [&] {
            std::vector<double> wl(grid.pixels());
            for (std::size_t i = 0; i < wl.size(); ++i) wl[i] = grid.at(i);
            return wl;
          }(),
          std::move(sigma)) {}

SlitFunction::SlitFunction(std::vector<double> kernel, double fwhm_nm)
    : kernel_(std::move(kernel)), fwhm_nm_(fwhm_nm) {
  if (kernel_.empty() || kernel_.size() % 2 == 0) throw KernelError("slit kernel must have odd length");
  const double sum = std::accumulate(kernel_.begin(), kernel_.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) throw KernelError("slit kernel must sum to 1");
  const std::size_t n = kernel_.size();
  for (std::size_t i = 0; i < n / 2; ++i) {
    if (std::abs(kernel_[i] - kernel_[n - 1 - i]) > 1e-12) throw KernelError("slit kernel must be symmetric");
  }
}

SlitFunction SlitFunction::delta() { return SlitFunction({1.0}, 0.0); }

SlitFunction SlitFunction::gaussian(double fwhm_nm, double step_nm) {
  if (!(fwhm_nm > 0.0) || !(step_nm > 0.0)) throw KernelError("gaussian slit needs positive fwhm and step");
  const double sigma_px = fwhm_nm / (2.0 * std::sqrt(2.0 * std::log(2.0))) / step_nm;
  const auto half = static_cast<std::size_t>(std::ceil(4.0 * sigma_px));
  std::vector<double> kernel(2 * half + 1);
  for (std::size_t i = 0; i < kernel.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(half);
    kernel[i] = std::exp(-0.5 * x * x / (sigma_px * sigma_px));
  }
  const double sum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (auto& k : kernel) k /= sum;
  return {std::move(kernel), fwhm_nm};
}

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw IoError("cannot format number");
  return {buf.data(), ptr};
}

SpectraMatrix load_spectra(const std::filesystem::path& path) {
  auto t = read_numeric(path);
  if (t.first.size() < 2) throw ParseError("spectra file needs at least 2 data rows");
  auto grid = infer_grid(t.first);
  return {grid, std::move(t.values), std::move(t.names)};
}

void save_spectra(const SpectraMatrix& matrix, const std::filesystem::path& path) {
  csv::write_text(path, spectra_csv(matrix.grid(), matrix.values(), matrix.labels()));
}

ReferenceSet load_references(const std::filesystem::path& path) {
  auto s = load_spectra(path);
  return {s.grid(), s.values(), s.labels()};
}

void save_references(const ReferenceSet& refs, const std::filesystem::path& path) {
  csv::write_text(path, spectra_csv(refs.grid(), refs.references(), refs.gas_names()));
}

CrossSection load_cross_section(const std::filesystem::path& path) {
  auto t = read_numeric(path);
  if (t.names.size() != 1) throw ParseError("cross section file must have exactly two columns", 1);
  std::vector<double> sigma(t.first.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = t.values(static_cast<Eigen::Index>(i), 0);
  return {std::move(t.first), std::move(sigma)};
}

void save_coefficients(const CoefficientMatrix& coefficients, const std::filesystem::path& path) {
  std::string text = "gas";
  for (const auto& l : coefficients.column_labels()) {
    csv::check_label(l);
    text += ',' + l;
  }
  text += '\n';
  const auto& v = coefficients.values();
  for (Eigen::Index g = 0; g < v.rows(); ++g) {
    csv::check_label(coefficients.gas_names()[static_cast<std::size_t>(g)]);
    text += coefficients.gas_names()[static_cast<std::size_t>(g)];
    for (Eigen::Index j = 0; j < v.cols(); ++j) text += ',' + format_double(v(g, j));
    text += '\n';
  }
  csv::write_text(path, text);
}

CoefficientMatrix load_coefficients(const std::filesystem::path& path) {
  const auto table = csv::read(path);
  if (table.header.size() < 2) throw ParseError("coefficient file needs at least one column", 1);
  std::vector<std::string> labels(table.header.begin() + 1, table.header.end());
  std::vector<std::string> gases;
  Matrix values(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(labels.size()));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    gases.push_back(table.rows[r][0]);
    for (std::size_t c = 1; c < table.rows[r].size(); ++c) {
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) =
          csv::parse_double(table.rows[r][c], r + 2, c + 1);
    }
  }
  return {std::move(values), std::move(gases), std::move(labels)};
}

SpectraMatrix log_transform(const SpectraMatrix& intensity) {
  const auto& v = intensity.values();
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      if (!(v(i, j) > 0.0)) {
        throw DomainError("non-positive intensity " + format_double(v(i, j)) + " at pixel " + std::to_string(i) +
                          ", column '" + intensity.labels()[static_cast<std::size_t>(j)] + "'");
      }
      out(i, j) = std::log(v(i, j));
    }
  }
  return {intensity.grid(), std::move(out), intensity.labels()};
}

Vector resample(const CrossSection& cs, const WavelengthGrid& target) {
  const auto& wl = cs.wavelengths_nm();
  const auto& sg = cs.sigma();
  const double slack = 1e-9 * target.step_nm();
  if (target.start_nm() < wl.front() - slack || target.end_nm() > wl.back() + slack) {
    throw RangeError("target grid [" + format_double(target.start_nm()) + ", " + format_double(target.end_nm()) +
                     "] outside cross-section span [" + format_double(wl.front()) + ", " +
                     format_double(wl.back()) + "]");
  }
  Vector out(static_cast<Eigen::Index>(target.pixels()));
  for (std::size_t i = 0; i < target.pixels(); ++i) {
    const double x = std::clamp(target.at(i), wl.front(), wl.back());
    auto hi = static_cast<std::size_t>(std::upper_bound(wl.begin(), wl.end(), x) - wl.begin());
    hi = std::clamp<std::size_t>(hi, 1, wl.size() - 1);
    const std::size_t lo = hi - 1;
    const double t = (x - wl[lo]) / (wl[hi] - wl[lo]);
    out(static_cast<Eigen::Index>(i)) = sg[lo] + t * (sg[hi] - sg[lo]);
  }
  return out;
}

Vector convolve_instrument(const Vector& signal, const SlitFunction& slit) {
  const auto& k = slit.kernel();
  const auto n = static_cast<long>(signal.size());
  const auto half = static_cast<long>(k.size() / 2);
  if (static_cast<long>(k.size()) > n) throw KernelError("slit kernel wider than the signal");
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) throw KernelError("slit kernel is not normalised");

  auto at = [&](long i) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
    return signal(i);
  };
  Vector out(n);
  for (long i = 0; i < n; ++i) {
    double acc = 0.0;
    for (long m = -half; m <= half; ++m) acc += k[static_cast<std::size_t>(m + half)] * at(i - m);
    out(i) = acc;
  }
  return out;
}

SpectraMatrix crop_pixels(const SpectraMatrix& matrix, std::size_t first, std::size_t count) {
  if (count < 2 || first + count > matrix.pixels()) {
    throw RangeError("pixel window [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") does not fit " + std::to_string(matrix.pixels()) + " pixels");
  }
  const WavelengthGrid& g = matrix.grid();
  return {WavelengthGrid(g.at(first), g.step_nm(), count),
          matrix.values().middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count)),
          matrix.labels()};
}

SpectraMatrix crop_to_grid(const SpectraMatrix& matrix, const WavelengthGrid& target) {
  const WavelengthGrid& g = matrix.grid();
  const double offset = (target.start_nm() - g.start_nm()) / g.step_nm();
  const double rounded = std::round(offset);
  const bool aligned = std::abs(target.step_nm() - g.step_nm()) <= 1e-9 * g.step_nm() &&
                       std::abs(offset - rounded) <= 1e-6 && rounded >= 0.0;
  if (!aligned || static_cast<std::size_t>(rounded) + target.pixels() > g.pixels()) {
    throw GridError("target grid is not a sub-grid of the spectra grid");
  }
  return crop_pixels(matrix, static_cast<std::size_t>(rounded), target.pixels());
}

}  // namespace sbss

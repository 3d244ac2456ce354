#include "sbss/robust_fit.hpp"

#include "sbss/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sbss::robust {

namespace {

double median_inplace(std::vector<double>& v) {
  const std::size_t n = v.size();
  const std::size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
  const double upper = v[mid];
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<long>(mid));
  return 0.5 * (lower + upper);
}

double huber_objective(const Vector& r, double k) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) total += huber_loss(r(i), k);
  return total;
}

// Column-equilibrated normal equations, solved with a pivoted LDL^T.
class WeightedSolver {
 public:
  explicit WeightedSolver(const Matrix& a) : a_(a), scale_(a.cols()) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double norm = a.col(j).norm();
      scale_(j) = norm > 0.0 ? 1.0 / norm : 1.0;
    }
    scaled_ = a_ * scale_.asDiagonal();
  }

  Vector solve(const Vector& x, const Vector& w) const {
    const Matrix wa = w.asDiagonal() * scaled_;
    const Matrix normal = scaled_.transpose() * wa;
    const Vector rhs = wa.transpose() * x;
    const Eigen::LDLT<Matrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success) throw RankError("weighted normal equations are singular");
    return scale_.asDiagonal() * ldlt.solve(rhs);
  }

 private:
  const Matrix& a_;
  Vector scale_;
  Matrix scaled_;
};

void check_rank(const Matrix& a) {
  const Eigen::JacobiSVD<Matrix> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(sv.size() - 1) > 1e-10 * sv(0))) {
    throw RankError("reference matrix is rank deficient (smallest/largest singular value " +
                    format_double(sv.size() ? sv(sv.size() - 1) / sv(0) : 0.0) + ")");
  }
}

struct ColumnFit {
  Vector s;
  std::vector<double> trace;
  int iterations = 0;
};

ColumnFit irls_column(const Matrix& a, const Vector& x, const HuberConfig& config) {
  const WeightedSolver solver(a);
  ColumnFit fit;
  fit.s = solver.solve(x, Vector::Ones(x.size()));
  Vector r = x - a * fit.s;
  double sigma_prev = std::numeric_limits<double>::infinity();

  for (int it = 1; it <= config.max_iters; ++it) {
    // Non-increasing k keeps the recorded objective monotone.
    const double sigma = config.scale_mode == ScaleMode::Fixed ? config.fixed_sigma
                                                               : std::min(sigma_prev, robust_scale(r));
    const double k = config.tuning_multiplier * sigma;
    if (it == 1) fit.trace.push_back(huber_objective(r, k));

    Vector w(r.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) w(i) = huber_weight(r(i), k);
    Vector s_new = solver.solve(x, w);
    r = x - a * s_new;
    fit.trace.push_back(huber_objective(r, k));

    const double step = (s_new - fit.s).norm();
    const double norm = s_new.norm();
    const double change = norm > 0.0 ? step / norm : step;
    fit.s = std::move(s_new);
    fit.iterations = it;
    sigma_prev = sigma;
    if (change < config.rel_tol) break;
  }
  return fit;
}

}  // namespace

void HuberConfig::validate() const {
  if (!(tuning_multiplier > 0.0)) throw ParamError("tuning_multiplier must be > 0");
  if (!(rel_tol > 0.0)) throw ParamError("rel_tol must be > 0");
  if (max_iters < 1) throw ParamError("max_iters must be >= 1");
  if (scale_mode == ScaleMode::Fixed && !(fixed_sigma > 0.0)) throw ParamError("fixed_sigma must be > 0");
}

double huber_loss(double x, double k) {
  if (!(k > 0.0)) throw ParamError("Huber tuning constant must be > 0");
  const double ax = std::abs(x);
  return ax <= k ? 0.5 * x * x : k * ax - 0.5 * k * k;
}

double huber_weight(double x, double k) {
  if (!(k > 0.0)) throw ParamError("Huber tuning constant must be > 0");
  const double ax = std::abs(x);
  return ax <= k ? 1.0 : k / ax;
}

double robust_scale(const Vector& residual) {
  if (residual.size() < 2) return 1.0;
  std::vector<double> v(residual.data(), residual.data() + residual.size());
  const double med = median_inplace(v);
  for (auto& e : v) e = std::abs(e - med);
  const double mad = 1.4826 * median_inplace(v);
  if (mad > 0.0) return mad;
  const double mean = residual.mean();
  const double var = (residual.array() - mean).square().sum() / static_cast<double>(residual.size() - 1);
  const double sd = std::sqrt(var);
  return sd > 0.0 ? sd : 1.0;
}

Vector ordinary_least_squares(const Matrix& a, const Vector& x) {
  check_rank(a);
  return WeightedSolver(a).solve(x, Vector::Ones(x.size()));
}

FitResult irls_fit(const SpectraMatrix& xhat, const ReferenceSet& refs, const HuberConfig& config) {
  config.validate();
  if (!xhat.grid().matches(refs.grid())) throw GridError("reference grid does not match spectra grid");
  const Matrix& a = refs.references();
  if (a.rows() < a.cols()) throw RankError("fewer pixels than reference spectra");
  check_rank(a);

  const auto m = static_cast<std::size_t>(a.cols());
  const auto n = xhat.columns();
  Matrix s(a.cols(), static_cast<Eigen::Index>(n));
  std::vector<std::vector<double>> traces;
  std::vector<int> iterations;

  for (std::size_t j = 0; j < n; ++j) {
    const Vector x = xhat.column(j);
    ColumnFit fit = irls_column(a, x, config);

    if (config.nonneg_mode == NonnegMode::Project && (fit.s.array() < 0.0).any()) {
      std::vector<Eigen::Index> support;
      for (Eigen::Index g = 0; g < fit.s.size(); ++g) {
        if (fit.s(g) >= 0.0) support.push_back(g);
      }
      Vector projected = Vector::Zero(fit.s.size());
      if (!support.empty()) {
        Matrix sub(a.rows(), static_cast<Eigen::Index>(support.size()));
        for (std::size_t c = 0; c < support.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = a.col(support[c]);
        ColumnFit refit = irls_column(sub, x, config);
        for (std::size_t c = 0; c < support.size(); ++c) projected(support[c]) = refit.s(static_cast<Eigen::Index>(c));
        fit.trace.insert(fit.trace.end(), refit.trace.begin(), refit.trace.end());
        fit.iterations += refit.iterations;
      }
      fit.s = projected;
    }

    s.col(static_cast<Eigen::Index>(j)) = fit.s;
    traces.push_back(std::move(fit.trace));
    iterations.push_back(fit.iterations);
  }

  std::vector<NegativeEntry> negatives;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t g = 0; g < m; ++g) {
      const double v = s(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(j));
      if (v < 0.0) negatives.push_back({g, j, v});
    }
  }

  Matrix residual = xhat.values() - a * s;
  return FitResult{CoefficientMatrix(s, refs.gas_names(), xhat.labels()),
                   SpectraMatrix(xhat.grid(), std::move(residual), xhat.labels()), std::move(traces),
                   std::move(negatives), std::move(iterations)};
}

FitReport fit_report(const FitResult& result) {
  const auto& coef = result.coefficients;
  const auto& gases = coef.gas_names();
  const auto& cols = coef.column_labels();

  FitReport report;
  report.coefficients_csv = "gas";
  for (const auto& c : cols) report.coefficients_csv += ',' + c;
  report.coefficients_csv += '\n';
  for (std::size_t g = 0; g < gases.size(); ++g) {
    report.coefficients_csv += gases[g];
    for (std::size_t j = 0; j < cols.size(); ++j) {
      report.coefficients_csv +=
          ',' + format_double(coef.values()(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(j)));
    }
    report.coefficients_csv += '\n';
  }

  report.negativity_csv = "gas_index,gas,column_index,column,value\n";
  for (const auto& e : result.negativity_report) {
    report.negativity_csv += std::to_string(e.gas) + ',' + gases[e.gas] + ',' + std::to_string(e.column) + ',' +
                             cols[e.column] + ',' + format_double(e.value) + '\n';
  }

  std::string& t = report.text;
  t += "# robust fit report\n";
  t += "gases = ";
  for (std::size_t g = 0; g < gases.size(); ++g) t += (g ? "," : "") + gases[g];
  t += "\ncolumns = " + std::to_string(cols.size()) + "\n";
  t += "negative_entries = " + std::to_string(result.negativity_report.size()) + "\n";
  t += "\n[coefficients]\n" + report.coefficients_csv;
  t += "\n[iterations]\ncolumn,iterations,final_objective\n";
  for (std::size_t j = 0; j < cols.size() && j < result.iterations.size(); ++j) {
    const auto& trace = result.objective_trace[j];
    t += cols[j] + ',' + std::to_string(result.iterations[j]) + ',' +
         (trace.empty() ? std::string("nan") : format_double(trace.back())) + '\n';
  }
  t += "\n[negativity]\n" + report.negativity_csv;
  return report;
}

std::string to_string(ScaleMode mode) { return mode == ScaleMode::Fixed ? "fixed" : "mad"; }
std::string to_string(NonnegMode mode) { return mode == NonnegMode::Monitor ? "monitor" : "project"; }

ScaleMode parse_scale_mode(const std::string& text) {
  if (text == "fixed") return ScaleMode::Fixed;
  if (text == "mad" || text == "mad-per-iteration") return ScaleMode::MadPerIteration;
  throw ParamError("unknown scale mode '" + text + "' (expected fixed or mad)");
}

NonnegMode parse_nonneg_mode(const std::string& text) {
  if (text == "monitor") return NonnegMode::Monitor;
  if (text == "project") return NonnegMode::Project;
  throw ParamError("unknown nonneg mode '" + text + "' (expected monitor or project)");
}

}  // namespace sbss::robust

#include "sbss/ica.hpp"

#include "sbss/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace sbss::ica {

namespace {

constexpr int kMaxSweeps = 500;

double excess_kurtosis(const Vector& s) {
  const double mean = s.mean();
  const Eigen::ArrayXd c = s.array() - mean;
  const double m2 = c.square().mean();
  if (!(m2 > 0.0)) return 0.0;
  return c.square().square().mean() / (m2 * m2) - 3.0;
}

// Flips v so that its largest-magnitude entry (first one on ties) is positive.
// Returns the applied sign.
double canonical_sign(const Eigen::Ref<const Vector>& v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  return v(arg) < 0.0 ? -1.0 : 1.0;
}

}  // namespace

Whitened center_whiten(const SpectraMatrix& r, int d) {
  const auto n = static_cast<Eigen::Index>(r.columns());
  const auto p = static_cast<Eigen::Index>(r.pixels());
  if (n < 2) throw ParamError("whitening needs at least 2 residual columns");
  if (p <= n) throw ParamError("whitening needs more pixels than columns");
  if (d > n) throw ParamError("requested d = " + std::to_string(d) + " exceeds " + std::to_string(n) + " channels");

  const Matrix y = r.values().transpose();  // n x p
  const Vector mean = y.rowwise().mean();
  const Matrix yc = y.colwise() - mean;
  const Matrix cov = yc * yc.transpose() / static_cast<double>(p);

  const Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw DegenerateError("covariance eigendecomposition failed");
  Vector evals = eig.eigenvalues().reverse();
  Matrix evecs = eig.eigenvectors().rowwise().reverse();
  for (Eigen::Index k = 0; k < n; ++k) {
    evals(k) = std::max(evals(k), 0.0);
    evecs.col(k) *= canonical_sign(evecs.col(k));
  }
  const double total = evals.sum();
  if (!(evals(0) > 0.0) || !(total > 0.0)) throw DegenerateError("residuals have zero variance");

  int keep = d;
  if (keep <= 0) {
    double cum = 0.0;
    keep = static_cast<int>(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      cum += evals(k);
      if (cum >= 0.999 * total) {
        keep = static_cast<int>(k + 1);
        break;
      }
    }
  }
  if (!(evals(keep - 1) > 1e-12 * evals(0))) {
    throw DegenerateError("d = " + std::to_string(keep) + " exceeds the numerical rank of the residuals");
  }

  WhiteningResult w;
  w.mean = mean;
  w.retained_d = keep;
  w.eigenvalue_spectrum = evals;
  w.whitener = evals.head(keep).cwiseSqrt().cwiseInverse().asDiagonal() * evecs.leftCols(keep).transpose();
  Matrix z = w.whitener * yc;
  return {std::move(w), std::move(z)};
}

std::vector<Matrix> cumulant_matrices_from_moments(int d, const FourthMoment& moment) {
  if (d < 1) throw ParamError("cumulant slices need d >= 1");
  auto delta = [](int a, int b) { return a == b ? 1.0 : 0.0; };
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(d * (d + 1) / 2));
  for (int k = 0; k < d; ++k) {
    for (int l = k; l < d; ++l) {
      Matrix q(d, d);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
          const double kl = moment(i, j, k, l) - delta(i, j) * delta(k, l) - delta(i, k) * delta(j, l) -
                            delta(i, l) * delta(j, k);
          const double lk = moment(i, j, l, k) - delta(i, j) * delta(l, k) - delta(i, l) * delta(j, k) -
                            delta(i, k) * delta(j, l);
          q(i, j) = 0.5 * (kl + lk);
        }
      }
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::vector<Matrix> cumulant_matrices(const Matrix& z) {
  const auto d = z.rows();
  const auto p = static_cast<double>(z.cols());
  if (d < 1 || z.cols() < 2) throw ParamError("cumulant slices need non-empty whitened data");
  const Matrix cov = z * z.transpose() / p;
  if ((cov - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-6) {
    throw PreconditionError("cumulant input is not whitened");
  }

  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(d * (d + 1) / 2));
  for (Eigen::Index k = 0; k < d; ++k) {
    for (Eigen::Index l = k; l < d; ++l) {
      const Eigen::RowVectorXd w = z.row(k).cwiseProduct(z.row(l));
      Matrix q = (z.array().rowwise() * w.array()).matrix() * z.transpose() / p;
      q = 0.5 * (q + q.transpose()).eval();
      // Gaussian part: d_ij d_kl + d_ik d_jl + d_il d_jk.
      if (k == l) q.diagonal().array() -= 1.0;
      q(k, l) -= 1.0;
      q(l, k) -= 1.0;
      out.push_back(std::move(q));
    }
  }
  return out;
}

double off_diagonal_energy(const std::vector<Matrix>& matrices) {
  double total = 0.0;
  for (const auto& m : matrices) total += m.squaredNorm() - m.diagonal().squaredNorm();
  return total;
}

JointDiagonalization joint_diagonalize(std::vector<Matrix> matrices, double tol) {
  if (matrices.empty()) throw ParamError("joint diagonalization needs at least one matrix");
  const auto d = matrices.front().rows();
  for (const auto& m : matrices) {
    if (m.rows() != d || m.cols() != d) throw ParamError("joint diagonalization needs equal square matrices");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw SymmetryError("joint diagonalization input is not symmetric");
    }
  }

  JointDiagonalization out;
  out.rotation = Matrix::Identity(d, d);
  out.off_energy.push_back(off_diagonal_energy(matrices));

  bool rotated = true;
  while (rotated && out.sweeps < kMaxSweeps) {
    rotated = false;
    ++out.sweeps;
    for (Eigen::Index p = 0; p + 1 < d; ++p) {
      for (Eigen::Index q = p + 1; q < d; ++q) {
        double g11 = 0.0, g12 = 0.0, g22 = 0.0;
        for (const auto& m : matrices) {
          const double a = m(p, p) - m(q, q);
          const double b = m(p, q) + m(q, p);
          g11 += a * a;
          g12 += a * b;
          g22 += b * b;
        }
        const double ton = g11 - g22;
        const double toff = 2.0 * g12;
        const double theta = (toff == 0.0 && ton < 0.0)
                                 ? 0.25 * M_PI
                                 : 0.5 * std::atan2(toff, ton + std::sqrt(ton * ton + toff * toff));
        if (!(std::abs(theta) > tol)) continue;

        rotated = true;
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        for (auto& m : matrices) {
          for (Eigen::Index i = 0; i < d; ++i) {
            const double mp = m(i, p);
            const double mq = m(i, q);
            m(i, p) = c * mp + s * mq;
            m(i, q) = -s * mp + c * mq;
          }
          for (Eigen::Index j = 0; j < d; ++j) {
            const double mp = m(p, j);
            const double mq = m(q, j);
            m(p, j) = c * mp + s * mq;
            m(q, j) = -s * mp + c * mq;
          }
        }
        for (Eigen::Index i = 0; i < d; ++i) {
          const double vp = out.rotation(i, p);
          const double vq = out.rotation(i, q);
          out.rotation(i, p) = c * vp + s * vq;
          out.rotation(i, q) = -s * vp + c * vq;
        }
        out.off_energy.push_back(off_diagonal_energy(matrices));
      }
    }
  }
  return out;
}

double default_kurtosis_threshold(std::size_t samples) {
  return 5.0 * std::sqrt(24.0 / static_cast<double>(samples));
}

IcaResult jade(const SpectraMatrix& r, const JadeOptions& options) {
  Whitened white = center_whiten(r, options.d);
  const int d = white.whitening.retained_d;
  const auto p = white.data.cols();

  Matrix rotation = Matrix::Identity(d, d);
  if (d > 1) rotation = joint_diagonalize(cumulant_matrices(white.data)).rotation;

  const Matrix w = rotation.transpose() * white.whitening.whitener;
  const Matrix s = rotation.transpose() * white.data;

  std::vector<double> kurt(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) kurt[static_cast<std::size_t>(i)] = excess_kurtosis(s.row(i).transpose());
  std::vector<int> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(kurt[static_cast<std::size_t>(a)]) > std::abs(kurt[static_cast<std::size_t>(b)]);
  });

  IcaResult out;
  out.d = d;
  out.demixing.resize(d, w.cols());
  out.sources.resize(d, p);
  out.kurtosis.resize(d);
  out.kurtosis_threshold =
      options.kurtosis_threshold > 0.0 ? options.kurtosis_threshold : default_kurtosis_threshold(r.pixels());
  out.gaussian_only = true;
  for (int i = 0; i < d; ++i) {
    const int src = order[static_cast<std::size_t>(i)];
    Vector row = s.row(src).transpose();
    const double sign = canonical_sign(row);
    const double scale = sign / row.norm();
    out.sources.row(i) = (row * scale).transpose();
    out.demixing.row(i) = w.row(src) * scale;
    out.kurtosis(i) = kurt[static_cast<std::size_t>(src)];
    if (std::abs(out.kurtosis(i)) >= out.kurtosis_threshold) out.gaussian_only = false;
  }
  out.whitening = std::move(white.whitening);
  return out;
}

double match_component(const Vector& u, const Vector& ref) {
  if (u.size() != ref.size()) throw ParamError("match_component length mismatch");
  if (!u.allFinite() || !ref.allFinite()) throw DomainError("match_component input is not finite");
  const Eigen::ArrayXd a = u.array() - u.mean();
  const Eigen::ArrayXd b = ref.array() - ref.mean();
  const double va = a.square().sum();
  const double vb = b.square().sum();
  if (!(va > 0.0) || !(vb > 0.0)) throw DegenerateError("match_component input has zero variance");
  return (a * b).sum() / std::sqrt(va * vb);
}

std::size_t StabilityReport::persistent_count(double min_persistence) const {
  return static_cast<std::size_t>(std::count_if(clusters.begin(), clusters.end(), [&](const StabilityCluster& c) {
    return c.persistence >= min_persistence;
  }));
}

StabilityReport stability_scan(const SpectraMatrix& r, int d_min, int d_max, double match_threshold,
                               double kurtosis_threshold) {
  if (d_min < 1 || d_max < d_min) throw ParamError("empty component-count range");
  if (static_cast<std::size_t>(d_max) > r.columns()) {
    throw ParamError("d_max = " + std::to_string(d_max) + " exceeds " + std::to_string(r.columns()) + " columns");
  }

  StabilityReport report;
  report.d_min = d_min;
  report.d_max = d_max;
  report.match_threshold = match_threshold;
  for (int d = d_min; d <= d_max; ++d) report.runs.push_back(jade(r, {d, kurtosis_threshold}));

  auto run_at = [&](int d) -> const IcaResult& { return report.runs[static_cast<std::size_t>(d - d_min)]; };
  auto& clusters = report.clusters;

  auto seed = [&](int d, int c) {
    StabilityCluster cl;
    cl.representative = run_at(d).sources.row(c).transpose();
    cl.source_d = d;
    cl.source_component = c;
    cl.kurtosis = run_at(d).kurtosis(c);
    cl.matches.push_back({d, c, 1.0});
    clusters.push_back(std::move(cl));
  };

  auto eligible = [&](int d, int c) {
    const IcaResult& run = run_at(d);
    return std::abs(run.kurtosis(c)) >= run.kurtosis_threshold;
  };

  for (int c = 0; c < d_max; ++c) {
    if (eligible(d_max, c)) seed(d_max, c);
  }
  for (int d = d_max - 1; d >= d_min; --d) {
    const IcaResult& run = run_at(d);
    std::vector<std::tuple<double, std::size_t, int, double>> candidates;  // |corr|, cluster, comp, corr
    for (std::size_t k = 0; k < clusters.size(); ++k) {
      for (int c = 0; c < d; ++c) {
        if (!eligible(d, c)) continue;
        const double corr = match_component(run.sources.row(c).transpose(), clusters[k].representative);
        if (std::abs(corr) >= match_threshold) candidates.emplace_back(std::abs(corr), k, c, corr);
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    std::vector<bool> cluster_used(clusters.size(), false);
    std::vector<bool> comp_used(static_cast<std::size_t>(d), false);
    for (const auto& [abs_corr, k, c, corr] : candidates) {
      if (cluster_used[k] || comp_used[static_cast<std::size_t>(c)]) continue;
      cluster_used[k] = true;
      comp_used[static_cast<std::size_t>(c)] = true;
      clusters[k].matches.push_back({d, c, corr});
    }
    for (int c = 0; c < d; ++c) {
      if (!comp_used[static_cast<std::size_t>(c)] && eligible(d, c)) seed(d, c);
    }
  }

  const double runs = static_cast<double>(report.runs.size());
  for (auto& cl : clusters) {
    std::sort(cl.matches.begin(), cl.matches.end(), [](const auto& a, const auto& b) { return a.d < b.d; });
    cl.persistence = static_cast<double>(cl.matches.size()) / runs;
  }
  std::stable_sort(clusters.begin(), clusters.end(), [](const auto& a, const auto& b) {
    if (a.persistence != b.persistence) return a.persistence > b.persistence;
    return std::abs(a.kurtosis) > std::abs(b.kurtosis);
  });

  report.gaussian_only = std::all_of(report.runs.begin(), report.runs.end(),
                                     [](const IcaResult& run) { return run.gaussian_only; });
  return report;
}

void calibrate(StabilityReport& report, const ReferenceSet& library) {
  const Matrix& lib = library.references();
  for (auto& cl : report.clusters) {
    if (static_cast<Eigen::Index>(cl.representative.size()) != lib.rows()) {
      throw GridError("reference library grid does not match residual grid");
    }
    cl.best_reference.reset();
    cl.best_correlation = 0.0;
    for (Eigen::Index g = 0; g < lib.cols(); ++g) {
      const double corr = match_component(cl.representative, lib.col(g));
      if (!cl.best_reference || std::abs(corr) > std::abs(cl.best_correlation)) {
        cl.best_reference = library.gas_names()[static_cast<std::size_t>(g)];
        cl.best_correlation = corr;
      }
    }
  }
}

double amari_index(const Matrix& product) {
  const auto k = product.rows();
  if (k != product.cols() || k < 2) throw ParamError("amari_index needs a square matrix of size >= 2");
  const Matrix a = product.cwiseAbs();
  double total = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) total += a.row(i).sum() / a.row(i).maxCoeff() - 1.0;
  for (Eigen::Index j = 0; j < k; ++j) total += a.col(j).sum() / a.col(j).maxCoeff() - 1.0;
  return total / (2.0 * static_cast<double>(k) * static_cast<double>(k - 1));
}

std::string render_stability_report(const StabilityReport& report) {
  std::string t = "# component stability scan\n";
  t += "d_range = " + std::to_string(report.d_min) + ".." + std::to_string(report.d_max) + "\n";
  t += "match_threshold = " + format_double(report.match_threshold) + "\n";
  t += "clusters = " + std::to_string(report.clusters.size()) + "\n";
  t += "persistent_clusters = " + std::to_string(report.persistent_count()) + "\n";
  t += std::string("gaussian_only = ") + (report.gaussian_only ? "true" : "false") + "\n";
  for (const auto& run : report.runs) {
    t += "kurtosis_d" + std::to_string(run.d) + " =";
    for (Eigen::Index i = 0; i < run.kurtosis.size(); ++i) t += (i ? ", " : " ") + format_double(run.kurtosis(i));
    t += "\n";
  }
  for (std::size_t k = 0; k < report.clusters.size(); ++k) {
    const auto& cl = report.clusters[k];
    t += "\n[cluster " + std::to_string(k) + "]\n";
    t += "persistence = " + format_double(cl.persistence) + "\n";
    t += "source = d" + std::to_string(cl.source_d) + ":" + std::to_string(cl.source_component) + "\n";
    t += "kurtosis = " + format_double(cl.kurtosis) + "\n";
    t += "matches =";
    for (std::size_t i = 0; i < cl.matches.size(); ++i) {
      const auto& m = cl.matches[i];
      t += (i ? ", " : " ") + ("d" + std::to_string(m.d) + ":" + std::to_string(m.component) + ":" +
                               format_double(m.correlation));
    }
    t += "\n";
    if (cl.best_reference) {
      t += "best_reference = " + *cl.best_reference + "\n";
      t += "best_correlation = " + format_double(cl.best_correlation) + "\n";
    }
  }
  return t;
}

}  // namespace sbss::ica

#include "sbss/emd.hpp"

#include "sbss/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>
#include <utility>

namespace sbss::emd {

namespace {

// Natural cubic spline through (x, y), evaluated at 0, 1, ..., length-1.
Vector natural_spline(const std::vector<double>& x, const std::vector<double>& y, std::size_t length) {
  const std::size_t n = x.size();
  Vector out(static_cast<Eigen::Index>(length));
  if (n == 2) {
    const double slope = (y[1] - y[0]) / (x[1] - x[0]);
    for (std::size_t i = 0; i < length; ++i) {
      out(static_cast<Eigen::Index>(i)) = y[0] + slope * (static_cast<double>(i) - x[0]);
    }
    return out;
  }

  // Second derivatives m[0..n-1], m[0] = m[n-1] = 0; Thomas algorithm on the
  // interior equations.
  std::vector<double> h(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) h[i] = x[i + 1] - x[i];
  std::vector<double> diag(n, 0.0), upper(n, 0.0), rhs(n, 0.0), m(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    diag[i] = 2.0 * (h[i - 1] + h[i]);
    upper[i] = h[i];
    rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
  }
  for (std::size_t i = 2; i + 1 < n; ++i) {
    const double w = h[i - 1] / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m[i] = (rhs[i] - (i + 2 < n ? upper[i] * m[i + 1] : 0.0)) / diag[i];
  }

  std::size_t seg = 0;
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i);
    while (seg + 2 < n && t > x[seg + 1]) ++seg;
    const double hs = h[seg];
    const double a = (x[seg + 1] - t) / hs;
    const double b = (t - x[seg]) / hs;
    out(static_cast<Eigen::Index>(i)) =
        a * y[seg] + b * y[seg + 1] + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hs * hs / 6.0;
  }
  return out;
}

struct Knots {
  std::vector<double> x;
  std::vector<double> y;
};

// Indices src[first, last) clipped to the vector, in reverse order.
std::vector<std::size_t> reversed_slice(const std::vector<std::size_t>& src, long first, long last) {
  first = std::max(first, 0L);
  last = std::min(last, static_cast<long>(src.size()));
  std::vector<std::size_t> out;
  for (long i = last - 1; i >= first; --i) out.push_back(src[static_cast<std::size_t>(i)]);
  return out;
}

void mirror_into(Knots& k, const Vector& h, const std::vector<std::size_t>& idx, double centre) {
  for (auto i : idx) {
    k.x.push_back(2.0 * centre - static_cast<double>(i));
    k.y.push_back(h(static_cast<Eigen::Index>(i)));
  }
}

std::pair<Knots, Knots> rilling_knots(const Vector& h, const Extrema& ex, int boundary) {
  const auto& imax = ex.max_index;
  const auto& imin = ex.min_index;
  if (imax.empty() || imin.empty()) throw EnvelopeError("need at least one maximum and one minimum");
  const long nb = std::max(boundary, 0);
  const long nmax = static_cast<long>(imax.size());
  const long nmin = static_cast<long>(imin.size());
  const std::size_t last = static_cast<std::size_t>(h.size() - 1);
  auto at = [&](std::size_t i) { return h(static_cast<Eigen::Index>(i)); };

  std::vector<std::size_t> lmax, lmin, rmax, rmin;
  std::size_t lsym = 0;
  std::size_t rsym = last;
  if (nb > 0) {
    if (imax.front() < imin.front()) {
      if (at(0) > at(imin.front())) {
        lmax = reversed_slice(imax, 1, nb + 1);
        lmin = reversed_slice(imin, 0, nb);
        lsym = imax.front();
      } else {
        lmax = reversed_slice(imax, 0, nb);
        lmin = reversed_slice(imin, 0, nb - 1);
        lmin.push_back(0);
      }
    } else {
      if (at(0) < at(imax.front())) {
        lmax = reversed_slice(imax, 0, nb);
        lmin = reversed_slice(imin, 1, nb + 1);
        lsym = imin.front();
      } else {
        lmax = reversed_slice(imax, 0, nb - 1);
        lmax.push_back(0);
        lmin = reversed_slice(imin, 0, nb);
      }
    }
    auto reaches_left = [&](const std::vector<std::size_t>& v) {
      return v.empty() || 2.0 * static_cast<double>(lsym) - static_cast<double>(v.front()) <= 0.0;
    };
    if (lsym != 0 && (!reaches_left(lmax) || !reaches_left(lmin))) {
      if (lsym == imax.front()) {
        lmax = reversed_slice(imax, 0, nb);
      } else {
        lmin = reversed_slice(imin, 0, nb);
      }
      lsym = 0;
    }

    if (imax.back() < imin.back()) {
      if (at(last) < at(imax.back())) {
        rmax = reversed_slice(imax, nmax - nb, nmax);
        rmin = reversed_slice(imin, nmin - nb - 1, nmin - 1);
        rsym = imin.back();
      } else {
        rmax = reversed_slice(imax, nmax - nb + 1, nmax);
        rmax.insert(rmax.begin(), last);
        rmin = reversed_slice(imin, nmin - nb, nmin);
      }
    } else {
      if (at(last) > at(imin.back())) {
        rmax = reversed_slice(imax, nmax - nb - 1, nmax - 1);
        rmin = reversed_slice(imin, nmin - nb, nmin);
        rsym = imax.back();
      } else {
        rmax = reversed_slice(imax, nmax - nb, nmax);
        rmin = reversed_slice(imin, nmin - nb + 1, nmin);
        rmin.insert(rmin.begin(), last);
      }
    }
    auto reaches_right = [&](const std::vector<std::size_t>& v) {
      return v.empty() ||
             2.0 * static_cast<double>(rsym) - static_cast<double>(v.back()) >= static_cast<double>(last);
    };
    if (rsym != last && (!reaches_right(rmax) || !reaches_right(rmin))) {
      if (rsym == imax.back()) {
        rmax = reversed_slice(imax, nmax - nb, nmax);
      } else {
        rmin = reversed_slice(imin, nmin - nb, nmin);
      }
      rsym = last;
    }
  }

  std::pair<Knots, Knots> out;
  auto build = [&](Knots& k, const std::vector<std::size_t>& left, const std::vector<std::size_t>& mid,
                   const std::vector<std::size_t>& right) {
    mirror_into(k, h, left, static_cast<double>(lsym));
    for (auto i : mid) {
      k.x.push_back(static_cast<double>(i));
      k.y.push_back(at(i));
    }
    mirror_into(k, h, right, static_cast<double>(rsym));
    Knots dedup;
    for (std::size_t i = 0; i < k.x.size(); ++i) {
      if (!dedup.x.empty() && k.x[i] <= dedup.x.back()) continue;
      dedup.x.push_back(k.x[i]);
      dedup.y.push_back(k.y[i]);
    }
    k = std::move(dedup);
  };
  build(out.first, lmax, imax, rmax);
  build(out.second, lmin, imin, rmin);
  return out;
}

}  // namespace

void SiftConfig::validate() const {
  if (max_imfs < 1) throw ParamError("max_imfs must be >= 1");
  if (max_sift_iters < 1) throw ParamError("max_sift_iters must be >= 1");
  if (!(sd_threshold > 0.0)) throw ParamError("sd_threshold must be > 0");
  if (boundary < 0) throw ParamError("boundary must be >= 0");
}

Vector ImfStack::reconstruct() const {
  Vector sum = trend;
  for (const auto& imf : imfs) sum += imf;
  return sum;
}

Extrema find_extrema(const Vector& signal) {
  const auto n = static_cast<std::size_t>(signal.size());
  if (n < 3) throw SizeError("find_extrema needs at least 3 samples");

  Extrema ex;
  // Walk runs of equal values; a run is an extremum when both neighbours are
  // on the same side of it and it does not touch either end.
  std::size_t start = 0;
  double prev_value = 0.0;
  bool have_prev = false;
  while (start < n) {
    std::size_t end = start;
    while (end + 1 < n && signal(static_cast<Eigen::Index>(end + 1)) == signal(static_cast<Eigen::Index>(start))) {
      ++end;
    }
    const double v = signal(static_cast<Eigen::Index>(start));
    if (have_prev && end + 1 < n) {
      const double next = signal(static_cast<Eigen::Index>(end + 1));
      const std::size_t mid = (start + end) / 2;
      if (v > prev_value && v > next) {
        ex.max_index.push_back(mid);
        ex.max_value.push_back(v);
      } else if (v < prev_value && v < next) {
        ex.min_index.push_back(mid);
        ex.min_value.push_back(v);
      }
    }
    prev_value = v;
    have_prev = true;
    start = end + 1;
  }
  return ex;
}

std::size_t count_zero_crossings(const Vector& signal) {
  std::size_t crossings = 0;
  int last_sign = 0;
  for (Eigen::Index i = 0; i < signal.size(); ++i) {
    const double v = signal(i);
    const int s = (v > 0.0) - (v < 0.0);
    if (s == 0) continue;
    if (last_sign != 0 && s != last_sign) ++crossings;
    last_sign = s;
  }
  return crossings;
}

bool satisfies_imf_condition(const Vector& signal) {
  const auto extrema = static_cast<long>(find_extrema(signal).count());
  const auto zeros = static_cast<long>(count_zero_crossings(signal));
  return std::abs(extrema - zeros) <= 1;
}

Vector envelope(const std::vector<std::size_t>& index, const std::vector<double>& value, std::size_t length,
                int boundary) {
  if (index.size() != value.size()) throw ParamError("extrema index/value length mismatch");
  const std::size_t k = index.size();
  const std::size_t mirror = std::min<std::size_t>(static_cast<std::size_t>(std::max(boundary, 0)), k);
  if (k == 0 || k + 2 * mirror < 2) throw EnvelopeError("too few extrema for an envelope");

  const double right_edge = static_cast<double>(length - 1);
  std::vector<double> x;
  std::vector<double> y;
  x.reserve(k + 2 * mirror);
  y.reserve(k + 2 * mirror);
  for (std::size_t i = mirror; i-- > 0;) {
    x.push_back(-static_cast<double>(index[i]));
    y.push_back(value[i]);
  }
  for (std::size_t i = 0; i < k; ++i) {
    x.push_back(static_cast<double>(index[i]));
    y.push_back(value[i]);
  }
  for (std::size_t i = 0; i < mirror; ++i) {
    const std::size_t src = k - 1 - i;
    x.push_back(2.0 * right_edge - static_cast<double>(index[src]));
    y.push_back(value[src]);
  }
  return natural_spline(x, y, length);
}

std::pair<Vector, Vector> envelope_pair(const Vector& signal, const Extrema& extrema, int boundary) {
  if (extrema.count() == 0) throw EnvelopeError("signal has no extrema");
  const auto [upper, lower] = rilling_knots(signal, extrema, boundary);
  if (upper.x.size() < 2 || lower.x.size() < 2) throw EnvelopeError("too few knots for an envelope");
  const auto length = static_cast<std::size_t>(signal.size());
  return {natural_spline(upper.x, upper.y, length), natural_spline(lower.x, lower.y, length)};
}

SiftResult sift(const Vector& signal, const SiftConfig& config) {
  config.validate();
  if (signal.size() < 4) throw SizeError("sift needs at least 4 samples");
  if (!signal.allFinite()) throw DomainError("sift input contains non-finite values");

  Vector h = signal;
  SiftReport report;
  for (int iter = 1; iter <= config.max_sift_iters; ++iter) {
    // Envelopes of h minus its end-to-end chord.
    const Vector line = Vector::LinSpaced(h.size(), h(0), h(h.size() - 1));
    const Vector g = h - line;
    const Extrema ex = find_extrema(g);
    Vector upper;
    Vector lower;
    try {
      std::tie(upper, lower) = envelope_pair(g, ex, config.boundary);
    } catch (const EnvelopeError&) {
      if (iter == 1) throw NoImfError("signal has too few extrema to sift");
      break;
    }
    const Vector mean = line + 0.5 * (upper + lower);
    const double energy = h.squaredNorm();
    const double sd = energy > 0.0 ? mean.squaredNorm() / energy : 0.0;
    h -= mean;
    report.iterations = iter;
    report.final_sd = sd;
    report.max_envelope_mean = mean.cwiseAbs().maxCoeff();
    if (sd < config.sd_threshold && satisfies_imf_condition(h)) break;
  }
  Vector residual = signal - h;
  return {std::move(h), std::move(residual), report};
}

ImfStack decompose(const Vector& signal, const SiftConfig& config) {
  config.validate();
  ImfStack stack;
  stack.source_length = static_cast<std::size_t>(signal.size());
  Vector residual = signal;
  const double scale = signal.size() ? signal.cwiseAbs().maxCoeff() : 0.0;
  while (static_cast<int>(stack.imfs.size()) < config.max_imfs) {
    // Stop once what is left is flat to rounding; its extrema are noise.
    const Vector bent = residual - Vector::LinSpaced(residual.size(), residual(0), residual(residual.size() - 1));
    if (bent.maxCoeff() - bent.minCoeff() <= 1e-12 * scale) break;
    SiftResult r;
    try {
      r = sift(residual, config);
    } catch (const NoImfError&) {
      break;
    }
    residual -= r.imf;
    stack.imfs.push_back(std::move(r.imf));
    stack.reports.push_back(r.report);
  }
  stack.trend = std::move(residual);
  return stack;
}

double mean_period_samples(const Vector& imf) {
  const std::size_t extrema = imf.size() >= 3 ? find_extrema(imf).count() : 0;
  if (extrema == 0) return 0.0;
  return 2.0 * static_cast<double>(imf.size()) / static_cast<double>(extrema);
}

BandpassResult bandpass_matrix(const SpectraMatrix& x, const SiftConfig& config, const BandSelection& band) {
  config.validate();
  if (band.drop_fastest < 0 || band.drop_slowest < 0) throw ParamError("band drop counts must be >= 0");
  if (!(band.max_period_nm >= 0.0)) throw ParamError("max_period_nm must be >= 0");

  const auto& values = x.values();
  bool any_varying = false;
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    if (values.col(j).maxCoeff() != values.col(j).minCoeff()) any_varying = true;
  }
  if (!any_varying) throw DegenerateInputError("every column is constant; nothing to band-filter");

  Matrix out(values.rows(), values.cols());
  std::vector<ColumnBand> columns;
  columns.reserve(static_cast<std::size_t>(values.cols()));
  const auto fast = static_cast<std::size_t>(band.drop_fastest);
  const auto slow = static_cast<std::size_t>(band.drop_slowest);
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    const ImfStack stack = decompose(values.col(j), config);
    ColumnBand info;
    info.imf_count = stack.imfs.size();
    for (const auto& imf : stack.imfs) info.periods_nm.push_back(mean_period_samples(imf) * x.grid().step_nm());
    std::size_t slow_drop = slow;
    if (band.max_period_nm > 0.0) {
      slow_drop = 0;
      while (slow_drop < info.imf_count && info.periods_nm[info.imf_count - 1 - slow_drop] > band.max_period_nm) {
        ++slow_drop;
      }
    }
    if (info.imf_count >= fast + slow_drop + 1) {
      info.first_kept = fast;
      info.kept = info.imf_count - fast - slow_drop;
    } else {
      info.fallback = true;
      info.first_kept = 0;
      info.kept = info.imf_count;
    }
    Vector sum = Vector::Zero(values.rows());
    for (std::size_t k = info.first_kept; k < info.first_kept + info.kept; ++k) sum += stack.imfs[k];
    sum.array() -= sum.mean();
    out.col(j) = sum;
    columns.push_back(std::move(info));
  }
  return {SpectraMatrix(x.grid(), std::move(out), x.labels()), std::move(columns)};
}

void write_imf_dump(const WavelengthGrid& grid, const ImfStack& stack, const std::filesystem::path& path) {
  Matrix m(static_cast<Eigen::Index>(stack.source_length), static_cast<Eigen::Index>(stack.imfs.size() + 1));
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < stack.imfs.size(); ++k) {
    m.col(static_cast<Eigen::Index>(k)) = stack.imfs[k];
    labels.push_back("imf" + std::to_string(k + 1));
  }
  m.col(m.cols() - 1) = stack.trend;
  labels.emplace_back("trend");
  save_spectra(SpectraMatrix(grid, std::move(m), std::move(labels)), path);
}

}  // namespace sbss::emd

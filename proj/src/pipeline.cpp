#include "sbss/pipeline.hpp"

#include "csv_io.hpp"
#include "sbss/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>

namespace sbss::pipeline {

namespace fs = std::filesystem;

namespace {

std::string yes_no(bool v) { return v ? "true" : "false"; }

template <typename F>
auto tagged(const std::string& stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::string render_warnings(const std::vector<Warning>& warnings) {
  std::string t = "\n[warnings]\n";
  for (const auto& w : warnings) t += render_warning(w) + "\n";
  return t;
}

std::string join_periods(const std::vector<double>& periods) {
  std::string s;
  for (std::size_t i = 0; i < periods.size(); ++i) s += (i ? ";" : "") + format_double(periods[i]);
  return s;
}

void require_file(const std::string& key, const fs::path& path) {
  if (path.empty()) throw ConfigError("'" + key + "' is required");
  if (!fs::is_regular_file(path)) throw ConfigError("'" + key + "' file not found: " + path.string());
}

// ln I - ln I0, with a one-column I0 applied to every input column. Without
// I0 the input is already logged.
SpectraMatrix log_ratio(const SpectraMatrix& raw, const fs::path& i0_path) {
  if (i0_path.empty()) return raw;
  const SpectraMatrix logged = log_transform(raw);
  const SpectraMatrix i0 = log_transform(load_spectra(i0_path));
  if (!i0.grid().matches(raw.grid())) throw GridError("i0 grid does not match input grid");
  Matrix x = logged.values();
  if (i0.columns() == 1) {
    x.colwise() -= i0.values().col(0);
  } else if (i0.columns() == raw.columns()) {
    x -= i0.values();
  } else {
    throw ConfigError("i0 has " + std::to_string(i0.columns()) + " columns; expected 1 or " +
                      std::to_string(raw.columns()));
  }
  return {raw.grid(), std::move(x), raw.labels()};
}

Matrix centered(const Matrix& m) { return m.rowwise() - m.colwise().mean(); }

void check_zero_mean(const ReferenceSet& refs) {
  const Matrix& a = refs.references();
  for (Eigen::Index g = 0; g < a.cols(); ++g) {
    const double scale = a.col(g).cwiseAbs().maxCoeff();
    const double mean = a.col(g).mean();
    if (std::abs(mean) > 1e-8 * scale) {
      throw PreconditionError("reference '" + refs.gas_names()[static_cast<std::size_t>(g)] +
                              "' is not band filtered: mean " + format_double(mean) + ", max " +
                              format_double(scale));
    }
  }
}

}  // namespace

void PipelineConfig::validate() const {
  try {
    sift.validate();
    huber.validate();
  } catch (const ParamError& e) {
    throw ConfigError(e.what());
  }
  if (band.drop_fastest < 0 || band.drop_slowest < 0) throw ConfigError("drop_fastest and drop_slowest must be >= 0");
  if (!(band.max_period_nm >= 0.0)) throw ConfigError("max_period_nm must be >= 0");
  if (d_min < 1 || d_max < d_min) throw ConfigError("need 1 <= d_min <= d_max");
  if (!(match_threshold > 0.0 && match_threshold <= 1.0)) throw ConfigError("match_threshold must be in (0, 1]");
  if (!std::isfinite(kurtosis_threshold)) throw ConfigError("kurtosis_threshold must be finite");
}

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = {
      {"input", "input spectra CSV"},
      {"i0", "lamp spectrum CSV; when absent the input is taken as log spectra"},
      {"references", "band-filtered reference spectra CSV"},
      {"library", "reference library CSV for labelling components"},
      {"out", "output directory"},
      {"max_imfs", "maximum IMFs per column"},
      {"max_sift_iters", "maximum sifting iterations per IMF"},
      {"sd_threshold", "sifting stop threshold"},
      {"boundary", "extrema mirrored at each end"},
      {"drop_fastest", "leading IMFs removed"},
      {"drop_slowest", "trailing IMFs removed besides the trend"},
      {"max_period_nm", "remove IMFs with longer mean period (0 = use drop_slowest)"},
      {"edge_trim", "pixels excluded at each end before fitting"},
      {"tuning_multiplier", "Huber k in units of the residual scale"},
      {"scale_mode", "mad or fixed"},
      {"fixed_sigma", "residual scale for scale_mode = fixed"},
      {"max_iters", "IRLS iteration cap"},
      {"rel_tol", "IRLS relative parameter tolerance"},
      {"nonneg_mode", "monitor or project"},
      {"d_min", "smallest component count scanned"},
      {"d_max", "largest component count scanned"},
      {"match_threshold", "|correlation| for components to cluster"},
      {"kurtosis_threshold", "Gaussianity band on excess kurtosis (<= 0 = automatic)"},
  };
  return keys;
}

PipelineConfig parse_config(const config::Entries& entries, PipelineConfig base) {
  using namespace sbss::config;
  for (const auto& [key, value] : entries) {
    bool known = false;
    for (const auto& k : config_keys()) known = known || k.key == key;
    if (!known) throw ConfigError("unknown config key '" + key + "'");
  }
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = entries.find(key);
    if (it == entries.end()) return std::nullopt;
    return it->second;
  };
  auto as_int = [&](const char* key, const std::string& v) { return static_cast<int>(to_integer(key, v)); };

  if (auto v = get("input")) base.input = *v;
  if (auto v = get("i0")) base.i0 = *v;
  if (auto v = get("references")) base.references = *v;
  if (auto v = get("library")) base.library = *v;
  if (auto v = get("out")) base.out = *v;
  if (auto v = get("max_imfs")) base.sift.max_imfs = as_int("max_imfs", *v);
  if (auto v = get("max_sift_iters")) base.sift.max_sift_iters = as_int("max_sift_iters", *v);
  if (auto v = get("sd_threshold")) base.sift.sd_threshold = to_double("sd_threshold", *v);
  if (auto v = get("boundary")) base.sift.boundary = as_int("boundary", *v);
  if (auto v = get("drop_fastest")) base.band.drop_fastest = as_int("drop_fastest", *v);
  if (auto v = get("drop_slowest")) base.band.drop_slowest = as_int("drop_slowest", *v);
  if (auto v = get("max_period_nm")) base.band.max_period_nm = to_double("max_period_nm", *v);
  if (auto v = get("edge_trim")) {
    const long t = to_integer("edge_trim", *v);
    if (t < 0) throw ConfigError("edge_trim must be >= 0");
    base.edge_trim = static_cast<std::size_t>(t);
  }
  if (auto v = get("tuning_multiplier")) base.huber.tuning_multiplier = to_double("tuning_multiplier", *v);
  try {
    if (auto v = get("scale_mode")) base.huber.scale_mode = robust::parse_scale_mode(*v);
    if (auto v = get("nonneg_mode")) base.huber.nonneg_mode = robust::parse_nonneg_mode(*v);
  } catch (const ParamError& e) {
    throw ConfigError(e.what());
  }
  if (auto v = get("fixed_sigma")) base.huber.fixed_sigma = to_double("fixed_sigma", *v);
  if (auto v = get("max_iters")) base.huber.max_iters = as_int("max_iters", *v);
  if (auto v = get("rel_tol")) base.huber.rel_tol = to_double("rel_tol", *v);
  if (auto v = get("d_min")) base.d_min = as_int("d_min", *v);
  if (auto v = get("d_max")) base.d_max = as_int("d_max", *v);
  if (auto v = get("match_threshold")) base.match_threshold = to_double("match_threshold", *v);
  if (auto v = get("kurtosis_threshold")) base.kurtosis_threshold = to_double("kurtosis_threshold", *v);
  base.validate();
  return base;
}

std::string render_config(const PipelineConfig& c) {
  std::string t;
  auto line = [&](const std::string& k, const std::string& v) { t += k + " = " + v + "\n"; };
  line("input", c.input.string());
  line("i0", c.i0.string());
  line("references", c.references.string());
  line("library", c.library.string());
  line("out", c.out.string());
  line("max_imfs", std::to_string(c.sift.max_imfs));
  line("max_sift_iters", std::to_string(c.sift.max_sift_iters));
  line("sd_threshold", format_double(c.sift.sd_threshold));
  line("boundary", std::to_string(c.sift.boundary));
  line("drop_fastest", std::to_string(c.band.drop_fastest));
  line("drop_slowest", std::to_string(c.band.drop_slowest));
  line("max_period_nm", format_double(c.band.max_period_nm));
  line("edge_trim", std::to_string(c.edge_trim));
  line("tuning_multiplier", format_double(c.huber.tuning_multiplier));
  line("scale_mode", robust::to_string(c.huber.scale_mode));
  line("fixed_sigma", format_double(c.huber.fixed_sigma));
  line("max_iters", std::to_string(c.huber.max_iters));
  line("rel_tol", format_double(c.huber.rel_tol));
  line("nonneg_mode", robust::to_string(c.huber.nonneg_mode));
  line("d_min", std::to_string(c.d_min));
  line("d_max", std::to_string(c.d_max));
  line("match_threshold", format_double(c.match_threshold));
  line("kurtosis_threshold", format_double(c.kurtosis_threshold));
  return t;
}

std::string render_warning(const Warning& w) {
  return "[" + w.stage + "]" + (w.column.empty() ? "" : " " + w.column + ":") + " " + w.message;
}

EmdStage run_emd_stage(const PipelineConfig& config, const fs::path& input) {
  return tagged("emd", [&] {
    config.validate();
    const SpectraMatrix x = log_ratio(load_spectra(input), config.i0);
    EmdStage stage{emd::bandpass_matrix(x, config.sift, config.band), {}};

    std::string t = "# band filter report\n";
    t += "columns = " + std::to_string(x.columns()) + "\n";
    t += "log_ratio = " + yes_no(!config.i0.empty()) + "\n";
    t += "drop_fastest = " + std::to_string(config.band.drop_fastest) + "\n";
    t += "drop_slowest = " + std::to_string(config.band.drop_slowest) + "\n";
    t += "max_period_nm = " + format_double(config.band.max_period_nm) + "\n";
    t += "\n[columns]\ncolumn,imfs,first_kept,kept,fallback,periods_nm\n";
    for (std::size_t j = 0; j < stage.bandpass.columns.size(); ++j) {
      const auto& c = stage.bandpass.columns[j];
      const std::string& label = x.labels()[j];
      t += label + "," + std::to_string(c.imf_count) + "," + std::to_string(c.first_kept) + "," +
           std::to_string(c.kept) + "," + yes_no(c.fallback) + "," + join_periods(c.periods_nm) + "\n";
      if (c.fallback) {
        stage.warnings.push_back({"emd", label,
                                  "only " + std::to_string(c.imf_count) +
                                      " IMFs; band fallback keeps every IMF, removes the trend"});
      }
    }
    t += render_warnings(stage.warnings);

    fs::create_directories(config.out);
    save_spectra(stage.bandpass.filtered, config.out / "preprocessed.csv");
    csv::write_text(config.out / "emd_report.txt", t);
    return stage;
  });
}

FitStage run_fit_stage(const PipelineConfig& config, const fs::path& input) {
  return tagged("fit", [&] {
    config.validate();
    const SpectraMatrix xhat = load_spectra(input);
    const ReferenceSet refs = load_references(config.references);
    if (!xhat.grid().matches(refs.grid())) throw GridError("reference grid does not match spectra grid");
    check_zero_mean(refs);

    const std::size_t p = xhat.pixels();
    if (2 * config.edge_trim + 2 > p) {
      throw ConfigError("edge_trim = " + std::to_string(config.edge_trim) + " leaves fewer than 2 of " +
                        std::to_string(p) + " pixels");
    }
    const std::size_t count = p - 2 * config.edge_trim;
    const SpectraMatrix xw = crop_pixels(xhat, config.edge_trim, count);
    const SpectraMatrix aw = crop_pixels(refs.as_spectra(), config.edge_trim, count);
    const SpectraMatrix xc(xw.grid(), centered(xw.values()), xw.labels());
    const ReferenceSet ac(aw.grid(), centered(aw.values()), refs.gas_names());

    FitStage stage{robust::irls_fit(xc, ac, config.huber), {}};
    const auto& fit = stage.fit;
    const auto& labels = xc.labels();
    for (const auto& e : fit.negativity_report) {
      stage.warnings.push_back({"fit", labels[e.column],
                                "negative coefficient for " + refs.gas_names()[e.gas] + " = " + format_double(e.value)});
    }
    for (std::size_t j = 0; j < fit.iterations.size(); ++j) {
      if (fit.iterations[j] >= config.huber.max_iters) {
        stage.warnings.push_back({"fit", labels[j], "IRLS hit max_iters without converging"});
      }
    }

    std::string t = robust::fit_report(fit).text;
    t += "\n[window]\nedge_trim = " + std::to_string(config.edge_trim) + "\nfirst_nm = " +
         format_double(xc.grid().start_nm()) + "\nlast_nm = " + format_double(xc.grid().end_nm()) +
         "\npixels = " + std::to_string(count) + "\n";
    t += render_warnings(stage.warnings);

    fs::create_directories(config.out);
    save_coefficients(fit.coefficients, config.out / "coefficients.csv");
    save_spectra(fit.residuals, config.out / "residuals.csv");
    csv::write_text(config.out / "fit_report.txt", t);
    return stage;
  });
}

IcaStage run_ica_stage(const PipelineConfig& config, const fs::path& input) {
  return tagged("ica", [&] {
    config.validate();
    const SpectraMatrix r = load_spectra(input);
    if (static_cast<std::size_t>(config.d_max) > r.columns()) {
      throw ConfigError("d_max = " + std::to_string(config.d_max) + " exceeds the " + std::to_string(r.columns()) +
                        " residual columns");
    }
    IcaStage stage{ica::stability_scan(r, config.d_min, config.d_max, config.match_threshold,
                                       config.kurtosis_threshold),
                   {}};
    auto& rep = stage.stability;

    std::optional<ReferenceSet> library;
    if (!config.library.empty()) {
      const ReferenceSet full = load_references(config.library);
      const SpectraMatrix cropped = crop_to_grid(full.as_spectra(), r.grid());
      library.emplace(cropped.grid(), cropped.values(), full.gas_names());
      ica::calibrate(rep, *library);
    }

    if (rep.gaussian_only) {
      stage.warnings.push_back({"ica", "", "no reliable non-Gaussian structure: every component lies inside the "
                                           "Gaussian kurtosis band"});
    } else if (rep.persistent_count() == 0) {
      stage.warnings.push_back({"ica", "", "no component persists across the scanned component counts"});
    }

    fs::create_directories(config.out);
    for (const auto& run : rep.runs) {
      std::vector<std::string> labels;
      for (int i = 0; i < run.d; ++i) labels.push_back("u" + std::to_string(i + 1));
      save_spectra(SpectraMatrix(r.grid(), run.sources.transpose(), labels),
                   config.out / ("components_d" + std::to_string(run.d) + ".csv"));
    }

    Matrix reps(static_cast<Eigen::Index>(r.pixels()), static_cast<Eigen::Index>(rep.clusters.size()));
    std::vector<std::string> names;
    for (std::size_t k = 0; k < rep.clusters.size(); ++k) {
      reps.col(static_cast<Eigen::Index>(k)) = rep.clusters[k].representative;
      names.push_back("cluster" + std::to_string(k));
    }
    save_spectra(SpectraMatrix(r.grid(), reps, names), config.out / "stability_components.csv");

    if (library) {
      std::string m = "cluster,persistence,kurtosis";
      for (const auto& g : library->gas_names()) m += "," + g;
      m += ",best_reference,best_correlation\n";
      for (std::size_t k = 0; k < rep.clusters.size(); ++k) {
        const auto& cl = rep.clusters[k];
        m += names[k] + "," + format_double(cl.persistence) + "," + format_double(cl.kurtosis);
        for (Eigen::Index g = 0; g < library->references().cols(); ++g) {
          m += "," + format_double(ica::match_component(cl.representative, library->references().col(g)));
        }
        m += "," + cl.best_reference.value_or("") + "," + format_double(cl.best_correlation) + "\n";
      }
      csv::write_text(config.out / "match_table.csv", m);
    }

    std::string t = ica::render_stability_report(rep);
    t += render_warnings(stage.warnings);
    csv::write_text(config.out / "stability_report.txt", t);
    return stage;
  });
}

PipelineReport run_pipeline(const PipelineConfig& config) {
  config.validate();
  require_file("input", config.input);
  require_file("references", config.references);
  if (!config.i0.empty()) require_file("i0", config.i0);
  if (!config.library.empty()) require_file("library", config.library);

  {
    const SpectraMatrix input = load_spectra(config.input);
    const ReferenceSet refs = load_references(config.references);
    if (!input.grid().matches(refs.grid())) throw GridError("reference grid does not match input grid");
    if (!config.i0.empty() && !load_spectra(config.i0).grid().matches(input.grid())) {
      throw GridError("i0 grid does not match input grid");
    }
    if (!config.library.empty() && !load_references(config.library).grid().matches(input.grid())) {
      throw GridError("library grid does not match input grid");
    }
    if (static_cast<std::size_t>(config.d_max) > input.columns()) {
      throw ConfigError("d_max = " + std::to_string(config.d_max) + " exceeds the " +
                        std::to_string(input.columns()) + " input columns");
    }
  }

  std::vector<StageTiming> timings;
  auto timed = [&](const std::string& stage, const auto& body) {
    const auto t0 = std::chrono::steady_clock::now();
    auto result = body();
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    timings.push_back({stage, dt.count()});
    return result;
  };

  EmdStage emd = timed("emd", [&] { return run_emd_stage(config, config.input); });
  FitStage fit = timed("fit", [&] { return run_fit_stage(config, config.out / "preprocessed.csv"); });
  IcaStage ica = timed("ica", [&] { return run_ica_stage(config, config.out / "residuals.csv"); });

  std::vector<Warning> warnings = emd.warnings;
  warnings.insert(warnings.end(), fit.warnings.begin(), fit.warnings.end());
  warnings.insert(warnings.end(), ica.warnings.begin(), ica.warnings.end());
  PipelineReport report{std::move(emd.bandpass), std::move(fit.fit), std::move(ica.stability), std::move(warnings),
                        std::move(timings)};
  csv::write_text(config.out / "report.txt", render_report(config, report));
  return report;
}

std::string render_report(const PipelineConfig& config, const PipelineReport& report) {
  std::string t = "# semi-blind separation report\n\n[config]\n" + render_config(config);

  t += "\n[emd]\n";
  std::size_t fallbacks = 0;
  for (const auto& c : report.bandpass.columns) fallbacks += c.fallback ? 1 : 0;
  t += "columns = " + std::to_string(report.bandpass.columns.size()) + "\n";
  t += "fallback_columns = " + std::to_string(fallbacks) + "\n";
  t += "imfs =";
  for (std::size_t j = 0; j < report.bandpass.columns.size(); ++j) {
    t += (j ? ", " : " ") + std::to_string(report.bandpass.columns[j].imf_count);
  }
  t += "\nkept =";
  for (std::size_t j = 0; j < report.bandpass.columns.size(); ++j) {
    t += (j ? ", " : " ") + std::to_string(report.bandpass.columns[j].kept);
  }

  const auto& coef = report.fit.coefficients;
  t += "\n\n[fit]\ngases = ";
  for (std::size_t g = 0; g < coef.gas_names().size(); ++g) t += (g ? "," : "") + coef.gas_names()[g];
  t += "\nnegative_entries = " + std::to_string(report.fit.negativity_report.size()) + "\n";
  int max_it = 0;
  for (int it : report.fit.iterations) max_it = std::max(max_it, it);
  t += "max_iterations = " + std::to_string(max_it) + "\n";

  const auto& st = report.stability;
  t += "\n[ica]\nd_range = " + std::to_string(st.d_min) + ".." + std::to_string(st.d_max) + "\n";
  t += "persistent_clusters = " + std::to_string(st.persistent_count()) + "\n";
  t += "gaussian_only = " + yes_no(st.gaussian_only) + "\n";
  t += "cluster,persistence,kurtosis,best_reference,best_correlation\n";
  for (std::size_t k = 0; k < st.clusters.size(); ++k) {
    const auto& cl = st.clusters[k];
    t += "cluster" + std::to_string(k) + "," + format_double(cl.persistence) + "," + format_double(cl.kurtosis) +
         "," + cl.best_reference.value_or("") + "," + format_double(cl.best_correlation) + "\n";
  }
  t += render_warnings(report.warnings);
  return t;
}

}  // namespace sbss::pipeline

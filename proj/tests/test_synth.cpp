#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sbss/emd.hpp"
#include "sbss/errors.hpp"
#include "sbss/robust_fit.hpp"
#include "sbss/synth.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace sbss;
using namespace sbss::synth;

namespace {

SceneConfig quiet_scene() {
  SceneConfig s = default_scene();
  s.noise = {};
  s.background.clear();
  s.slit_fwhm_nm = 0.0;
  return s;
}

// One gas with a single peak centred on pixel `pixel`.
SceneConfig single_peak_scene(std::size_t pixel, double rho, std::size_t n = 1) {
  SceneConfig s = quiet_scene();
  GasModel g;
  g.name = "x";
  g.peaks = {{s.grid.at(pixel), 0.2, 1e-19}};
  g.concentration.assign(n, rho);
  s.gases = {g};
  return s;
}

Vector centred(const Vector& v) { return v.array() - v.mean(); }

}  // namespace

TEST_CASE("default scene") {
  const SceneConfig s = default_scene();
  CHECK(s.grid.start_nm() == 340.0);
  CHECK(s.grid.step_nm() == 0.043);
  CHECK(s.grid.pixels() == 1024);
  CHECK(s.path_length_cm == 5200.0);
  CHECK(s.measurements() == 11);
  REQUIRE(s.gases.size() == 3);
  std::size_t hidden = 0;
  for (const auto& g : s.gases) hidden += g.known ? 0 : 1;
  CHECK(hidden == 1);

  // The hidden O3 stand-in is at least 100x weaker than NO2 in the window.
  auto peak_sigma = [&](const std::string& name) {
    double top = 0.0;
    for (const auto& g : s.gases) {
      for (const auto& pk : g.peaks) {
        if (g.name == name) top = std::max(top, pk.amplitude);
      }
    }
    return top;
  };
  CHECK(peak_sigma("no2") >= 100.0 * peak_sigma("o3"));
}

TEST_CASE("no absorbers give the lamp") {
  SceneConfig s = quiet_scene();
  for (auto& g : s.gases) std::fill(g.concentration.begin(), g.concentration.end(), 0.0);
  const SpectraMatrix i = simulate_intensity(s);
  const Vector lamp = s.lamp_on_grid();
  for (std::size_t j = 0; j < i.columns(); ++j) CHECK(i.column(j) == lamp);
  CHECK(i.labels().front() == "m00");
  CHECK(i.labels().back() == "m10");
}

TEST_CASE("optical depth 0.01 at the peak pixel") {
  const std::size_t pixel = 400;
  SceneConfig s = single_peak_scene(pixel, 0.0);
  s.gases[0].concentration = {0.01 / (1e-19 * s.path_length_cm)};
  const SpectraMatrix i = simulate_intensity(s);
  const double lamp = s.lamp_on_grid()(pixel);
  CHECK(std::abs(std::log(lamp / i.values()(pixel, 0)) - 0.01) <= 1e-12);
}

TEST_CASE("doubling rho L doubles the log deficit") {
  SceneConfig s = quiet_scene();
  for (auto& g : s.gases) g.concentration.resize(2);
  for (auto& g : s.gases) g.concentration[1] = 2.0 * g.concentration[0];
  const Matrix li = simulate_intensity(s).values().array().log();
  const Vector l0 = s.lamp_on_grid().array().log();
  const Vector d1 = l0 - li.col(0);
  const Vector d2 = l0 - li.col(1);
  CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, d2.cwiseAbs().maxCoeff()));
}

TEST_CASE("log intensity is affine in each gas's rho L") {
  SceneConfig s = quiet_scene();
  s.background = {0.1, -0.04, 0.01};
  for (std::size_t g = 0; g < s.gases.size(); ++g) {
    SceneConfig t = s;
    for (std::size_t h = 0; h < t.gases.size(); ++h) {
      const double base = s.gases[h].concentration.front();
      t.gases[h].concentration = {base, base, base, base};
      if (h == g) t.gases[h].concentration = {0.0, base, 2.0 * base, 3.0 * base};
    }
    const Matrix li = simulate_intensity(t).values().array().log();
    const Vector second = li.col(0) - 2.0 * li.col(1) + li.col(2);
    const Vector third = li.col(1) - 2.0 * li.col(2) + li.col(3);
    CHECK(second.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(third.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("slit preserves the photon count") {
  SceneConfig delta = quiet_scene();
  SceneConfig wide = delta;
  wide.slit_fwhm_nm = 0.3;
  const Matrix a = simulate_intensity(delta).values();
  const Matrix b = simulate_intensity(wide).values();
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    CHECK(std::abs(b.col(j).sum() - a.col(j).sum()) <= 1e-9 * a.col(j).sum());
    CHECK(b.col(j) != a.col(j));
  }
}

TEST_CASE("intensities stay positive") {
  SceneConfig s = default_scene();
  s.noise = {0.05, 0.05, 3.0};
  s.background = {8.0, -3.0, 2.0};
  for (auto& g : s.gases) {
    for (auto& c : g.concentration) c *= 1e3;
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    s.seed = seed;
    CHECK(simulate_intensity(s).values().minCoeff() > 0.0);
  }
}

TEST_CASE("seeded determinism") {
  const SceneConfig s = default_scene();
  CHECK(simulate_intensity(s).values() == simulate_intensity(s).values());
  SceneConfig t = s;
  t.seed = s.seed + 1;
  CHECK(simulate_intensity(t).values() != simulate_intensity(s).values());
}

TEST_CASE("outliers hit roughly the requested fraction of pixels") {
  SceneConfig s = quiet_scene();
  s.noise = {0.0, 0.1, 0.5};
  const Matrix li = simulate_intensity(s).values().array().log();
  const Matrix clean = simulate_intensity(quiet_scene()).values().array().log();
  const double hit = static_cast<double>(((li - clean).cwiseAbs().array() > 0.25).count()) /
                     static_cast<double>(li.size());
  CHECK(hit == doctest::Approx(0.1).epsilon(0.15));
}

TEST_CASE("scene validation") {
  SUBCASE("non-positive lamp") {
    SceneConfig s = default_scene();
    s.lamp = {1.0, -2.0};
    CHECK_THROWS_AS(simulate_intensity(s), ConfigError);
  }
  SUBCASE("negative concentration") {
    SceneConfig s = default_scene();
    s.gases[0].concentration[3] = -1.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
  SUBCASE("ragged concentration series") {
    SceneConfig s = default_scene();
    s.gases[1].concentration.pop_back();
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
  SUBCASE("zero peak width") {
    SceneConfig s = default_scene();
    s.gases[0].peaks[0].width_nm = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
  SUBCASE("negative noise") {
    SceneConfig s = default_scene();
    s.noise.sigma = -1e-3;
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }
}

TEST_CASE("truth bundle bookkeeping") {
  const TruthBundle b = make_truth_bundle(default_scene());
  CHECK(b.references.gases() == 2);
  CHECK(b.hidden.size() == 1);
  CHECK(b.hidden[0].name == "o3");
  CHECK(b.truth.values().rows() == 2);
  CHECK(b.truth.values().cols() == 11);
  CHECK(b.library.gases() == 3);
  CHECK(b.intensities.columns() == 11);
  CHECK(b.hidden[0].coefficients.size() == 11);

  const SceneConfig s = default_scene();
  for (std::size_t g = 0; g < 2; ++g) {
    for (Eigen::Index j = 0; j < 11; ++j) {
      CHECK(b.truth.values()(static_cast<Eigen::Index>(g), j) ==
            doctest::Approx(s.gases[g].concentration[static_cast<std::size_t>(j)] * s.path_length_cm));
    }
  }
  for (Eigen::Index g = 0; g < 2; ++g) {
    const Vector r = b.references.references().col(g);
    CHECK(std::abs(r.mean()) <= 1e-8 * r.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("truth bundle needs a known gas") {
  SceneConfig s = default_scene();
  for (auto& g : s.gases) g.known = false;
  CHECK_THROWS_AS(make_truth_bundle(s), ConfigError);
}

TEST_CASE("noiseless round trip recovers S within 2%") {
  SceneConfig s = default_scene();
  s.noise = {};
  for (auto& g : s.gases) g.known = true;
  const emd::BandSelection band{0, 1, 9.0};
  const std::size_t trim = 96;
  const TruthBundle b = make_truth_bundle(s, {}, band);

  Matrix x = log_transform(b.intensities).values();
  x.colwise() -= Vector(s.lamp_on_grid().array().log());
  const SpectraMatrix xhat = emd::bandpass_matrix(SpectraMatrix(s.grid, x), {}, band).filtered;

  const std::size_t keep = s.grid.pixels() - 2 * trim;
  Matrix xc = crop_pixels(xhat, trim, keep).values();
  Matrix ac = crop_pixels(b.references.as_spectra(), trim, keep).values();
  for (Eigen::Index j = 0; j < xc.cols(); ++j) xc.col(j) = centred(xc.col(j));
  for (Eigen::Index g = 0; g < ac.cols(); ++g) ac.col(g) = centred(ac.col(g));
  const WavelengthGrid window(s.grid.at(trim), s.grid.step_nm(), keep);
  const robust::FitResult fit =
      robust::irls_fit(SpectraMatrix(window, xc), ReferenceSet(window, ac, b.references.gas_names()));

  const Matrix& got = fit.coefficients.values();
  const Matrix& want = b.truth.values();
  const double worst = ((got - want).array().abs() / want.array().abs()).maxCoeff();
  MESSAGE("max relative error " << worst);
  CHECK(worst <= 0.02);
}

TEST_CASE("scene file parsing") {
  SUBCASE("overrides keep the rest of the base") {
    const SceneConfig s = parse_scene({{"pixels", "512"}, {"seed", "9"}, {"noise_sigma", "0"}, {"known", "no2"}});
    CHECK(s.grid.pixels() == 512);
    CHECK(s.seed == 9);
    CHECK(s.noise.sigma == 0.0);
    CHECK(s.gases[0].known);
    CHECK_FALSE(s.gases[1].known);
    CHECK(s.path_length_cm == default_scene().path_length_cm);
  }
  SUBCASE("gas definitions") {
    const SceneConfig s = parse_scene({{"gases", "a,b"},
                                       {"measurements", "4"},
                                       {"gas.a.peaks", "350:0.5:1e-19; 360:0.4:2e-19"},
                                       {"gas.a.ramp", "1e12,4e12"},
                                       {"gas.b.peaks", "355:0.6:1e-21"},
                                       {"gas.b.concentration", "1e14,2e14,3e14,4e14"},
                                       {"gas.b.known", "false"}});
    REQUIRE(s.gases.size() == 2);
    CHECK(s.gases[0].peaks.size() == 2);
    CHECK(s.gases[0].peaks[1].center_nm == 360.0);
    CHECK(s.gases[0].concentration == std::vector<double>{1e12, 2e12, 3e12, 4e12});
    CHECK_FALSE(s.gases[1].known);
    CHECK(s.measurements() == 4);
  }
  SUBCASE("measurement count stretches default ramps") {
    const SceneConfig s = parse_scene({{"measurements", "5"}});
    CHECK(s.measurements() == 5);
    CHECK(s.gases[0].concentration.front() == default_scene().gases[0].concentration.front());
    CHECK(s.gases[0].concentration.back() == default_scene().gases[0].concentration.back());
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(parse_scene({{"colour", "red"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"gas.co2.peaks", "350:1:1"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"gas.no2.shape", "x"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"gas.no2.peaks", "350:1"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"gas.no2.ramp", "1,2,3"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"known", "co2"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"pixels", "0"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"grid_step_nm", "-0.1"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"seed", "-1"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"noise_sigma", "abc"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"lamp", "-1"}}), ConfigError);
    CHECK_THROWS_AS(parse_scene({{"gas.no2.cross_section_file", "/nonexistent/x.csv"}}), ConfigError);
  }
}

TEST_CASE("cross section file replaces the comb") {
  testutil::TempDir dir("xs");
  std::string text = "wavelength_nm,sigma\n";
  for (int i = 0; i <= 120; ++i) {
    const double wl = 330.0 + 0.5 * i;
    text += std::to_string(wl) + "," + std::to_string(1e-19 * (1.0 + std::sin(wl))) + "\n";
  }
  testutil::write_file(dir / "xs.csv", text);
  const SceneConfig s = parse_scene({{"gas.no2.cross_section_file", (dir / "xs.csv").string()}});
  REQUIRE(s.gases[0].cross_section.has_value());
  const Vector sigma = s.gases[0].sigma_on(s.grid);
  CHECK(sigma(0) == doctest::Approx(1e-19 * (1.0 + std::sin(340.0))).epsilon(1e-3));
}

TEST_CASE("truth bundle files") {
  testutil::TempDir dir("bundle");
  const SceneConfig s = default_scene();
  const TruthBundle b = make_truth_bundle(s);
  write_truth_bundle(b, s, dir.path());
  for (const char* f : {"intensities.csv", "i0.csv", "references.csv", "library.csv", "truth_S.csv", "hidden_o3.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const CoefficientMatrix truth = load_coefficients(dir / "truth_S.csv");
  CHECK(truth.gas_names() == std::vector<std::string>{"no2", "hono", "o3"});
  CHECK(truth.values().row(2).transpose() == b.hidden[0].coefficients);
  CHECK(load_spectra(dir / "intensities.csv").values() == b.intensities.values());
  CHECK(load_spectra(dir / "i0.csv").column(0) == s.lamp_on_grid());
}

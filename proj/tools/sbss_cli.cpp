// sbss: semi-blind source separation of absorption spectra from the command
// line. Exit codes: 0 success, 1 stage failure, 2 usage error.

#include "sbss/config.hpp"
#include "sbss/errors.hpp"
#include "sbss/pipeline.hpp"
#include "sbss/synth.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace {

using sbss::config::Entries;
namespace pl = sbss::pipeline;

constexpr int kUsage = 2;
constexpr int kFailure = 1;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One string slot per key; only flags actually given override the config file.
struct FlagSet {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app, const std::string& key, const std::string& help) {
    options[key] = app->add_option("--" + key, values[key], help);
  }
  void apply(Entries& entries) const {
    for (const auto& [key, opt] : options) {
      if (opt->count() > 0) entries[key] = values.at(key);
    }
  }
};

struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  FlagSet flags;
  std::vector<std::string> required;
};

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return "";
  return s.substr(first, s.find_last_not_of(" \t") - first + 1);
}

Entries load_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    return sbss::config::load(path);
  } catch (const sbss::Error& e) {
    throw UsageError(e.what());
  }
}

Command& add_pipeline_command(CLI::App& root, std::map<std::string, Command>& commands, const std::string& name,
                              const std::string& description, std::vector<std::string> required) {
  Command& c = commands[name];
  c.app = root.add_subcommand(name, description);
  c.app->add_option("--config", c.config_file, "key = value config file; flags override its entries");
  for (const auto& k : pl::config_keys()) c.flags.add(c.app, k.key, k.help);
  c.required = std::move(required);
  return c;
}

pl::PipelineConfig resolve(const Command& c) {
  Entries entries = load_config(c.config_file);
  c.flags.apply(entries);
  for (const auto& key : c.required) {
    const auto it = entries.find(key);
    if (it == entries.end() || it->second.empty()) {
      throw UsageError("missing required option --" + key + " (or '" + key + "' in --config)");
    }
  }
  try {
    return pl::parse_config(entries);
  } catch (const sbss::Error& e) {
    throw UsageError(e.what());
  }
}

void print_timing(const std::string& stage, double seconds) {
  std::printf("stage %s: %.3f s\n", stage.c_str(), seconds);
}

int run_stage(const std::string& name, const Command& c) {
  const pl::PipelineConfig cfg = resolve(c);
  if (name == "run") {
    const pl::PipelineReport report = pl::run_pipeline(cfg);
    for (const auto& t : report.timings) print_timing(t.stage, t.seconds);
    for (const auto& w : report.warnings) std::cout << "warning: " << pl::render_warning(w) << "\n";
    std::cout << "persistent clusters: " << report.stability.persistent_count() << "\n";
    return 0;
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<pl::Warning> warnings;
  if (name == "emd") warnings = pl::run_emd_stage(cfg, cfg.input).warnings;
  if (name == "fit") warnings = pl::run_fit_stage(cfg, cfg.input).warnings;
  if (name == "ica") warnings = pl::run_ica_stage(cfg, cfg.input).warnings;
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
  print_timing(name, dt.count());
  for (const auto& w : warnings) std::cout << "warning: " << pl::render_warning(w) << "\n";
  return 0;
}

struct SynthCommand {
  CLI::App* app = nullptr;
  std::string scene_file;
  std::string out = "synth_out";
  std::vector<std::string> sets;
  FlagSet scene_flags;
  FlagSet band_flags;
};

void add_synth_command(CLI::App& root, SynthCommand& s) {
  s.app = root.add_subcommand("synth", "Generate a synthetic scene with ground truth");
  s.app->add_option("--scene", s.scene_file, "key = value scene file; flags override its entries");
  s.app->add_option("--out", s.out, "output directory");
  s.app->add_option("--set", s.sets, "extra scene entry key=value (repeatable), e.g. gas.o3.known=true");
  for (const auto& k : sbss::synth::scene_keys()) s.scene_flags.add(s.app, k.key, k.help);
  for (const char* key : {"max_imfs", "max_sift_iters", "sd_threshold", "boundary", "drop_slowest", "max_period_nm"}) {
    for (const auto& k : pl::config_keys()) {
      if (k.key == key) s.band_flags.add(s.app, k.key, k.help + " (reference filtering)");
    }
  }
}

int run_synth(const SynthCommand& s) {
  Entries scene = load_config(s.scene_file);
  s.scene_flags.apply(scene);
  for (const auto& item : s.sets) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + item + "'");
    scene[trim(item.substr(0, eq))] = trim(item.substr(eq + 1));
  }
  Entries band;
  s.band_flags.apply(band);

  sbss::synth::SceneConfig config;
  pl::PipelineConfig pcfg;
  try {
    config = sbss::synth::parse_scene(scene);
    pcfg = pl::parse_config(band);
  } catch (const sbss::Error& e) {
    throw UsageError(e.what());
  }
  const sbss::emd::BandSelection reference_band{0, pcfg.band.drop_slowest, pcfg.band.max_period_nm};
  const auto bundle = sbss::synth::make_truth_bundle(config, pcfg.sift, reference_band);
  sbss::synth::write_truth_bundle(bundle, config, s.out);
  std::cout << "wrote " << bundle.intensities.columns() << " measurements to " << s.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-blind source separation of absorption spectra", "sbss"};
  app.require_subcommand(1);
  std::map<std::string, Command> commands;
  add_pipeline_command(app, commands, "run", "Band filter, robust fit and component scan", {"input", "references"});
  add_pipeline_command(app, commands, "emd", "Band filter one spectra file", {"input"});
  add_pipeline_command(app, commands, "fit", "Huber fit of band-filtered spectra", {"input", "references"});
  add_pipeline_command(app, commands, "ica", "JADE stability scan of fit residuals", {"input"});
  SynthCommand synth;
  add_synth_command(app, synth);

  auto usage_for = [&]() -> std::string {
    if (argc > 1) {
      for (auto* sub : app.get_subcommands({})) {
        if (sub->get_name() == argv[1]) return sub->help();
      }
    }
    return app.help();
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << usage_for();
    return kUsage;
  }

  try {
    if (synth.app->parsed()) return run_synth(synth);
    for (const auto& [name, command] : commands) {
      if (command.app->parsed()) return run_stage(name, command);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << usage_for();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}

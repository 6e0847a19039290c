// flatmin: train committee machines with SGD, Entropy-SGD and Replicated-SGD and profile the
// flatness of the minima they reach.

#include "flatmin/config.hpp"
#include "flatmin/data.hpp"
#include "flatmin/experiment.hpp"
#include "flatmin/flatness.hpp"
#include "flatmin/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;
using namespace flatmin;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> presets;
  std::optional<std::uint64_t> seed;
  std::optional<int> restarts;
  std::string out;
  std::string budget;
  std::optional<unsigned> threads;
};

// Thrown for errors in the user's input rather than in the computation.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (!c.presets.empty()) {
    std::vector<Preset> chosen;
    for (const auto& name : c.presets) {
      auto it = std::find_if(cfg.presets.begin(), cfg.presets.end(), [&](const Preset& p) { return p.name == name; });
      Preset pr = it != cfg.presets.end() ? *it : builtin_preset(name);
      if (it == cfg.presets.end() && cfg.dropout) pr.params.dropout = *cfg.dropout;
      chosen.push_back(std::move(pr));
    }
    cfg.presets = std::move(chosen);
  }
  if (c.seed) {
    cfg.base_seed = *c.seed;
    cfg.seeds.clear();
  }
  if (c.restarts) {
    cfg.restarts = *c.restarts;
    if (!cfg.seeds.empty() && cfg.seeds.size() != static_cast<std::size_t>(cfg.restarts)) cfg.seeds.clear();
  }
  if (!c.budget.empty()) cfg.budget = budget_mode_from_string(c.budget);
  if (!c.out.empty()) cfg.out = c.out;
  if (c.threads) cfg.threads = *c.threads;
  validate_config(cfg);
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool with_presets, bool with_restarts) {
  app->add_option("--config", c.config, "TOML experiment config")->check(CLI::ExistingFile);
  if (with_presets) app->add_option("--preset", c.presets, "Preset name (repeatable)");
  app->add_option("--seed", c.seed, "Base seed (restart k uses seed + k)");
  if (with_restarts) app->add_option("--restarts", c.restarts, "Restarts per preset")->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--budget", c.budget, "Epoch accounting")->check(CLI::IsMember({"matched", "per-replica"}));
  app->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
}

void log_run(const RunRecord& r, std::size_t done, std::size_t total) {
  std::cerr << "[" << done << "/" << total << "] " << run_stem(r) << " seed " << r.seed << ": " << r.stop_reason
            << " after " << r.epochs << " epochs, train " << r.train_error << ", test " << r.test_error << "\n";
}

void print_ok(const json& extra) {
  json j = {{"status", "ok"}};
  j.update(extra);
  std::cout << j.dump() << "\n";
}

int cmd_gen_data(const Common& c) {
  ExperimentConfig cfg = resolve(c);
  if (cfg.data.kind != "synthetic") throw UsageError("gen-data writes synthetic datasets; set [dataset] kind = \"synthetic\"");
  const std::uint64_t seed = c.seed.value_or(cfg.data.seed);
  Rng rng(seed);
  Dataset ds =
      synth_teacher_dataset(cfg.data.inputs, cfg.data.teacher_hidden, cfg.data.train_size + cfg.data.test_size, rng);
  ds.provenance.seed = seed;
  fs::create_directories(cfg.out);
  const fs::path path = fs::path(cfg.out) / "dataset.fmds";
  save_dataset(ds, path);
  print_ok({{"dataset", path.string()}, {"patterns", ds.size()}, {"inputs", ds.dim()}, {"seed", seed}});
  return 0;
}

int cmd_train(const Common& c, bool profile) {
  ExperimentConfig cfg = resolve(c);
  if (cfg.presets.size() != 1) throw UsageError("train needs exactly one preset (--preset NAME)");
  cfg.restarts = 1;
  if (!c.seed && !cfg.seeds.empty()) cfg.seeds.resize(1);
  const DataSplit data = build_data(cfg.data);
  std::vector<RunRecord> records{run_single(cfg, cfg.presets.front(), 0, data)};
  log_run(records.front(), 1, 1);
  write_run_outputs(cfg.out, cfg, records);
  if (profile && cfg.flatness.enabled) {
    const ProfileSet ps = profile_minima(records, data.train.data, cfg.flatness, cfg.threads);
    write_profiles(cfg.out, records, ps);
  }
  const auto& r = records.front();
  print_ok({{"out", cfg.out},
            {"preset", r.preset},
            {"stop_reason", r.stop_reason},
            {"train_error", r.train_error},
            {"test_error", r.test_error}});
  return 0;
}

int cmd_experiment(const Common& c) {
  const ExperimentConfig cfg = resolve(c);
  const DataSplit data = build_data(cfg.data);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<RunRecord> records = run_experiment(cfg, data, log_run);
  write_run_outputs(cfg.out, cfg, records);
  std::map<std::string, RunProfiles> averages;
  if (cfg.flatness.enabled) {
    std::cerr << "profiling " << records.size() << " minima\n";
    const ProfileSet ps = profile_minima(records, data.train.data, cfg.flatness, cfg.threads);
    write_profiles(cfg.out, records, ps);
    averages = ps.averages;
  }
  write_report(cfg.out, compare_report(records, averages), records);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  print_ok({{"out", cfg.out}, {"runs", records.size()}, {"seconds", secs}});
  return 0;
}

int cmd_flatness(const Common& c, const std::string& weights_path) {
  ExperimentConfig cfg = resolve(c);
  const DataSplit data = build_data(cfg.data);
  fs::create_directories(cfg.out);
  if (!weights_path.empty()) {
    const WeightMatrix w = read_weights_csv(weights_path);
    if (w.cols() != data.train.dim()) throw UsageError("weights do not match the dataset input size");
    const std::uint64_t seed = c.seed.value_or(cfg.base_seed);
    const auto energy = local_energy_profile(w, data.train.data, cfg.flatness.sigma_grid(),
                                             cfg.flatness.sigma_samples, energy_seed(seed));
    const auto entropy = local_entropy_mc(w, data.train.data, cfg.flatness.d_grid(),
                                          cfg.flatness.entropy_samples, entropy_seed(seed));
    const std::string stem = fs::path(weights_path).stem().string();
    for (const auto& [suffix, prof] : {std::pair{"-energy", &energy}, std::pair{"-entropy", &entropy}}) {
      std::ofstream csv(fs::path(cfg.out) / (stem + suffix + ".csv"), std::ios::binary);
      write_profile_csv(*prof, csv);
      std::ofstream js(fs::path(cfg.out) / (stem + suffix + ".json"), std::ios::binary);
      js << profile_to_json(*prof) << "\n";
    }
    print_ok({{"out", cfg.out}, {"weights", weights_path}, {"reference_error", energy.reference_error}});
    return 0;
  }
  // Re-profile every run of an existing experiment directory.
  std::vector<RunRecord> records = load_records(cfg.out);
  for (auto& r : records) {
    if (r.weights_file.empty()) throw UsageError("run " + run_stem(r) + " has no saved weights");
    r.weights = read_weights_csv(fs::path(cfg.out) / r.weights_file);
  }
  const ProfileSet ps = profile_minima(records, data.train.data, cfg.flatness, cfg.threads);
  write_profiles(cfg.out, records, ps);
  print_ok({{"out", cfg.out}, {"runs", records.size()}});
  return 0;
}

int cmd_report(const Common& c) {
  if (c.out.empty()) throw UsageError("report needs --out DIR pointing at an experiment directory");
  const fs::path dir = c.out;
  const std::vector<RunRecord> records = load_records(dir);
  std::map<std::string, RunProfiles> averages;
  if (fs::exists(dir / "profiles")) averages = average_by_preset(records, load_run_profiles(dir, records));
  const Report rep = compare_report(records, averages);
  write_report(dir, rep, records);
  std::cout << report_to_json(rep);
  return 0;
}

int fail(const std::string& kind, const std::string& message, const std::string& command, int code) {
  json err = {{"status", "error"}, {"kind", kind}, {"message", message}, {"command", command}};
  std::cerr << err.dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flat-minima training and flatness profiling for committee machines", "flatmin"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common c;
  std::string weights;
  bool profile = false;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic teacher dataset to DIR/dataset.fmds");
  add_common(gen, c, false, false);
  auto* tr = app.add_subcommand("train", "Train one restart of one preset");
  add_common(tr, c, true, false);
  tr->add_flag("--profile", profile, "Also compute flatness profiles of the result");
  auto* ex = app.add_subcommand("experiment", "Multi-preset, multi-restart run with profiles and report");
  add_common(ex, c, true, true);
  auto* fl = app.add_subcommand("flatness", "Profile saved weights (one file, or every run under --out)");
  add_common(fl, c, false, false);
  fl->add_option("--weights", weights, "Weights CSV to profile")->check(CLI::ExistingFile);
  auto* rp = app.add_subcommand("report", "Aggregate an experiment directory into summary tables");
  add_common(rp, c, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), argc > 1 ? argv[1] : "", 2);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "gen-data") return cmd_gen_data(c);
    if (command == "train") return cmd_train(c, profile);
    if (command == "experiment") return cmd_experiment(c);
    if (command == "flatness") return cmd_flatness(c, weights);
    return cmd_report(c);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), command, 2);
  } catch (const std::invalid_argument& e) {
    return fail("invalid-argument", e.what(), command, 2);
  } catch (const nlohmann::json::exception& e) {
    return fail("format", e.what(), command, 3);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), command, 1);
  }
}

#pragma once

#include "flatmin/config.hpp"
#include "flatmin/data.hpp"
#include "flatmin/flatness.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace flatmin {

struct DataSplit {
  Dataset train;
  LabeledSet test;
};

/// Builds the training subsample and the held-out pool described by the dataset spec.
DataSplit build_data(const DatasetSpec& spec);

struct RunRecord {
  std::string preset;
  int restart = 0;
  std::uint64_t seed = 0;
  std::string algorithm;
  std::string stop_reason;
  long epochs = 0;
  double epochs_raw = 0.0;
  double epochs_data = 0.0;
  std::uint64_t minibatches = 0;
  long max_epochs = 0;
  double train_error = 0.0;
  double test_error = 0.0;
  double loss = 0.0;
  double final_distance = 0.0;
  double gamma0 = 0.0;
  std::vector<double> distance_trace;
  std::vector<double> replica_train_errors;
  std::string weights_file;  // relative to the experiment directory
  std::string weights_hash;
  WeightMatrix weights;      // in memory only
};

/// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency). The first exception
/// (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

/// Trains one restart of one preset.
RunRecord run_single(const ExperimentConfig& config, const Preset& preset, int restart,
                     const DataSplit& data);

using ProgressFn = std::function<void(const RunRecord&, std::size_t done, std::size_t total)>;

/// Every (preset, restart) pair, in config order. Deterministic given the seed list.
std::vector<RunRecord> run_experiment(const ExperimentConfig& config, const DataSplit& data,
                                      const ProgressFn& progress = {});

struct RunProfiles {
  FlatnessProfile energy;   // delta E_train over the sigma grid
  FlatnessProfile entropy;  // Phi_LE over the d grid
};

struct ProfileSet {
  std::vector<RunProfiles> runs;                // aligned with the records
  std::map<std::string, RunProfiles> averages;  // per preset
};

/// Flatness seeds of a run: both profiles use streams derived from the restart seed only, so
/// presets sharing a seed see the same perturbations.
std::uint64_t energy_seed(std::uint64_t run_seed);
std::uint64_t entropy_seed(std::uint64_t run_seed);

/// Profiles the weights carried by each record on the training set and averages per preset.
ProfileSet profile_minima(const std::vector<RunRecord>& records, const LabeledSet& train,
                          const FlatnessSpec& spec, unsigned threads = 0);

/// Averages per preset from per-run profiles aligned with the records.
std::map<std::string, RunProfiles> average_by_preset(const std::vector<RunRecord>& records,
                                                     const std::vector<RunProfiles>& runs);

void write_weights_csv(const WeightMatrix& w, const std::filesystem::path& path);
WeightMatrix read_weights_csv(const std::filesystem::path& path);

std::string records_to_json(const std::vector<RunRecord>& records);
std::vector<RunRecord> records_from_json(const std::string& text);
void write_records_csv(const std::vector<RunRecord>& records, std::ostream& out);

/// Output layout under dir: config.toml, records.json, records.csv, weights/, profiles/.
void write_run_outputs(const std::filesystem::path& dir, const ExperimentConfig& config,
                       std::vector<RunRecord>& records);
void write_profiles(const std::filesystem::path& dir, const std::vector<RunRecord>& records,
                    const ProfileSet& profiles);

/// Reloads what write_run_outputs and write_profiles produced.
std::vector<RunRecord> load_records(const std::filesystem::path& dir);
std::vector<RunProfiles> load_run_profiles(const std::filesystem::path& dir,
                                           const std::vector<RunRecord>& records);

std::string run_stem(const RunRecord& r);

}  // namespace flatmin

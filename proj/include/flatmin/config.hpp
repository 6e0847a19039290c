#pragma once

#include "flatmin/train.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace flatmin {

struct DatasetSpec {
  std::string kind = "synthetic";  // "synthetic", "idx" or "cache"

  // synthetic teacher
  std::size_t inputs = 784;
  std::size_t teacher_hidden = 9;
  std::size_t test_size = 5000;

  // idx
  std::string train_images, train_labels, test_images, test_labels;
  int class_pos = 3;  // Dress
  int class_neg = 4;  // Coat
  double median_lo = 0.25;
  double median_hi = 0.75;
  bool balanced = false;

  // cache (written by gen-data); the test pool is the remainder after the training subsample
  std::string cache;

  std::size_t train_size = 500;
  std::uint64_t seed = 12345;
};

struct FlatnessSpec {
  bool enabled = true;
  double sigma_max = 1.0;
  std::size_t sigma_points = 20;
  std::size_t sigma_samples = 100;
  double d_min = 1e-3;
  double d_max = 1e2;
  std::size_t d_points = 12;
  std::size_t entropy_samples = 500;

  [[nodiscard]] std::vector<double> sigma_grid() const;
  [[nodiscard]] std::vector<double> d_grid() const;
};

struct Preset {
  std::string name;
  AlgorithmParams params;
};

struct ExperimentConfig {
  DatasetSpec data;
  long hidden = 9;
  /// Hidden-unit dropout applied to every preset that does not set its own.
  std::optional<double> dropout;
  std::vector<Preset> presets;
  int restarts = 1;
  std::uint64_t base_seed = 1000;
  /// Explicit per-restart seeds; when empty, restart k uses base_seed + k.
  std::vector<std::uint64_t> seeds;
  BudgetMode budget = BudgetMode::MatchedData;
  RowNormConvention row_norm = RowNormConvention::SqrtN;
  GradientConvention gradient = GradientConvention::UnitSum;
  FlatnessSpec flatness;
  std::string out = "out";
  /// Worker threads for independent restarts; 0 means one per hardware thread.
  unsigned threads = 0;
  bool save_weights = true;

  [[nodiscard]] std::uint64_t seed_for(int restart) const;
  [[nodiscard]] TrainOptions train_options(std::size_t batch_size) const;
};

/// The published hyper-parameters of sgd-fast, sgd-slow, rsgd-fast, rsgd-slow and esgd.
Preset builtin_preset(const std::string& name);
std::vector<std::string> builtin_preset_names();

/// Parses a TOML document. Sections: [experiment], [dataset], [model], [flatness] and one
/// [preset.NAME] table per preset. A preset table starts from the builtin of the same name
/// (or from `base = "..."`, or from the plain defaults of `algorithm = "..."`) and overrides
/// the keys it lists.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully expanded TOML of a config (every preset with every hyper-parameter), parseable by
/// parse_config.
std::string config_to_toml(const ExperimentConfig& config);

/// Throws std::invalid_argument describing the first violated invariant.
void validate_config(const ExperimentConfig& config);

}  // namespace flatmin

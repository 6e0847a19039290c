#pragma once

#include "flatmin/experiment.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace flatmin {

struct SampleStats {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> std;        // sample standard deviation; absent for n < 2
  std::optional<double> std_error;  // std / sqrt(n); absent for n < 2
  double min = 0.0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  double max = 0.0;
};

/// Mean, sample std (n - 1), and linearly interpolated quantiles. Throws on an empty sample.
SampleStats sample_stats(std::vector<double> values);

struct PresetSummary {
  std::string preset;
  SampleStats test_error;
  SampleStats train_error;
  SampleStats epochs;
  std::map<std::string, int> stop_reasons;
};

/// mean(a) - mean(b) with standard error sqrt(se_a^2 + se_b^2).
struct PairwiseDifference {
  std::string a;
  std::string b;
  double difference = 0.0;
  std::optional<double> std_error;
};

struct Report {
  std::vector<PresetSummary> presets;  // in order of first appearance
  std::vector<PairwiseDifference> pairwise;
  std::map<std::string, RunProfiles> profiles;
};

/// Summaries of the test error per preset, every ordered pair (a before b) of presets, and the
/// preset-averaged profiles.
Report compare_report(const std::vector<RunRecord>& records,
                      const std::map<std::string, RunProfiles>& profiles);

void write_summary_csv(const Report& report, std::ostream& out);
void write_pairwise_csv(const Report& report, std::ostream& out);
/// Long format: preset,abscissa,mean,stderr,censored.
void write_long_profiles_csv(const Report& report, bool entropy, std::ostream& out);
/// Long format: preset,restart,test_error.
void write_test_errors_csv(const std::vector<RunRecord>& records, std::ostream& out);
std::string report_to_json(const Report& report);

/// summary.csv, summary.json, pairwise.csv, plot-energy.csv, plot-entropy.csv, test-errors.csv.
void write_report(const std::filesystem::path& dir, const Report& report,
                  const std::vector<RunRecord>& records);

/// Re-reads summary.csv (the test-error columns) as written by write_summary_csv.
std::vector<PresetSummary> read_summary_csv(std::istream& in);

}  // namespace flatmin

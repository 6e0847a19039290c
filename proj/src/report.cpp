#include "flatmin/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace flatmin {

using nlohmann::json;

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json stats_json(const SampleStats& s) {
  return {{"n", s.n},           {"mean", s.mean},     {"std", opt_json(s.std)}, {"std_error", opt_json(s.std_error)},
          {"min", s.min},       {"q25", s.q25},       {"median", s.median},     {"q75", s.q75},
          {"max", s.max}};
}

}  // namespace

SampleStats sample_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("statistics of an empty sample");
  SampleStats s;
  s.n = values.size();
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.std_error = *s.std / std::sqrt(static_cast<double>(s.n));
  }
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  s.q25 = quantile(values, 0.25);
  s.median = quantile(values, 0.5);
  s.q75 = quantile(values, 0.75);
  return s;
}

Report compare_report(const std::vector<RunRecord>& records, const std::map<std::string, RunProfiles>& profiles) {
  Report rep;
  std::vector<std::string> order;
  for (const auto& r : records)
    if (std::find(order.begin(), order.end(), r.preset) == order.end()) order.push_back(r.preset);
  for (const auto& name : order) {
    PresetSummary ps;
    ps.preset = name;
    std::vector<double> test, train, epochs;
    for (const auto& r : records) {
      if (r.preset != name) continue;
      test.push_back(r.test_error);
      train.push_back(r.train_error);
      epochs.push_back(static_cast<double>(r.epochs));
      ++ps.stop_reasons[r.stop_reason];
    }
    ps.test_error = sample_stats(test);
    ps.train_error = sample_stats(train);
    ps.epochs = sample_stats(epochs);
    rep.presets.push_back(std::move(ps));
  }
  for (std::size_t i = 0; i < rep.presets.size(); ++i) {
    for (std::size_t j = i + 1; j < rep.presets.size(); ++j) {
      const auto& a = rep.presets[i].test_error;
      const auto& b = rep.presets[j].test_error;
      PairwiseDifference d;
      d.a = rep.presets[i].preset;
      d.b = rep.presets[j].preset;
      d.difference = a.mean - b.mean;
      if (a.std_error && b.std_error) d.std_error = std::hypot(*a.std_error, *b.std_error);
      rep.pairwise.push_back(d);
    }
  }
  rep.profiles = profiles;
  return rep;
}

void write_summary_csv(const Report& report, std::ostream& out) {
  out << "preset,n,mean,std,stderr,min,q25,median,q75,max,train_error_mean,epochs_mean\n";
  for (const auto& p : report.presets) {
    const auto& s = p.test_error;
    out << p.preset << "," << s.n << "," << format_double(s.mean) << "," << opt(s.std) << "," << opt(s.std_error)
        << "," << format_double(s.min) << "," << format_double(s.q25) << "," << format_double(s.median) << ","
        << format_double(s.q75) << "," << format_double(s.max) << "," << format_double(p.train_error.mean) << ","
        << format_double(p.epochs.mean) << "\n";
  }
}

void write_pairwise_csv(const Report& report, std::ostream& out) {
  out << "a,b,difference,stderr\n";
  for (const auto& d : report.pairwise)
    out << d.a << "," << d.b << "," << format_double(d.difference) << "," << opt(d.std_error) << "\n";
}

void write_long_profiles_csv(const Report& report, bool entropy, std::ostream& out) {
  out << "preset,abscissa,mean,stderr,censored\n";
  for (const auto& p : report.presets) {
    const auto it = report.profiles.find(p.preset);
    if (it == report.profiles.end()) continue;
    const FlatnessProfile& prof = entropy ? it->second.entropy : it->second.energy;
    for (const auto& pt : prof.points) {
      out << p.preset << "," << format_double(pt.abscissa) << "," << format_double(pt.mean) << ","
          << format_double(pt.std_error) << "," << (pt.censored ? 1 : 0) << "\n";
    }
  }
}

void write_test_errors_csv(const std::vector<RunRecord>& records, std::ostream& out) {
  out << "preset,restart,test_error\n";
  for (const auto& r : records) out << r.preset << "," << r.restart << "," << format_double(r.test_error) << "\n";
}

std::string report_to_json(const Report& report) {
  json presets = json::array();
  for (const auto& p : report.presets) {
    presets.push_back({{"preset", p.preset},
                       {"test_error", stats_json(p.test_error)},
                       {"train_error", stats_json(p.train_error)},
                       {"epochs", stats_json(p.epochs)},
                       {"stop_reasons", p.stop_reasons}});
  }
  json pairs = json::array();
  for (const auto& d : report.pairwise)
    pairs.push_back({{"a", d.a}, {"b", d.b}, {"difference", d.difference}, {"std_error", opt_json(d.std_error)}});
  return json{{"presets", presets}, {"pairwise", pairs}}.dump(1) + "\n";
}

void write_report(const std::filesystem::path& dir, const Report& report, const std::vector<RunRecord>& records) {
  std::filesystem::create_directories(dir);
  auto emit = [&](const char* name, auto&& writer) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    writer(out);
  };
  emit("summary.csv", [&](std::ostream& o) { write_summary_csv(report, o); });
  emit("summary.json", [&](std::ostream& o) { o << report_to_json(report); });
  emit("pairwise.csv", [&](std::ostream& o) { write_pairwise_csv(report, o); });
  emit("test-errors.csv", [&](std::ostream& o) { write_test_errors_csv(records, o); });
  if (!report.profiles.empty()) {
    emit("plot-energy.csv", [&](std::ostream& o) { write_long_profiles_csv(report, false, o); });
    emit("plot-entropy.csv", [&](std::ostream& o) { write_long_profiles_csv(report, true, o); });
  }
}

std::vector<PresetSummary> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("empty summary");
  auto num = [](const std::string& cell) {
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc()) throw std::invalid_argument("bad number in summary: " + cell);
    return v;
  };
  auto maybe = [&](const std::string& cell) -> std::optional<double> {
    if (cell.empty()) return std::nullopt;
    return num(cell);
  };
  std::vector<PresetSummary> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) c.push_back(cell);
    if (line.back() == ',') c.emplace_back();
    if (c.size() != 12) throw std::invalid_argument("summary row needs 12 columns: " + line);
    PresetSummary p;
    p.preset = c[0];
    auto& s = p.test_error;
    s.n = static_cast<std::size_t>(num(c[1]));
    s.mean = num(c[2]);
    s.std = maybe(c[3]);
    s.std_error = maybe(c[4]);
    s.min = num(c[5]);
    s.q25 = num(c[6]);
    s.median = num(c[7]);
    s.q75 = num(c[8]);
    s.max = num(c[9]);
    p.train_error.mean = num(c[10]);
    p.epochs.mean = num(c[11]);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace flatmin

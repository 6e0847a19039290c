#include "flatmin/experiment.hpp"

#include "flatmin/model.hpp"
#include "flatmin/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace flatmin {

namespace fs = std::filesystem;
using nlohmann::json;

DataSplit build_data(const DatasetSpec& spec) {
  Rng rng(spec.seed);
  DataSplit split;
  if (spec.kind == "synthetic") {
    Dataset full = synth_teacher_dataset(spec.inputs, spec.teacher_hidden, spec.train_size + spec.test_size, rng);
    full.provenance.seed = spec.seed;
    auto [train, rest] = subsample_train(full, spec.train_size, rng, spec.balanced);
    split.train = std::move(train);
    split.test = std::move(rest.data);
    return split;
  }
  if (spec.kind == "idx") {
    const auto classes = std::make_pair(spec.class_pos, spec.class_neg);
    Dataset pool = median_binarize_filter(load_idx(spec.train_images, spec.train_labels), classes,
                                          spec.median_lo, spec.median_hi);
    auto [train, rest] = subsample_train(pool, spec.train_size, rng, spec.balanced);
    split.train = std::move(train);
    if (!spec.test_images.empty()) {
      split.test = median_binarize_filter(load_idx(spec.test_images, spec.test_labels), classes, spec.median_lo,
                                          spec.median_hi)
                       .data;
    } else {
      split.test = std::move(rest.data);
    }
    return split;
  }
  if (spec.kind == "cache") {
    Dataset pool = load_dataset(spec.cache);
    auto [train, rest] = subsample_train(pool, spec.train_size, rng, spec.balanced);
    split.train = std::move(train);
    split.test = std::move(rest.data);
    return split;
  }
  throw std::invalid_argument("unknown dataset kind: " + spec.kind);
}

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  unsigned workers = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < workers; ++k) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string run_stem(const RunRecord& r) { return r.preset + "-" + std::to_string(r.restart); }

RunRecord run_single(const ExperimentConfig& config, const Preset& preset, int restart, const DataSplit& data) {
  RunRecord rec;
  rec.preset = preset.name;
  rec.restart = restart;
  rec.seed = config.seed_for(restart);
  rec.algorithm = to_string(preset.params.algorithm);
  rec.max_epochs = preset.params.max_epochs;

  const TrainResult r = train(preset.params, data.train.data, config.hidden, rec.seed,
                              config.train_options(preset.params.batch_size));
  rec.stop_reason = r.stop_reason;
  rec.epochs = r.epochs;
  rec.epochs_raw = r.epochs_raw;
  rec.epochs_data = r.epochs_data;
  rec.minibatches = r.minibatches;
  rec.train_error = r.train_error;
  rec.test_error = data.test.empty() ? 0.0 : train_error(r.weights, data.test);
  rec.loss = r.loss;
  rec.final_distance = r.final_distance;
  rec.gamma0 = r.gamma0;
  rec.distance_trace = r.distance_trace;
  rec.replica_train_errors = r.replica_train_errors;
  rec.weights = r.weights;
  rec.weights_hash = weights_hash(r.weights);
  return rec;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& config, const DataSplit& data,
                                      const ProgressFn& progress) {
  validate_config(config);
  if (config.presets.empty()) throw std::invalid_argument("experiment has no presets");
  const std::size_t per = static_cast<std::size_t>(config.restarts);
  std::vector<RunRecord> records(config.presets.size() * per);
  std::mutex mu;
  std::size_t done = 0;
  parallel_for(records.size(), config.threads, [&](std::size_t i) {
    records[i] = run_single(config, config.presets[i / per], static_cast<int>(i % per), data);
    if (progress) {
      std::lock_guard<std::mutex> lock(mu);
      progress(records[i], ++done, records.size());
    }
  });
  return records;
}

std::uint64_t energy_seed(std::uint64_t run_seed) { return derive_seed(run_seed, 0x45u); }

std::uint64_t entropy_seed(std::uint64_t run_seed) { return derive_seed(run_seed, 0x4Cu); }

std::map<std::string, RunProfiles> average_by_preset(const std::vector<RunRecord>& records,
                                                     const std::vector<RunProfiles>& runs) {
  if (records.size() != runs.size()) throw std::invalid_argument("profiles do not match records");
  std::map<std::string, std::vector<FlatnessProfile>> energy, entropy;
  for (std::size_t i = 0; i < records.size(); ++i) {
    energy[records[i].preset].push_back(runs[i].energy);
    entropy[records[i].preset].push_back(runs[i].entropy);
  }
  std::map<std::string, RunProfiles> out;
  for (auto& [name, list] : energy) {
    out[name].energy = average_profiles(list);
    out[name].entropy = average_profiles(entropy[name]);
  }
  return out;
}

ProfileSet profile_minima(const std::vector<RunRecord>& records, const LabeledSet& train,
                          const FlatnessSpec& spec, unsigned threads) {
  ProfileSet set;
  set.runs.resize(records.size());
  const auto sigmas = spec.sigma_grid();
  const auto ds = spec.d_grid();
  parallel_for(records.size(), threads, [&](std::size_t i) {
    const auto& r = records[i];
    if (r.weights.size() == 0) throw std::invalid_argument("record " + run_stem(r) + " carries no weights");
    set.runs[i].energy = local_energy_profile(r.weights, train, sigmas, spec.sigma_samples, energy_seed(r.seed));
    set.runs[i].entropy = local_entropy_mc(r.weights, train, ds, spec.entropy_samples, entropy_seed(r.seed));
  });
  set.averages = average_by_preset(records, set.runs);
  return set;
}

void write_weights_csv(const WeightMatrix& w, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index h = 0; h < w.rows(); ++h) {
    for (Eigen::Index i = 0; i < w.cols(); ++i) out << (i ? "," : "") << format_double(w(h, i));
    out << "\n";
  }
}

WeightMatrix read_weights_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open weights " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw std::runtime_error("bad number '" + cell + "' in " + path.string());
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw std::runtime_error("ragged weights file " + path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty weights file " + path.string());
  WeightMatrix w(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t h = 0; h < rows.size(); ++h)
    for (std::size_t i = 0; i < rows[h].size(); ++i)
      w(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(i)) = rows[h][i];
  return w;
}

std::string records_to_json(const std::vector<RunRecord>& records) {
  json arr = json::array();
  for (const auto& r : records) {
    arr.push_back({{"preset", r.preset},
                   {"restart", r.restart},
                   {"seed", r.seed},
                   {"algorithm", r.algorithm},
                   {"stop_reason", r.stop_reason},
                   {"epochs", r.epochs},
                   {"epochs_raw", r.epochs_raw},
                   {"epochs_data", r.epochs_data},
                   {"minibatches", r.minibatches},
                   {"max_epochs", r.max_epochs},
                   {"train_error", r.train_error},
                   {"test_error", r.test_error},
                   {"loss", r.loss},
                   {"final_distance", r.final_distance},
                   {"gamma0", r.gamma0},
                   {"distance_trace", r.distance_trace},
                   {"replica_train_errors", r.replica_train_errors},
                   {"weights_file", r.weights_file},
                   {"weights_hash", r.weights_hash}});
  }
  return arr.dump(1) + "\n";
}

std::vector<RunRecord> records_from_json(const std::string& text) {
  const json arr = json::parse(text);
  if (!arr.is_array()) throw std::invalid_argument("records file must hold a JSON array");
  std::vector<RunRecord> out;
  for (const auto& j : arr) {
    RunRecord r;
    r.preset = j.at("preset").get<std::string>();
    r.restart = j.at("restart").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.algorithm = j.at("algorithm").get<std::string>();
    r.stop_reason = j.at("stop_reason").get<std::string>();
    r.epochs = j.at("epochs").get<long>();
    r.epochs_raw = j.at("epochs_raw").get<double>();
    r.epochs_data = j.at("epochs_data").get<double>();
    r.minibatches = j.at("minibatches").get<std::uint64_t>();
    r.max_epochs = j.at("max_epochs").get<long>();
    r.train_error = j.at("train_error").get<double>();
    r.test_error = j.at("test_error").get<double>();
    r.loss = j.at("loss").get<double>();
    r.final_distance = j.at("final_distance").get<double>();
    r.gamma0 = j.at("gamma0").get<double>();
    r.distance_trace = j.at("distance_trace").get<std::vector<double>>();
    r.replica_train_errors = j.at("replica_train_errors").get<std::vector<double>>();
    r.weights_file = j.at("weights_file").get<std::string>();
    r.weights_hash = j.at("weights_hash").get<std::string>();
    out.push_back(std::move(r));
  }
  return out;
}

void write_records_csv(const std::vector<RunRecord>& records, std::ostream& out) {
  out << "preset,restart,seed,algorithm,stop_reason,epochs,epochs_raw,epochs_data,minibatches,max_epochs,"
         "train_error,test_error,loss,final_distance,gamma0,weights_hash\n";
  for (const auto& r : records) {
    out << r.preset << "," << r.restart << "," << r.seed << "," << r.algorithm << "," << r.stop_reason << ","
        << r.epochs << "," << format_double(r.epochs_raw) << "," << format_double(r.epochs_data) << ","
        << r.minibatches << "," << r.max_epochs << "," << format_double(r.train_error) << ","
        << format_double(r.test_error) << "," << format_double(r.loss) << "," << format_double(r.final_distance)
        << "," << format_double(r.gamma0) << "," << r.weights_hash << "\n";
  }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_profile_file(const fs::path& path, const FlatnessProfile& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_profile_csv(p, out);
}

FlatnessProfile read_profile_file(const fs::path& path, AbscissaKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open profile " + path.string());
  return read_profile_csv(in, kind);
}

}  // namespace

void write_run_outputs(const fs::path& dir, const ExperimentConfig& config, std::vector<RunRecord>& records) {
  fs::create_directories(dir);
  write_text(dir / "config.toml", config_to_toml(config));
  if (config.save_weights) {
    fs::create_directories(dir / "weights");
    for (auto& r : records) {
      r.weights_file = "weights/" + run_stem(r) + ".csv";
      write_weights_csv(r.weights, dir / r.weights_file);
    }
  }
  write_text(dir / "records.json", records_to_json(records));
  std::ostringstream csv;
  write_records_csv(records, csv);
  write_text(dir / "records.csv", csv.str());
}

void write_profiles(const fs::path& dir, const std::vector<RunRecord>& records, const ProfileSet& profiles) {
  fs::create_directories(dir / "profiles");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string stem = run_stem(records[i]);
    write_profile_file(dir / "profiles" / (stem + "-energy.csv"), profiles.runs[i].energy);
    write_profile_file(dir / "profiles" / (stem + "-entropy.csv"), profiles.runs[i].entropy);
  }
  for (const auto& [name, p] : profiles.averages) {
    write_profile_file(dir / "profiles" / (name + "-energy-mean.csv"), p.energy);
    write_profile_file(dir / "profiles" / (name + "-entropy-mean.csv"), p.entropy);
  }
}

std::vector<RunRecord> load_records(const fs::path& dir) { return records_from_json(read_text(dir / "records.json")); }

std::vector<RunProfiles> load_run_profiles(const fs::path& dir, const std::vector<RunRecord>& records) {
  std::vector<RunProfiles> runs;
  for (const auto& r : records) {
    const std::string stem = run_stem(r);
    RunProfiles p;
    p.energy = read_profile_file(dir / "profiles" / (stem + "-energy.csv"), AbscissaKind::Sigma);
    p.entropy = read_profile_file(dir / "profiles" / (stem + "-entropy.csv"), AbscissaKind::SquaredDistance);
    runs.push_back(std::move(p));
  }
  return runs;
}

}  // namespace flatmin

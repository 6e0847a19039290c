#include "flatmin/config.hpp"

#include "flatmin/flatness.hpp"

#include <toml.hpp>

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace flatmin {

std::vector<double> FlatnessSpec::sigma_grid() const { return linspace(0.0, sigma_max, sigma_points); }

std::vector<double> FlatnessSpec::d_grid() const { return logspace(d_min, d_max, d_points); }

std::uint64_t ExperimentConfig::seed_for(int restart) const {
  if (!seeds.empty()) return seeds.at(static_cast<std::size_t>(restart));
  return base_seed + static_cast<std::uint64_t>(restart);
}

TrainOptions ExperimentConfig::train_options(std::size_t batch_size) const {
  TrainOptions o;
  o.budget = budget;
  o.row_norm = row_norm;
  o.loss_scale = loss_scale_for(gradient, batch_size,
                                row_norm_value(row_norm, static_cast<Eigen::Index>(data.inputs)));
  return o;
}

Preset builtin_preset(const std::string& name) {
  Preset pr;
  pr.name = name;
  AlgorithmParams& p = pr.params;
  p.batch_size = 100;
  if (name == "sgd-fast") {
    p.algorithm = Algorithm::Sgd;
    p.eta = 2e-4;
    p.beta = {2.0, 1e-4};
    p.omega = {5.0, 0.0};
    p.stop = {StopKind::ZeroTrainError, 0.0};
    p.max_epochs = 5000;
  } else if (name == "sgd-slow") {
    p.algorithm = Algorithm::Sgd;
    p.eta = 3e-5;
    p.beta = {0.5, 1e-3};
    p.omega = {0.5, 1e-3};
    p.stop = {StopKind::LossBelow, 1e-7};
    p.max_epochs = 20000;
  } else if (name == "rsgd-fast") {
    p.algorithm = Algorithm::Rsgd;
    p.eta = 1e-4;
    p.replicas = 10;
    p.gamma = {2e-3, 2e-3};
    p.beta = {1.0, 2e-4};
    p.omega = {0.5, 1e-3};
    p.stop = {StopKind::ReplicaDistanceBelow, 1e-8};
    p.max_epochs = 10000;
  } else if (name == "rsgd-slow") {
    p.algorithm = Algorithm::Rsgd;
    p.eta = 1e-3;
    p.replicas = 10;
    p.gamma = {1e-4, 1e-4};
    p.beta = {1.0, 2e-4};
    p.omega = {0.5, 1e-3};
    p.stop = {StopKind::ReplicaDistanceBelow, 1e-8};
    p.max_epochs = 10000;
  } else if (name == "esgd") {
    p.algorithm = Algorithm::Esgd;
    p.eta = 1e-3;
    p.eta_prime = 5e-3;
    p.noise = 1e-6;
    p.inner_steps = 20;
    p.alpha = 0.75;
    p.gamma = {10.0, 5e-5};
    p.beta = {1.0, 1e-4};
    p.omega = {0.5, 5e-4};
    p.stop = {StopKind::EsgdDistanceBelow, 1e-8};
    p.max_epochs = 10000;
  } else {
    throw std::invalid_argument("unknown preset: " + name);
  }
  return pr;
}

std::vector<std::string> builtin_preset_names() {
  return {"sgd-fast", "sgd-slow", "rsgd-fast", "rsgd-slow", "esgd"};
}

namespace {

bool is_builtin(const std::string& name) {
  for (const auto& n : builtin_preset_names())
    if (n == name) return true;
  return false;
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw std::invalid_argument("config " + where + ": " + what);
}

void check_keys(const toml::table& t, const std::string& where, std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : t) {
    if (!ok.count(std::string(k.str()))) bad(where, "unknown key '" + std::string(k.str()) + "'");
  }
}

double get_double(const toml::table& t, const char* key, double fallback, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (auto v = n->value<double>()) return *v;
  bad(where, std::string("'") + key + "' must be a number");
}

long get_long(const toml::table& t, const char* key, long fallback, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (n->is_integer()) return static_cast<long>(*n->value<std::int64_t>());
  bad(where, std::string("'") + key + "' must be an integer");
}

std::size_t get_size(const toml::table& t, const char* key, std::size_t fallback, const std::string& where) {
  const long v = get_long(t, key, static_cast<long>(fallback), where);
  if (v < 0) bad(where, std::string("'") + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

bool get_bool(const toml::table& t, const char* key, bool fallback, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (auto v = n->value<bool>()) return *v;
  bad(where, std::string("'") + key + "' must be a boolean");
}

std::string get_string(const toml::table& t, const char* key, const std::string& fallback,
                       const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (auto v = n->value<std::string>()) return *v;
  bad(where, std::string("'") + key + "' must be a string");
}

std::uint64_t as_seed(const toml::node& n, const std::string& where) {
  if (n.is_integer()) {
    const auto v = *n.value<std::int64_t>();
    if (v < 0) bad(where, "seeds must be non-negative");
    return static_cast<std::uint64_t>(v);
  }
  if (auto s = n.value<std::string>()) return std::stoull(*s);
  bad(where, "seeds must be integers");
}

const toml::table* section(const toml::table& root, const char* name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) bad(name, "must be a table");
  return n->as_table();
}

void apply_preset_table(const toml::table& t, AlgorithmParams& p, const std::string& where) {
  check_keys(t, where,
             {"base", "algorithm", "eta", "beta0", "beta1", "omega0", "omega1", "batch_size", "dropout",
              "gamma0", "gamma1", "auto_gamma0", "gamma_growth", "replicas", "coupling_period",
              "inner_steps", "eta_prime", "noise", "alpha", "noise_from_beta", "stop", "stop_threshold",
              "max_epochs"});
  if (t.contains("algorithm")) p.algorithm = algorithm_from_string(get_string(t, "algorithm", "", where));
  p.eta = get_double(t, "eta", p.eta, where);
  p.beta.s0 = get_double(t, "beta0", p.beta.s0, where);
  p.beta.s1 = get_double(t, "beta1", p.beta.s1, where);
  p.omega.s0 = get_double(t, "omega0", p.omega.s0, where);
  p.omega.s1 = get_double(t, "omega1", p.omega.s1, where);
  p.batch_size = get_size(t, "batch_size", p.batch_size, where);
  p.dropout = get_double(t, "dropout", p.dropout, where);
  p.gamma.s0 = get_double(t, "gamma0", p.gamma.s0, where);
  p.gamma.s1 = get_double(t, "gamma1", p.gamma.s1, where);
  p.auto_gamma0 = get_bool(t, "auto_gamma0", p.auto_gamma0, where);
  p.gamma_growth_factor = get_double(t, "gamma_growth", p.gamma_growth_factor, where);
  p.replicas = static_cast<int>(get_long(t, "replicas", p.replicas, where));
  p.coupling_period = get_long(t, "coupling_period", p.coupling_period, where);
  p.inner_steps = static_cast<int>(get_long(t, "inner_steps", p.inner_steps, where));
  p.eta_prime = get_double(t, "eta_prime", p.eta_prime, where);
  p.noise = get_double(t, "noise", p.noise, where);
  p.alpha = get_double(t, "alpha", p.alpha, where);
  p.noise_from_beta = get_bool(t, "noise_from_beta", p.noise_from_beta, where);
  if (t.contains("stop")) p.stop.kind = stop_kind_from_string(get_string(t, "stop", "", where));
  p.stop.threshold = get_double(t, "stop_threshold", p.stop.threshold, where);
  p.max_epochs = get_long(t, "max_epochs", p.max_epochs, where);
}

Preset preset_from_table(const std::string& name, const toml::table& t) {
  const std::string where = "[preset." + name + "]";
  Preset pr;
  if (t.contains("base")) {
    pr = builtin_preset(get_string(t, "base", "", where));
  } else if (is_builtin(name)) {
    pr = builtin_preset(name);
  } else if (!t.contains("algorithm")) {
    bad(where, "a custom preset needs 'base' or 'algorithm'");
  }
  pr.name = name;
  apply_preset_table(t, pr.params, where);
  return pr;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config parse error at line " << e.source().begin.line << ": " << e.description();
    throw std::invalid_argument(msg.str());
  }
  for (const auto& [k, v] : root) {
    const std::string key(k.str());
    if (key != "experiment" && key != "dataset" && key != "model" && key != "flatness" && key != "preset")
      bad("root", "unknown section [" + key + "]");
  }

  ExperimentConfig c;
  std::vector<std::string> order;
  if (const auto* t = section(root, "experiment")) {
    const std::string w = "[experiment]";
    check_keys(*t, w, {"presets", "restarts", "base_seed", "seeds", "budget", "row_norm", "gradient", "out",
                       "threads", "save_weights"});
    if (const auto* arr = t->get_as<toml::array>("presets")) {
      for (const auto& n : *arr) {
        auto s = n.value<std::string>();
        if (!s) bad(w, "'presets' must list names");
        order.push_back(*s);
      }
    }
    c.restarts = static_cast<int>(get_long(*t, "restarts", c.restarts, w));
    if (const toml::node* n = t->get("base_seed")) c.base_seed = as_seed(*n, w);
    if (const auto* arr = t->get_as<toml::array>("seeds")) {
      for (const auto& n : *arr) c.seeds.push_back(as_seed(n, w));
    }
    if (t->contains("budget")) c.budget = budget_mode_from_string(get_string(*t, "budget", "", w));
    if (t->contains("row_norm")) c.row_norm = row_norm_from_string(get_string(*t, "row_norm", "", w));
    if (t->contains("gradient")) c.gradient = gradient_convention_from_string(get_string(*t, "gradient", "", w));
    c.out = get_string(*t, "out", c.out, w);
    c.threads = static_cast<unsigned>(get_size(*t, "threads", c.threads, w));
    c.save_weights = get_bool(*t, "save_weights", c.save_weights, w);
  }
  if (const auto* t = section(root, "dataset")) {
    const std::string w = "[dataset]";
    check_keys(*t, w, {"kind", "inputs", "teacher_hidden", "test_size", "train_images", "train_labels",
                       "test_images", "test_labels", "class_pos", "class_neg", "median_lo", "median_hi",
                       "balanced", "cache", "train_size", "seed"});
    auto& d = c.data;
    d.kind = get_string(*t, "kind", d.kind, w);
    d.inputs = get_size(*t, "inputs", d.inputs, w);
    d.teacher_hidden = get_size(*t, "teacher_hidden", d.teacher_hidden, w);
    d.test_size = get_size(*t, "test_size", d.test_size, w);
    d.train_images = get_string(*t, "train_images", d.train_images, w);
    d.train_labels = get_string(*t, "train_labels", d.train_labels, w);
    d.test_images = get_string(*t, "test_images", d.test_images, w);
    d.test_labels = get_string(*t, "test_labels", d.test_labels, w);
    d.class_pos = static_cast<int>(get_long(*t, "class_pos", d.class_pos, w));
    d.class_neg = static_cast<int>(get_long(*t, "class_neg", d.class_neg, w));
    d.median_lo = get_double(*t, "median_lo", d.median_lo, w);
    d.median_hi = get_double(*t, "median_hi", d.median_hi, w);
    d.balanced = get_bool(*t, "balanced", d.balanced, w);
    d.cache = get_string(*t, "cache", d.cache, w);
    d.train_size = get_size(*t, "train_size", d.train_size, w);
    if (const toml::node* n = t->get("seed")) d.seed = as_seed(*n, w);
  }
  if (const auto* t = section(root, "model")) {
    const std::string w = "[model]";
    check_keys(*t, w, {"hidden", "dropout"});
    c.hidden = get_long(*t, "hidden", c.hidden, w);
    if (t->contains("dropout")) c.dropout = get_double(*t, "dropout", 0.0, w);
  }
  if (const auto* t = section(root, "flatness")) {
    const std::string w = "[flatness]";
    check_keys(*t, w, {"enabled", "sigma_max", "sigma_points", "sigma_samples", "d_min", "d_max", "d_points",
                       "entropy_samples"});
    auto& f = c.flatness;
    f.enabled = get_bool(*t, "enabled", f.enabled, w);
    f.sigma_max = get_double(*t, "sigma_max", f.sigma_max, w);
    f.sigma_points = get_size(*t, "sigma_points", f.sigma_points, w);
    f.sigma_samples = get_size(*t, "sigma_samples", f.sigma_samples, w);
    f.d_min = get_double(*t, "d_min", f.d_min, w);
    f.d_max = get_double(*t, "d_max", f.d_max, w);
    f.d_points = get_size(*t, "d_points", f.d_points, w);
    f.entropy_samples = get_size(*t, "entropy_samples", f.entropy_samples, w);
  }

  const toml::table* presets = section(root, "preset");
  if (presets) {
    for (const auto& [k, v] : *presets) {
      const std::string name(k.str());
      if (!v.is_table()) bad("[preset]", "'" + name + "' must be a table");
      if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    }
  }
  for (const auto& name : order) {
    const toml::table* t = presets ? presets->get_as<toml::table>(name) : nullptr;
    c.presets.push_back(t ? preset_from_table(name, *t) : builtin_preset(name));
  }
  if (c.dropout) {
    for (auto& pr : c.presets) {
      const toml::table* t = presets ? presets->get_as<toml::table>(pr.name) : nullptr;
      if (!t || !t->contains("dropout")) pr.params.dropout = *c.dropout;
    }
  }
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

std::string num(double v) { return format_double(v); }

}  // namespace

std::string config_to_toml(const ExperimentConfig& c) {
  std::ostringstream o;
  o << "[experiment]\npresets = [";
  for (std::size_t i = 0; i < c.presets.size(); ++i) o << (i ? ", " : "") << quote(c.presets[i].name);
  o << "]\nrestarts = " << c.restarts << "\nbase_seed = " << c.base_seed << "\n";
  if (!c.seeds.empty()) {
    o << "seeds = [";
    for (std::size_t i = 0; i < c.seeds.size(); ++i) o << (i ? ", " : "") << c.seeds[i];
    o << "]\n";
  }
  o << "budget = " << quote(to_string(c.budget)) << "\nrow_norm = " << quote(to_string(c.row_norm))
    << "\ngradient = " << quote(to_string(c.gradient)) << "\nout = " << quote(c.out)
    << "\nthreads = " << c.threads << "\nsave_weights = " << (c.save_weights ? "true" : "false") << "\n\n";

  const auto& d = c.data;
  o << "[dataset]\nkind = " << quote(d.kind) << "\ntrain_size = " << d.train_size << "\nseed = " << d.seed
    << "\ninputs = " << d.inputs << "\nteacher_hidden = " << d.teacher_hidden << "\ntest_size = " << d.test_size
    << "\ntrain_images = " << quote(d.train_images) << "\ntrain_labels = " << quote(d.train_labels)
    << "\ntest_images = " << quote(d.test_images) << "\ntest_labels = " << quote(d.test_labels)
    << "\nclass_pos = " << d.class_pos << "\nclass_neg = " << d.class_neg << "\nmedian_lo = " << num(d.median_lo)
    << "\nmedian_hi = " << num(d.median_hi) << "\nbalanced = " << (d.balanced ? "true" : "false")
    << "\ncache = " << quote(d.cache) << "\n\n";

  o << "[model]\nhidden = " << c.hidden << "\n";
  if (c.dropout) o << "dropout = " << num(*c.dropout) << "\n";
  o << "\n";

  const auto& f = c.flatness;
  o << "[flatness]\nenabled = " << (f.enabled ? "true" : "false") << "\nsigma_max = " << num(f.sigma_max)
    << "\nsigma_points = " << f.sigma_points << "\nsigma_samples = " << f.sigma_samples
    << "\nd_min = " << num(f.d_min) << "\nd_max = " << num(f.d_max) << "\nd_points = " << f.d_points
    << "\nentropy_samples = " << f.entropy_samples << "\n";

  for (const auto& pr : c.presets) {
    const auto& p = pr.params;
    o << "\n[preset." << quote(pr.name) << "]\nalgorithm = " << quote(to_string(p.algorithm))
      << "\neta = " << num(p.eta) << "\nbeta0 = " << num(p.beta.s0) << "\nbeta1 = " << num(p.beta.s1)
      << "\nomega0 = " << num(p.omega.s0) << "\nomega1 = " << num(p.omega.s1) << "\nbatch_size = " << p.batch_size
      << "\ndropout = " << num(p.dropout) << "\ngamma0 = " << num(p.gamma.s0) << "\ngamma1 = " << num(p.gamma.s1)
      << "\nauto_gamma0 = " << (p.auto_gamma0 ? "true" : "false") << "\ngamma_growth = " << num(p.gamma_growth_factor)
      << "\nreplicas = " << p.replicas << "\ncoupling_period = " << p.coupling_period
      << "\ninner_steps = " << p.inner_steps << "\neta_prime = " << num(p.eta_prime) << "\nnoise = " << num(p.noise)
      << "\nalpha = " << num(p.alpha) << "\nnoise_from_beta = " << (p.noise_from_beta ? "true" : "false")
      << "\nstop = " << quote(to_string(p.stop.kind)) << "\nstop_threshold = " << num(p.stop.threshold)
      << "\nmax_epochs = " << p.max_epochs << "\n";
  }
  return o.str();
}

void validate_config(const ExperimentConfig& c) {
  if (c.restarts < 1) bad("[experiment]", "restarts must be >= 1");
  if (!c.seeds.empty() && c.seeds.size() != static_cast<std::size_t>(c.restarts))
    bad("[experiment]", "seed list length must equal restarts");
  if (c.hidden < 1) bad("[model]", "hidden must be >= 1");
  if (c.dropout && (*c.dropout < 0.0 || *c.dropout >= 1.0)) bad("[model]", "dropout must be in [0, 1)");
  const auto& d = c.data;
  if (d.kind != "synthetic" && d.kind != "idx" && d.kind != "cache") bad("[dataset]", "unknown kind '" + d.kind + "'");
  if (d.train_size < 1) bad("[dataset]", "train_size must be >= 1");
  if (d.kind == "synthetic" && (d.inputs < 1 || d.teacher_hidden < 1))
    bad("[dataset]", "inputs and teacher_hidden must be >= 1");
  if (d.kind == "idx" && (d.train_images.empty() || d.train_labels.empty()))
    bad("[dataset]", "idx datasets need train_images and train_labels");
  if (d.kind == "cache" && d.cache.empty()) bad("[dataset]", "cache datasets need a cache path");
  const auto& f = c.flatness;
  if (f.enabled) {
    if (f.sigma_points < 1 || f.sigma_samples < 1) bad("[flatness]", "sigma grid and samples must be >= 1");
    if (f.d_points < 1 || f.entropy_samples < 1) bad("[flatness]", "d grid and samples must be >= 1");
    if (!(f.d_min > 0.0 && f.d_max >= f.d_min)) bad("[flatness]", "need 0 < d_min <= d_max");
    if (!(f.sigma_max >= 0.0)) bad("[flatness]", "sigma_max must be >= 0");
  }
  std::set<std::string> names;
  for (const auto& pr : c.presets) {
    const std::string w = "[preset." + pr.name + "]";
    if (!names.insert(pr.name).second) bad(w, "duplicate preset");
    const auto& p = pr.params;
    if (!(p.eta > 0.0)) bad(w, "eta must be positive");
    if (p.batch_size < 1) bad(w, "batch_size must be >= 1");
    if (p.max_epochs < 1) bad(w, "max_epochs must be >= 1");
    if (p.dropout < 0.0 || p.dropout >= 1.0) bad(w, "dropout must be in [0, 1)");
    if (p.algorithm == Algorithm::Rsgd && (p.replicas < 1 || p.coupling_period < 1))
      bad(w, "rsgd needs replicas >= 1 and coupling_period >= 1");
    if (p.algorithm == Algorithm::Esgd) {
      if (p.inner_steps < 1) bad(w, "esgd needs inner_steps >= 1");
      if (!(p.alpha >= 0.0 && p.alpha < 1.0)) bad(w, "alpha must be in [0, 1)");
      if (!(p.eta_prime > 0.0) || p.noise < 0.0) bad(w, "esgd needs eta_prime > 0 and noise >= 0");
    }
    if (p.algorithm == Algorithm::Sgd &&
        (p.stop.kind == StopKind::ReplicaDistanceBelow || p.stop.kind == StopKind::EsgdDistanceBelow))
      bad(w, "sgd cannot stop on a replica or eSGD distance");
    if (p.algorithm != Algorithm::Esgd && p.stop.kind == StopKind::EsgdDistanceBelow)
      bad(w, "only esgd has a w-mu distance");
    if (p.algorithm != Algorithm::Rsgd && p.stop.kind == StopKind::ReplicaDistanceBelow)
      bad(w, "only rsgd has a replica distance");
  }
}

}  // namespace flatmin

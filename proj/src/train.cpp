#include "flatmin/train.hpp"

#include "flatmin/data.hpp"
#include "flatmin/flatness.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace flatmin {

namespace {

// Per-seed stream layout: 4a + {0: init, 1: batches, 2: dropout, 3: SGLD noise} for replica a.
// Plain SGD and eSGD use a = 0, so rSGD with y = 1 replays the SGD trajectory.
std::uint64_t stream_seed(std::uint64_t seed, std::size_t replica, int role) {
  return derive_seed(seed, 4 * replica + static_cast<std::uint64_t>(role));
}

struct Monitor {
  const AlgorithmParams& params;
  const TrainOptions& options;
  TrainResult& result;
  long last_traced = -1;

  bool epoch_end(long epoch, const Observables& obs, std::optional<double> distance) {
    result.epochs = epoch;
    if (distance) {
      if (last_traced < 0 || epoch - last_traced >= options.trace_every) {
        result.distance_trace.push_back(*distance);
        last_traced = epoch;
      }
      result.final_distance = *distance;
    }
    if (params.stop.kind != StopKind::MaxEpochs && check_stop(params.stop, obs)) {
      result.stop_reason = to_string(params.stop.kind);
      return true;
    }
    if (epoch >= params.max_epochs) {
      result.stop_reason = "budget-exhausted";
      return true;
    }
    return false;
  }

  void close_trace() {
    if (result.distance_trace.empty() || result.distance_trace.back() != result.final_distance)
      result.distance_trace.push_back(result.final_distance);
  }
};

StepSettings settings_at(const AlgorithmParams& p, long epoch, double row_norm,
                         const TrainOptions& options) {
  StepSettings s;
  s.beta = anneal(p.beta, epoch);
  s.omega = anneal(p.omega, epoch);
  s.row_norm = row_norm;
  s.dropout = p.dropout;
  s.loss_scale = options.loss_scale;
  return s;
}

void validate(const AlgorithmParams& p, const LabeledSet& data) {
  if (data.empty()) throw std::invalid_argument("empty training set");
  if (!(p.eta > 0.0)) throw std::invalid_argument("eta must be positive");
  if (p.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (p.max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (p.algorithm == Algorithm::Rsgd && p.replicas < 1) throw std::invalid_argument("rSGD needs y >= 1");
  if (p.dropout < 0.0 || p.dropout >= 1.0) throw std::invalid_argument("dropout must be in [0, 1)");
  if (p.stop.kind != StopKind::MaxEpochs && p.stop.kind != StopKind::ZeroTrainError &&
      !(p.stop.threshold > 0.0)) {
    throw std::invalid_argument("stop threshold must be positive");
  }
}

double gamma1_for(const AlgorithmParams& p) {
  return p.gamma_growth_factor > 1.0 ? solve_gamma1(p.gamma_growth_factor, p.max_epochs) : p.gamma.s1;
}

void finish(TrainResult& r, const LabeledSet& data, const StepSettings& s, std::size_t bpe,
            std::uint64_t iterations) {
  r.train_error = train_error(r.weights, data);
  r.loss = ce_loss(r.weights, data, s.beta, s.omega);
  r.epochs_raw = static_cast<double>(iterations) / static_cast<double>(bpe);
  r.epochs_data = static_cast<double>(r.minibatches) / static_cast<double>(bpe);
}

TrainResult train_sgd(const AlgorithmParams& p, const LabeledSet& data, Eigen::Index hidden,
                      std::uint64_t seed, const TrainOptions& options, double row_norm) {
  TrainResult r;
  Rng init(stream_seed(seed, 0, 0));
  Rng dropout(stream_seed(seed, 0, 2));
  WeightMatrix w = init_weights(hidden, data.dim(), init, row_norm);
  MinibatchStream stream(data, p.batch_size, stream_seed(seed, 0, 1));
  Monitor mon{p, options, r};

  StepSettings s;
  std::uint64_t iterations = 0;
  for (long epoch = 0;;) {
    s = settings_at(p, epoch, row_norm, options);
    for (const auto& batch : stream.epoch()) {
      w = sgd_step(w, batch, p.eta, s, &dropout);
      ++iterations;
    }
    ++epoch;
    Observables obs;
    obs.epoch = epoch;
    obs.train_error = train_error(w, data);
    obs.loss = ce_loss(w, data, s.beta, s.omega);
    if (mon.epoch_end(epoch, obs, std::nullopt)) break;
  }
  r.minibatches = stream.batches_drawn();
  r.weights = std::move(w);
  finish(r, data, s, stream.batches_per_epoch(), iterations);
  return r;
}

TrainResult train_esgd(const AlgorithmParams& p, const LabeledSet& data, Eigen::Index hidden,
                       std::uint64_t seed, const TrainOptions& options, double row_norm) {
  TrainResult r;
  Rng init(stream_seed(seed, 0, 0));
  Rng dropout(stream_seed(seed, 0, 2));
  Rng noise(stream_seed(seed, 0, 3));
  MinibatchStream stream(data, p.batch_size, stream_seed(seed, 0, 1));
  const auto bpe = static_cast<long>(stream.batches_per_epoch());

  ESGDHyper hyper;
  hyper.inner_steps = p.inner_steps;
  hyper.eta = p.eta;
  hyper.eta_prime = p.eta_prime;
  hyper.noise = p.noise;
  hyper.alpha = p.alpha;
  ESGDState state = make_esgd_state(init_weights(hidden, data.dim(), init, row_norm), hyper);

  StepSettings s = settings_at(p, 0, row_norm, options);
  GradientSource source = [&]() -> GradientFn {
    auto batch = std::make_shared<LabeledSet>(stream.next());
    return [batch, &s, &dropout](const WeightMatrix& at) { return data_gradient(at, *batch, s, &dropout); };
  };

  const double gamma0 =
      p.auto_gamma0 ? auto_gamma0_esgd(state, source, data, s.beta, s.omega, noise, row_norm) : p.gamma.s0;
  const double gamma1 = gamma1_for(p);
  r.gamma0 = gamma0;

  Monitor mon{p, options, r};
  long epoch = 0;
  std::uint64_t iterations = 0;
  for (;;) {
    s = settings_at(p, epoch, row_norm, options);
    if (p.noise_from_beta) state.hyper.noise = std::sqrt(2.0 / s.beta);
    const double dist = esgd_outer_step(state, source, gamma_schedule(gamma0, gamma1, epoch), noise, row_norm);
    ++iterations;
    const long now = options.budget == BudgetMode::MatchedData
                         ? static_cast<long>(stream.batches_drawn()) / bpe
                         : static_cast<long>(iterations) / bpe;
    if (now == epoch) continue;
    epoch = now;
    Observables obs;
    obs.epoch = epoch;
    obs.train_error = train_error(state.w, data);
    obs.loss = ce_loss(state.w, data, s.beta, s.omega);
    obs.esgd_distance = dist;
    if (mon.epoch_end(epoch, obs, dist)) break;
  }
  mon.close_trace();
  r.minibatches = stream.batches_drawn();
  r.weights = state.w;
  finish(r, data, s, stream.batches_per_epoch(), iterations);
  return r;
}

TrainResult train_rsgd(const AlgorithmParams& p, const LabeledSet& data, Eigen::Index hidden,
                       std::uint64_t seed, const TrainOptions& options, double row_norm) {
  TrainResult r;
  const auto y = static_cast<std::size_t>(p.replicas);
  std::vector<WeightMatrix> init;
  std::vector<MinibatchStream> streams;
  std::vector<Rng> dropouts;
  for (std::size_t a = 0; a < y; ++a) {
    Rng rng(stream_seed(seed, a, 0));
    init.push_back(init_weights(hidden, data.dim(), rng, row_norm));
    streams.emplace_back(data, p.batch_size, stream_seed(seed, a, 1));
    dropouts.emplace_back(stream_seed(seed, a, 2));
  }
  ReplicaEnsemble ens = make_ensemble(std::move(init));
  const auto bpe = static_cast<long>(streams.front().batches_per_epoch());

  StepSettings s = settings_at(p, 0, row_norm, options);
  const double gamma0 = p.auto_gamma0 ? auto_gamma0_rsgd(ens, data, s.beta, s.omega) : p.gamma.s0;
  const double gamma1 = gamma1_for(p);
  r.gamma0 = gamma0;

  Monitor mon{p, options, r};
  long epoch = 0;
  std::uint64_t t = 0;
  std::vector<LabeledSet> batches(y);
  for (;;) {
    s = settings_at(p, epoch, row_norm, options);
    ++t;
    for (std::size_t a = 0; a < y; ++a) batches[a] = streams[a].next();
    rsgd_step(ens, batches, p.eta, gamma_schedule(gamma0, gamma1, epoch), p.coupling_period,
              static_cast<long>(t), s, &dropouts);
    const long now = options.budget == BudgetMode::MatchedData ? static_cast<long>(t * y) / bpe
                                                               : static_cast<long>(t) / bpe;
    if (now == epoch) continue;
    epoch = now;
    Observables obs;
    obs.epoch = epoch;
    const double dist = mean_replica_distance(ens);
    obs.replica_distance = dist;
    if (p.stop.kind == StopKind::ZeroTrainError || p.stop.kind == StopKind::LossBelow) {
      const WeightMatrix center = renormalize(barycenter(ens), row_norm);
      obs.train_error = train_error(center, data);
      obs.loss = ce_loss(center, data, s.beta, s.omega);
    }
    if (mon.epoch_end(epoch, obs, dist)) break;
  }
  mon.close_trace();
  for (const auto& st : streams) r.minibatches += st.batches_drawn();
  r.weights = renormalize(barycenter(ens), row_norm);
  for (const auto& rep : ens.replicas) r.replica_train_errors.push_back(train_error(rep, data));
  r.replicas = std::move(ens.replicas);
  finish(r, data, s, streams.front().batches_per_epoch(), t);
  return r;
}

}  // namespace

double row_norm_value(RowNormConvention c, Eigen::Index inputs) {
  return c == RowNormConvention::Unit ? 1.0 : std::sqrt(static_cast<double>(inputs));
}

TrainResult train(const AlgorithmParams& params, const LabeledSet& train_set, Eigen::Index hidden,
                  std::uint64_t seed, const TrainOptions& options) {
  validate(params, train_set);
  if (hidden < 1) throw std::invalid_argument("hidden layer needs H >= 1");
  if (!(options.loss_scale > 0.0)) throw std::invalid_argument("loss scale must be positive");
  const double row_norm = row_norm_value(options.row_norm, train_set.dim());
  switch (params.algorithm) {
    case Algorithm::Sgd: return train_sgd(params, train_set, hidden, seed, options, row_norm);
    case Algorithm::Esgd: return train_esgd(params, train_set, hidden, seed, options, row_norm);
    case Algorithm::Rsgd: return train_rsgd(params, train_set, hidden, seed, options, row_norm);
  }
  throw std::invalid_argument("unknown algorithm");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Sgd: return "sgd";
    case Algorithm::Esgd: return "esgd";
    case Algorithm::Rsgd: return "rsgd";
  }
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "sgd") return Algorithm::Sgd;
  if (name == "esgd") return Algorithm::Esgd;
  if (name == "rsgd") return Algorithm::Rsgd;
  throw std::invalid_argument("unknown algorithm: " + name);
}

std::string to_string(BudgetMode m) {
  return m == BudgetMode::MatchedData ? "matched" : "per-replica";
}

BudgetMode budget_mode_from_string(const std::string& name) {
  if (name == "matched") return BudgetMode::MatchedData;
  if (name == "per-replica") return BudgetMode::PerReplica;
  throw std::invalid_argument("unknown budget mode: " + name);
}

std::string to_string(RowNormConvention c) { return c == RowNormConvention::Unit ? "unit" : "sqrt-n"; }

RowNormConvention row_norm_from_string(const std::string& name) {
  if (name == "sqrt-n") return RowNormConvention::SqrtN;
  if (name == "unit") return RowNormConvention::Unit;
  throw std::invalid_argument("unknown row norm convention: " + name);
}

std::string to_string(GradientConvention c) {
  switch (c) {
    case GradientConvention::Mean: return "mean";
    case GradientConvention::Sum: return "sum";
    case GradientConvention::UnitSum: return "unit-sum";
  }
  return "unknown";
}

GradientConvention gradient_convention_from_string(const std::string& name) {
  if (name == "mean") return GradientConvention::Mean;
  if (name == "sum") return GradientConvention::Sum;
  if (name == "unit-sum") return GradientConvention::UnitSum;
  throw std::invalid_argument("unknown gradient convention: " + name);
}

double loss_scale_for(GradientConvention c, std::size_t batch_size, double row_norm) {
  const auto b = static_cast<double>(batch_size);
  switch (c) {
    case GradientConvention::Mean: return 1.0;
    case GradientConvention::Sum: return b;
    case GradientConvention::UnitSum: return b * row_norm * row_norm;
  }
  return 1.0;
}

}  // namespace flatmin

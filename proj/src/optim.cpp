#include "flatmin/optim.hpp"

#include "flatmin/flatness.hpp"

#include <cmath>
#include <stdexcept>

namespace flatmin {

WeightMatrix data_gradient(const WeightMatrix& w, const LabeledSet& batch,
                           const StepSettings& settings, Rng* rng) {
  if (settings.dropout > 0.0) {
    if (!rng) throw std::invalid_argument("dropout requires a random stream");
    const auto mask = draw_dropout_mask(batch.size(), w.rows(), settings.dropout, *rng);
    return settings.loss_scale * ce_grad(w, batch, settings.beta, settings.omega, &mask);
  }
  if (settings.loss_scale == 1.0) return ce_grad(w, batch, settings.beta, settings.omega);
  return settings.loss_scale * ce_grad(w, batch, settings.beta, settings.omega);
}

WeightMatrix renormalize(WeightMatrix w, const std::optional<double>& row_norm) {
  if (!row_norm) return w;
  return normalize_rows(std::move(w), *row_norm);
}

WeightMatrix sgd_step(const WeightMatrix& w, const WeightMatrix& grad, double eta,
                      const std::optional<double>& row_norm) {
  if (!(eta > 0.0)) throw std::invalid_argument("learning rate must be positive");
  return renormalize(w - eta * grad, row_norm);
}

WeightMatrix sgd_step(const WeightMatrix& w, const LabeledSet& batch, double eta,
                      const StepSettings& settings, Rng* dropout_rng) {
  return sgd_step(w, data_gradient(w, batch, settings, dropout_rng), eta, settings.row_norm);
}

WeightMatrix barycenter(const std::vector<WeightMatrix>& replicas) {
  if (replicas.empty()) throw std::invalid_argument("empty replica ensemble");
  WeightMatrix sum = replicas.front();
  for (std::size_t a = 1; a < replicas.size(); ++a) sum += replicas[a];
  return sum / static_cast<double>(replicas.size());
}

WeightMatrix barycenter(const ReplicaEnsemble& ens) { return barycenter(ens.replicas); }

ReplicaEnsemble make_ensemble(std::vector<WeightMatrix> replicas) {
  ReplicaEnsemble ens;
  ens.center = barycenter(replicas);
  ens.replicas = std::move(replicas);
  return ens;
}

double mean_replica_distance(const ReplicaEnsemble& ens) {
  const WeightMatrix center = barycenter(ens);
  double total = 0.0;
  for (const auto& r : ens.replicas) total += sq_distance(r, center);
  return total / static_cast<double>(ens.size());
}

ESGDState make_esgd_state(WeightMatrix w, const ESGDHyper& hyper) {
  if (hyper.inner_steps < 1) throw std::invalid_argument("eSGD needs L >= 1");
  if (!(hyper.alpha >= 0.0 && hyper.alpha < 1.0)) throw std::invalid_argument("alpha must be in [0, 1)");
  if (hyper.noise < 0.0) throw std::invalid_argument("noise must be non-negative");
  if (!(hyper.eta_prime > 0.0)) throw std::invalid_argument("SGLD rate must be positive");
  ESGDState s;
  s.wprime = w;
  s.mu = w;
  s.w = std::move(w);
  s.hyper = hyper;
  return s;
}

void sgld_inner_step(ESGDState& state, const GradientFn& grad, double gamma, Rng& rng,
                     const std::optional<double>& row_norm) {
  const auto& hp = state.hyper;
  const WeightMatrix dw = grad(state.wprime) + gamma * (state.wprime - state.w);
  WeightMatrix next = state.wprime - hp.eta_prime * dw;
  if (hp.noise > 0.0) {
    std::normal_distribution<double> normal;
    const double scale = std::sqrt(hp.eta_prime) * hp.noise;
    for (Eigen::Index k = 0; k < next.size(); ++k) next.data()[k] += scale * normal(rng);
  }
  state.wprime = renormalize(std::move(next), row_norm);
  state.mu = hp.alpha * state.mu + (1.0 - hp.alpha) * state.wprime;
}

void esgd_inner_loop(ESGDState& state, const GradientSource& source, double gamma, Rng& rng,
                     const std::optional<double>& row_norm) {
  state.wprime = state.w;
  state.mu = state.w;
  for (int l = 0; l < state.hyper.inner_steps; ++l) sgld_inner_step(state, source(), gamma, rng, row_norm);
}

double esgd_outer_step(ESGDState& state, const GradientSource& source, double gamma, Rng& rng,
                       const std::optional<double>& row_norm) {
  esgd_inner_loop(state, source, gamma, rng, row_norm);
  const double dist = sq_distance(state.w, state.mu);
  state.w = renormalize(state.w - state.hyper.eta * (state.w - state.mu), row_norm);
  return dist;
}

void rsgd_step(ReplicaEnsemble& ens, const std::vector<GradientFn>& grads, double eta, double gamma,
               long coupling_period, long t, const std::optional<double>& row_norm) {
  if (grads.size() != ens.size()) {
    throw std::invalid_argument("rSGD needs one batch per replica: got " + std::to_string(grads.size()) +
                                " for " + std::to_string(ens.size()));
  }
  if (coupling_period < 1) throw std::invalid_argument("coupling period K must be >= 1");
  if (eta < 0.0 || gamma < 0.0) throw std::invalid_argument("eta and gamma must be non-negative");
  const bool interact = t % coupling_period == 0;
  if (interact) ens.center = barycenter(ens);
  const double coupling = static_cast<double>(coupling_period) * gamma;
  for (std::size_t a = 0; a < ens.size(); ++a) {
    WeightMatrix dw = grads[a](ens.replicas[a]);
    if (interact) dw += coupling * (ens.replicas[a] - ens.center);
    ens.replicas[a] = renormalize(ens.replicas[a] - eta * dw, row_norm);
  }
}

void rsgd_step(ReplicaEnsemble& ens, const std::vector<LabeledSet>& batches, double eta,
               double gamma, long coupling_period, long t, const StepSettings& settings,
               std::vector<Rng>* dropout_rngs) {
  if (batches.size() != ens.size()) {
    throw std::invalid_argument("rSGD needs one batch per replica: got " +
                                std::to_string(batches.size()) + " for " + std::to_string(ens.size()));
  }
  std::vector<GradientFn> grads;
  grads.reserve(batches.size());
  for (std::size_t a = 0; a < batches.size(); ++a) {
    Rng* rng = dropout_rngs ? &(*dropout_rngs)[a] : nullptr;
    grads.emplace_back([&batches, &settings, rng, a](const WeightMatrix& w) {
      return data_gradient(w, batches[a], settings, rng);
    });
  }
  rsgd_step(ens, grads, eta, gamma, coupling_period, t, settings.row_norm);
}

double gamma_schedule(double gamma0, double gamma1, long tau) {
  return anneal(AnnealSchedule{gamma0, gamma1}, tau);
}

double solve_gamma1(double factor, long epochs) {
  if (!(factor > 1.0)) throw std::invalid_argument("growth factor must exceed 1");
  if (epochs < 1) throw std::invalid_argument("epoch count must be >= 1");
  return std::pow(factor, 1.0 / static_cast<double>(epochs)) - 1.0;
}

double auto_gamma0_rsgd(const ReplicaEnsemble& ens, const LabeledSet& data, double beta,
                        double omega) {
  const WeightMatrix center = barycenter(ens);
  double loss = 0.0;
  double dist = 0.0;
  for (const auto& r : ens.replicas) {
    loss += ce_loss(r, data, beta, omega);
    dist += sq_distance(r, center);
  }
  if (!(dist > 0.0)) throw std::domain_error("replicas coincide; reinitialize before choosing gamma0");
  return loss / dist;
}

double auto_gamma0_esgd(const WeightMatrix& w, const WeightMatrix& wprime_after_free_loop,
                        const LabeledSet& data, double beta, double omega) {
  const double dist = sq_distance(wprime_after_free_loop, w);
  if (!(dist > 0.0)) throw std::domain_error("free SGLD loop did not move; cannot choose gamma0");
  return ce_loss(w, data, beta, omega) / dist;
}

double auto_gamma0_esgd(const ESGDState& state, const GradientSource& source,
                        const LabeledSet& data, double beta, double omega, Rng& rng,
                        const std::optional<double>& row_norm) {
  ESGDState probe = state;
  esgd_inner_loop(probe, source, 0.0, rng, row_norm);
  return auto_gamma0_esgd(state.w, probe.wprime, data, beta, omega);
}

namespace {

double require(const std::optional<double>& v, const char* what) {
  if (!v) throw std::invalid_argument(std::string("stop criterion needs observable: ") + what);
  return *v;
}

}  // namespace

bool check_stop(const StopCriterion& criterion, const Observables& obs) {
  switch (criterion.kind) {
    case StopKind::ZeroTrainError:
      return require(obs.train_error, "train_error") == 0.0;
    case StopKind::LossBelow:
      return require(obs.loss, "loss") < criterion.threshold;
    case StopKind::ReplicaDistanceBelow:
      return require(obs.replica_distance, "replica_distance") < criterion.threshold;
    case StopKind::EsgdDistanceBelow:
      return require(obs.esgd_distance, "esgd_distance") < criterion.threshold;
    case StopKind::MaxEpochs:
      if (!obs.epoch) throw std::invalid_argument("stop criterion needs observable: epoch");
      return static_cast<double>(*obs.epoch) >= criterion.threshold;
  }
  return false;
}

std::string to_string(StopKind kind) {
  switch (kind) {
    case StopKind::ZeroTrainError: return "zero-train-error";
    case StopKind::LossBelow: return "loss-below";
    case StopKind::ReplicaDistanceBelow: return "replica-distance-below";
    case StopKind::EsgdDistanceBelow: return "esgd-distance-below";
    case StopKind::MaxEpochs: return "max-epochs";
  }
  return "unknown";
}

StopKind stop_kind_from_string(const std::string& name) {
  for (auto k : {StopKind::ZeroTrainError, StopKind::LossBelow, StopKind::ReplicaDistanceBelow,
                 StopKind::EsgdDistanceBelow, StopKind::MaxEpochs}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown stop criterion: " + name);
}

}  // namespace flatmin

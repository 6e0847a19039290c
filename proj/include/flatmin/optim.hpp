#pragma once

#include "flatmin/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace flatmin {

/// Gradient of the training loss at a point, evaluated on whatever minibatch the caller binds.
using GradientFn = std::function<WeightMatrix(const WeightMatrix&)>;

/// Yields the gradient oracle for the next minibatch on each call.
using GradientSource = std::function<GradientFn()>;

/// Loss parameters and the row-norm constraint shared by every update rule.
struct StepSettings {
  double beta = 1.0;
  double omega = 1.0;
  /// Target row norm after each update; empty disables renormalization.
  std::optional<double> row_norm;
  /// Hidden-unit dropout probability applied while computing training gradients.
  double dropout = 0.0;
  /// Multiplies the data gradient (batch size for a summed minibatch loss).
  double loss_scale = 1.0;
};

/// ce_grad on one batch, drawing a dropout mask from rng when settings.dropout > 0.
WeightMatrix data_gradient(const WeightMatrix& w, const LabeledSet& batch,
                           const StepSettings& settings, Rng* rng = nullptr);

WeightMatrix renormalize(WeightMatrix w, const std::optional<double>& row_norm);

/// w <- w - eta * grad, then renormalization.
WeightMatrix sgd_step(const WeightMatrix& w, const WeightMatrix& grad, double eta,
                      const std::optional<double>& row_norm);

/// One SGD step on a committee-machine batch.
WeightMatrix sgd_step(const WeightMatrix& w, const LabeledSet& batch, double eta,
                      const StepSettings& settings, Rng* dropout_rng = nullptr);

struct ReplicaEnsemble {
  std::vector<WeightMatrix> replicas;
  WeightMatrix center;  // barycenter, refreshed at interaction steps

  [[nodiscard]] std::size_t size() const { return replicas.size(); }
};

WeightMatrix barycenter(const std::vector<WeightMatrix>& replicas);
WeightMatrix barycenter(const ReplicaEnsemble& ens);

/// Builds an ensemble and its barycenter from initial replicas.
ReplicaEnsemble make_ensemble(std::vector<WeightMatrix> replicas);

/// Mean over replicas of d(w^a, center).
double mean_replica_distance(const ReplicaEnsemble& ens);

struct ESGDHyper {
  int inner_steps = 20;      // L
  double eta = 1e-3;         // outer rate, gamma absorbed
  double eta_prime = 5e-3;   // SGLD rate
  double noise = 1e-4;       // epsilon
  double alpha = 0.75;       // exponential averaging of SGLD iterates
};

struct ESGDState {
  WeightMatrix w;
  WeightMatrix wprime;
  WeightMatrix mu;
  ESGDHyper hyper;
};

ESGDState make_esgd_state(WeightMatrix w, const ESGDHyper& hyper);

/// One SGLD step of the walker:
///   w' <- w' - eta' [grad(w') + gamma (w' - w)] + sqrt(eta') eps xi,  mu <- alpha mu + (1-alpha) w'.
void sgld_inner_step(ESGDState& state, const GradientFn& grad, double gamma, Rng& rng,
                     const std::optional<double>& row_norm);

/// Resets w', mu <- w, runs L SGLD steps (one minibatch each) and applies w <- w - eta (w - mu).
/// Returns d(w, mu) measured before the outer update.
double esgd_outer_step(ESGDState& state, const GradientSource& source, double gamma, Rng& rng,
                       const std::optional<double>& row_norm);

/// Runs only the inner loop (used by the automatic gamma0 rule); w is left untouched.
void esgd_inner_loop(ESGDState& state, const GradientSource& source, double gamma, Rng& rng,
                     const std::optional<double>& row_norm);

/// One parallel rSGD iteration t. Each replica takes its gradient; when t % K == 0 the
/// barycenter is recomputed first and K gamma (w^a - center) is added before the update.
void rsgd_step(ReplicaEnsemble& ens, const std::vector<GradientFn>& grads, double eta, double gamma,
               long coupling_period, long t, const std::optional<double>& row_norm);

/// Committee-machine convenience: one batch per replica.
void rsgd_step(ReplicaEnsemble& ens, const std::vector<LabeledSet>& batches, double eta,
               double gamma, long coupling_period, long t, const StepSettings& settings,
               std::vector<Rng>* dropout_rngs = nullptr);

double gamma_schedule(double gamma0, double gamma1, long tau);

/// gamma1 such that gamma grows by `factor` over T epochs.
double solve_gamma1(double factor, long epochs);

/// sum_a L(w^a) / sum_a d(w^a, center).
double auto_gamma0_rsgd(const ReplicaEnsemble& ens, const LabeledSet& data, double beta,
                        double omega);

/// L(w) / d(w', w).
double auto_gamma0_esgd(const WeightMatrix& w, const WeightMatrix& wprime_after_free_loop,
                        const LabeledSet& data, double beta, double omega);

/// Runs one free (gamma = 0) inner loop from state.w and applies the L(w) / d(w', w) rule.
double auto_gamma0_esgd(const ESGDState& state, const GradientSource& source,
                        const LabeledSet& data, double beta, double omega, Rng& rng,
                        const std::optional<double>& row_norm);

enum class StopKind { ZeroTrainError, LossBelow, ReplicaDistanceBelow, EsgdDistanceBelow, MaxEpochs };

struct StopCriterion {
  StopKind kind = StopKind::MaxEpochs;
  double threshold = 0.0;
};

struct Observables {
  std::optional<double> train_error;
  std::optional<double> loss;
  std::optional<double> replica_distance;
  std::optional<double> esgd_distance;
  std::optional<long> epoch;
};

/// True iff the criterion's condition holds. Throws if the needed observable is absent.
bool check_stop(const StopCriterion& criterion, const Observables& obs);

std::string to_string(StopKind kind);
StopKind stop_kind_from_string(const std::string& name);

}  // namespace flatmin

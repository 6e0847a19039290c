#pragma once

#include "flatmin/model.hpp"
#include "flatmin/optim.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace flatmin {

enum class Algorithm { Sgd, Esgd, Rsgd };

/// How epochs are counted for schedules and caps.
///  MatchedData: one epoch = batches_per_epoch minibatch gradients, whoever consumes them
///               (an eSGD outer step spends L, an rSGD iteration spends y).
///  PerReplica:  one epoch = batches_per_epoch iterations (outer steps / parallel steps).
enum class BudgetMode { MatchedData, PerReplica };

/// Target row norm after every update.
enum class RowNormConvention { SqrtN, Unit };

/// Scale of the data gradient fed to every update rule.
///  Mean:    gradient of the minibatch-mean loss.
///  Sum:     gradient of the minibatch-sum loss (x B).
///  UnitSum: minibatch-sum loss stepped in unit-norm row coordinates u = w / r for rows of
///           norm r (x B r^2, i.e. x N B at r = sqrt(N)); the same trajectory as learning u with
///           preactivation u.x.
enum class GradientConvention { Mean, Sum, UnitSum };

/// Full hyper-parameter set of one algorithm preset.
struct AlgorithmParams {
  Algorithm algorithm = Algorithm::Sgd;
  double eta = 2e-4;
  AnnealSchedule beta{2.0, 1e-4};
  AnnealSchedule omega{5.0, 0.0};
  std::size_t batch_size = 100;
  double dropout = 0.0;

  // focusing (rSGD and eSGD)
  AnnealSchedule gamma{0.0, 0.0};
  bool auto_gamma0 = false;
  /// When > 1, gamma1 is replaced by solve_gamma1(factor, max_epochs).
  double gamma_growth_factor = 0.0;

  // rSGD
  int replicas = 1;
  long coupling_period = 1;

  // eSGD
  int inner_steps = 20;
  double eta_prime = 5e-3;
  double noise = 1e-4;
  double alpha = 0.75;
  /// Use eps = sqrt(2 / beta(t)) instead of the fixed noise value.
  bool noise_from_beta = false;

  StopCriterion stop;
  long max_epochs = 10000;
};

struct TrainOptions {
  BudgetMode budget = BudgetMode::PerReplica;
  RowNormConvention row_norm = RowNormConvention::SqrtN;
  /// Multiplier on the minibatch-mean training loss (and its gradient). 1 trains on the mean;
  /// the batch size trains on the minibatch sum.
  double loss_scale = 1.0;
  /// Record the distance trace every this many epochs (the final value is always kept).
  long trace_every = 10;
};

struct TrainResult {
  /// The configuration that is evaluated: the (row-normalized) barycenter for rSGD.
  WeightMatrix weights;
  std::vector<WeightMatrix> replicas;
  std::string stop_reason;
  long epochs = 0;            // schedule epochs under the chosen budget mode
  double epochs_raw = 0.0;    // iterations / batches_per_epoch
  double epochs_data = 0.0;   // minibatches consumed / batches_per_epoch
  std::uint64_t minibatches = 0;
  double train_error = 0.0;
  double loss = 0.0;
  double final_distance = 0.0;  // replica-barycenter (rSGD) or w-mu (eSGD)
  std::vector<double> distance_trace;
  std::vector<double> replica_train_errors;
  double gamma0 = 0.0;
};

double row_norm_value(RowNormConvention c, Eigen::Index inputs);

/// Trains from a fresh initialization derived from seed until the stop criterion or the cap.
TrainResult train(const AlgorithmParams& params, const LabeledSet& train_set, Eigen::Index hidden,
                  std::uint64_t seed, const TrainOptions& options = {});

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);
std::string to_string(BudgetMode m);
BudgetMode budget_mode_from_string(const std::string& name);
std::string to_string(RowNormConvention c);
RowNormConvention row_norm_from_string(const std::string& name);
std::string to_string(GradientConvention c);
GradientConvention gradient_convention_from_string(const std::string& name);

/// TrainOptions::loss_scale realizing a convention for batch size B and row norm r.
double loss_scale_for(GradientConvention c, std::size_t batch_size, double row_norm);

}  // namespace flatmin

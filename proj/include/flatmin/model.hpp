#pragma once

#include "flatmin/types.hpp"

#include <optional>

namespace flatmin {

/// Exponential schedule value(t) = s0 * (1 + s1)^t, used for beta, omega and gamma.
struct AnnealSchedule {
  double s0 = 1.0;
  double s1 = 0.0;
};

double anneal(const AnnealSchedule& s, long t);

/// Smoothed committee output (1/sqrt(H)) sum_h tanh(beta * preact_h), no output sign.
double margin(const WeightMatrix& w, const Eigen::Ref<const Eigen::VectorXd>& x, double beta);

/// Hard committee prediction in {-1, +1}; exact zeros resolve to +1.
int predict(const WeightMatrix& w, const Eigen::Ref<const Eigen::VectorXd>& x);

/// f(x, omega) = -x/2 + log(2 cosh(omega x)) / (2 omega), evaluated without overflow.
double f_loss(double x, double omega);

/// Derivative of f_loss with respect to x.
double f_loss_prime(double x, double omega);

/// Per-(pattern, hidden unit) multiplicative keep mask; entries are 0 or 1/(1-p).
using DropoutMask = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Mean of f_loss(y * margin) over the set. A mask, when given, must be size() x H.
double ce_loss(const WeightMatrix& w, const LabeledSet& batch, double beta, double omega,
               const DropoutMask* mask = nullptr);

/// Analytic gradient of ce_loss with respect to w.
WeightMatrix ce_grad(const WeightMatrix& w, const LabeledSet& batch, double beta, double omega,
                     const DropoutMask* mask = nullptr);

/// Fraction of patterns misclassified by the hard predictor.
double train_error(const WeightMatrix& w, const LabeledSet& data);

/// Rescale each row to Euclidean norm sqrt(N). Throws on a zero row.
WeightMatrix normalize_rows(WeightMatrix w);

/// Rescale each row to the given Euclidean norm. Throws on a zero row.
WeightMatrix normalize_rows(WeightMatrix w, double row_norm);

/// Inverted dropout on hidden-unit activations: each entry kept with probability 1 - p and
/// scaled by 1/(1-p). p must lie in [0, 1).
Eigen::VectorXd apply_dropout(const Eigen::Ref<const Eigen::VectorXd>& hidden, double p, Rng& rng);

/// Draws a rows x hidden mask with the same law as apply_dropout.
DropoutMask draw_dropout_mask(Eigen::Index rows, Eigen::Index hidden, double p, Rng& rng);

/// Entries i.i.d. uniform on [-1, 1], then rows rescaled to row_norm (sqrt(N) when absent).
WeightMatrix init_weights(Eigen::Index hidden, Eigen::Index inputs, Rng& rng,
                          std::optional<double> row_norm = std::nullopt);

}  // namespace flatmin

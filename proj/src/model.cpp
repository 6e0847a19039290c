#include "flatmin/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace flatmin {

namespace {

void check_pattern(const WeightMatrix& w, Eigen::Index n) {
  if (w.cols() != n) {
    throw std::invalid_argument("pattern length " + std::to_string(n) +
                                " does not match weight columns " + std::to_string(w.cols()));
  }
}

void check_batch(const WeightMatrix& w, const LabeledSet& batch, const DropoutMask* mask) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  check_pattern(w, batch.dim());
  if (batch.y.size() != batch.size()) throw std::invalid_argument("label count mismatch");
  if (mask && (mask->rows() != batch.size() || mask->cols() != w.rows())) {
    throw std::invalid_argument("dropout mask shape mismatch");
  }
}

inline double hard_sign(double v) { return v >= 0.0 ? 1.0 : -1.0; }

}  // namespace

double anneal(const AnnealSchedule& s, long t) {
  return s.s0 * std::pow(1.0 + s.s1, static_cast<double>(t));
}

double margin(const WeightMatrix& w, const Eigen::Ref<const Eigen::VectorXd>& x, double beta) {
  check_pattern(w, x.size());
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(w.cols()));
  const Eigen::VectorXd pre = (w * x) * inv_sqrt_n;
  return (beta * pre.array()).tanh().sum() / std::sqrt(static_cast<double>(w.rows()));
}

int predict(const WeightMatrix& w, const Eigen::Ref<const Eigen::VectorXd>& x) {
  check_pattern(w, x.size());
  const Eigen::VectorXd pre = w * x;
  double vote = 0.0;
  for (Eigen::Index h = 0; h < pre.size(); ++h) vote += hard_sign(pre[h]);
  return vote >= 0.0 ? 1 : -1;
}

double f_loss(double x, double omega) {
  // log(2 cosh(z)) = |z| + log1p(exp(-2|z|)); the -x/2 term is folded in exactly.
  return std::max(-x, 0.0) + std::log1p(std::exp(-2.0 * omega * std::abs(x))) / (2.0 * omega);
}

double f_loss_prime(double x, double omega) { return -1.0 / (1.0 + std::exp(2.0 * omega * x)); }

double ce_loss(const WeightMatrix& w, const LabeledSet& batch, double beta, double omega,
               const DropoutMask* mask) {
  check_batch(w, batch, mask);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(w.cols()));
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(w.rows()));
  Eigen::MatrixXd act = ((batch.x * w.transpose()) * (beta * inv_sqrt_n)).array().tanh();
  if (mask) act.array() *= mask->array();
  const Eigen::VectorXd m = act.rowwise().sum() * inv_sqrt_h;
  double total = 0.0;
  for (Eigen::Index b = 0; b < batch.size(); ++b) total += f_loss(batch.y[b] * m[b], omega);
  return total / static_cast<double>(batch.size());
}

WeightMatrix ce_grad(const WeightMatrix& w, const LabeledSet& batch, double beta, double omega,
                     const DropoutMask* mask) {
  check_batch(w, batch, mask);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(w.cols()));
  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(w.rows()));
  const Eigen::MatrixXd th = ((batch.x * w.transpose()) * (beta * inv_sqrt_n)).array().tanh();
  Eigen::MatrixXd act = th;
  if (mask) act.array() *= mask->array();
  const Eigen::VectorXd m = act.rowwise().sum() * inv_sqrt_h;

  // d loss_b / d preact_bh = f'(y m) y k_bh beta (1 - tanh^2) / sqrt(H)
  Eigen::MatrixXd dpre = (1.0 - th.array().square()).matrix();
  if (mask) dpre.array() *= mask->array();
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    const double y = batch.y[b];
    dpre.row(b) *= f_loss_prime(y * m[b], omega) * y * beta * inv_sqrt_h;
  }
  WeightMatrix g = dpre.transpose() * batch.x;
  g *= inv_sqrt_n / static_cast<double>(batch.size());
  return g;
}

double train_error(const WeightMatrix& w, const LabeledSet& data) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  check_pattern(w, data.dim());
  const Eigen::MatrixXd pre = data.x * w.transpose();
  Eigen::Index wrong = 0;
  for (Eigen::Index b = 0; b < pre.rows(); ++b) {
    double vote = 0.0;
    for (Eigen::Index h = 0; h < pre.cols(); ++h) vote += hard_sign(pre(b, h));
    if (hard_sign(vote) != data.y[b]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

WeightMatrix normalize_rows(WeightMatrix w) {
  const double target = std::sqrt(static_cast<double>(w.cols()));
  return normalize_rows(std::move(w), target);
}

WeightMatrix normalize_rows(WeightMatrix w, double row_norm) {
  for (Eigen::Index h = 0; h < w.rows(); ++h) {
    const double n = w.row(h).norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw std::domain_error("cannot normalize degenerate row " + std::to_string(h));
    }
    w.row(h) *= row_norm / n;
  }
  return w;
}

Eigen::VectorXd apply_dropout(const Eigen::Ref<const Eigen::VectorXd>& hidden, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1)");
  Eigen::VectorXd out = hidden;
  if (p == 0.0) return out;
  std::bernoulli_distribution drop(p);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index h = 0; h < out.size(); ++h) out[h] = drop(rng) ? 0.0 : out[h] * keep_scale;
  return out;
}

DropoutMask draw_dropout_mask(Eigen::Index rows, Eigen::Index hidden, double p, Rng& rng) {
  DropoutMask mask(rows, hidden);
  for (Eigen::Index r = 0; r < rows; ++r) {
    mask.row(r) = apply_dropout(Eigen::VectorXd::Ones(hidden), p, rng).transpose();
  }
  return mask;
}

WeightMatrix init_weights(Eigen::Index hidden, Eigen::Index inputs, Rng& rng,
                          std::optional<double> row_norm) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  WeightMatrix w(hidden, inputs);
  for (Eigen::Index h = 0; h < hidden; ++h)
    for (Eigen::Index i = 0; i < inputs; ++i) w(h, i) = u(rng);
  return normalize_rows(std::move(w), row_norm.value_or(std::sqrt(static_cast<double>(inputs))));
}

}  // namespace flatmin

#pragma once

#include "flatmin/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace flatmin {

/// d(w', w) = 1/2 sum_i (w'_i - w_i)^2 over all entries.
double sq_distance(const WeightMatrix& w, const WeightMatrix& wprime);

enum class AbscissaKind { Sigma, SquaredDistance };

struct ProfilePoint {
  double abscissa = 0.0;
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  bool censored = false;
};

/// A flatness curve around one configuration (or an average of several).
struct FlatnessProfile {
  AbscissaKind kind = AbscissaKind::Sigma;
  std::vector<ProfilePoint> points;
  double reference_error = 0.0;
  std::string reference_hash;
};

/// Training error of a configuration; lets the estimators run on toy landscapes too.
using ErrorFn = std::function<double(const WeightMatrix&)>;

/// FNV-1a over the raw entries, as 16 hex digits.
std::string weights_hash(const WeightMatrix& w);

/// delta E_train(w, sigma) = E_z E_train(w + sigma z (.) w) - E_train(w) on each grid point.
/// Sample k of grid point j draws from its own stream derive_seed(seed, j * S + k).
FlatnessProfile local_energy_profile(const WeightMatrix& w, const LabeledSet& data,
                                     const std::vector<double>& sigma_grid,
                                     std::size_t samples_per_point, std::uint64_t seed);

FlatnessProfile local_energy_profile(const WeightMatrix& w, const ErrorFn& error,
                                     const std::vector<double>& sigma_grid,
                                     std::size_t samples_per_point, std::uint64_t seed);

/// Uniform sample from {w' : d(w', center) <= d}, the Euclidean ball of radius sqrt(2d).
WeightMatrix sample_in_ball(const WeightMatrix& center, double d, Rng& rng);

/// Monte-Carlo normalized local entropy (1/M) log p_hat, with p_hat the fraction of ball samples
/// whose error does not exceed the reference. Zero hits give the censored lower bound
/// (1/M) log(1/(S+1)).
FlatnessProfile local_entropy_mc(const WeightMatrix& w, const LabeledSet& data,
                                 const std::vector<double>& d_grid, std::size_t samples_per_point,
                                 std::uint64_t seed);

FlatnessProfile local_entropy_mc(const WeightMatrix& w, const ErrorFn& error,
                                 const std::vector<double>& d_grid, std::size_t samples_per_point,
                                 std::uint64_t seed);

/// Hit fraction -> (Phi, std_error, censored) for M parameters and S samples.
ProfilePoint entropy_point(double d, std::size_t hits, std::size_t samples, double params);

/// Quadratic toy loss L(w) = a/2 |w|^2, the only family with a closed-form Gibbs mean.
struct QuadraticLoss {
  double a = 1.0;
};

/// <w'> under Z^-1 exp(-beta L(w') - beta gamma d(w', w)) = gamma / (a + gamma) * w.
WeightMatrix gibbs_mean_oracle(const QuadraticLoss& loss, const WeightMatrix& w, double beta,
                               double gamma);

/// Random-walk Metropolis estimate of the same mean (intended for M <= 5).
WeightMatrix gibbs_mean_metropolis(const QuadraticLoss& loss, const WeightMatrix& w, double beta,
                                   double gamma, std::size_t steps, Rng& rng);

/// Precision matrix of y replicas obtained by writing exp(-beta y L_LE(w)) as a joint over
/// (w, w^1..w^y) and integrating out w (Schur complement), for the quadratic loss, per coordinate.
Eigen::MatrixXd replica_precision_from_local_entropy(const QuadraticLoss& loss, double beta,
                                                     double gamma, int replicas);

/// Precision matrix read directly off the replicated energy
/// beta [sum_a L(w^a) + gamma sum_a d(w^a, center)], per coordinate.
Eigen::MatrixXd replicated_loss_precision(const QuadraticLoss& loss, double beta, double gamma,
                                          int replicas);

/// Averages profiles sharing one grid. The combined standard error adds the propagated
/// per-profile errors, sqrt(sum se^2) / n, and the spread of the means across profiles.
FlatnessProfile average_profiles(const std::vector<FlatnessProfile>& profiles);

void write_profile_csv(const FlatnessProfile& profile, std::ostream& out);
FlatnessProfile read_profile_csv(std::istream& in, AbscissaKind kind);
std::string profile_to_json(const FlatnessProfile& profile);

/// Fixed 17-significant-digit text, so outputs are byte-stable and round-trip exactly.
std::string format_double(double v);

std::vector<double> linspace(double lo, double hi, std::size_t count);
std::vector<double> logspace(double lo, double hi, std::size_t count);

}  // namespace flatmin

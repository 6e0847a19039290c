#include "flatmin/data.hpp"
#include "flatmin/flatness.hpp"
#include "flatmin/model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace flatmin;

TEST(SqDistance, Examples) {
  WeightMatrix a(1, 3), b(1, 3);
  a << 0, 0, 0;
  b << 1, 2, 2;
  EXPECT_DOUBLE_EQ(sq_distance(a, b), 4.5);
  EXPECT_DOUBLE_EQ(sq_distance(b, a), 4.5);
  EXPECT_EQ(sq_distance(b, b), 0.0);
  EXPECT_THROW(sq_distance(a, WeightMatrix::Zero(3, 1)), std::invalid_argument);
}

TEST(LocalEnergy, ZeroNoiseIsExactlyZero) {
  Rng gen(1);
  const Dataset ds = synth_teacher_dataset(20, 3, 80, gen);
  const WeightMatrix w = init_weights(3, 20, gen);
  const auto prof = local_energy_profile(w, ds.data, {0.0, 0.5}, 20, 7);
  EXPECT_EQ(prof.points[0].mean, 0.0);
  EXPECT_EQ(prof.points[0].std_error, 0.0);
  EXPECT_EQ(prof.reference_error, train_error(w, ds.data));
}

TEST(LocalEnergy, LargeNoiseApproachesChance) {
  // Huge multiplicative noise randomizes every weight sign, so the error tends to 1/2.
  Rng gen(2);
  const std::size_t n = 31;
  const Dataset ds = synth_teacher_dataset(n, 1, 400, gen);
  const WeightMatrix w = init_weights(1, n, gen);
  const double e0 = train_error(w, ds.data);
  const auto prof = local_energy_profile(w, ds.data, {1e4}, 400, 3);
  EXPECT_NEAR(prof.points[0].mean, 0.5 - e0, 0.06);
}

TEST(LocalEnergy, InvariantToPositiveRowScaling) {
  Rng gen(4);
  const Dataset ds = synth_teacher_dataset(16, 3, 60, gen);
  const WeightMatrix w = init_weights(3, 16, gen);
  WeightMatrix scaled = w;
  scaled.row(0) *= 3.0;
  scaled.row(2) *= 0.25;
  const std::vector<double> grid{0.0, 0.3, 0.9};
  const auto a = local_energy_profile(w, ds.data, grid, 50, 11);
  const auto b = local_energy_profile(scaled, ds.data, grid, 50, 11);
  for (std::size_t j = 0; j < grid.size(); ++j) EXPECT_EQ(a.points[j].mean, b.points[j].mean);
}

TEST(LocalEnergy, DeterministicAndGridChecked) {
  Rng gen(5);
  const Dataset ds = synth_teacher_dataset(10, 1, 40, gen);
  const WeightMatrix w = init_weights(2, 10, gen);
  const auto a = local_energy_profile(w, ds.data, {0.0, 0.5, 1.0}, 30, 9);
  const auto b = local_energy_profile(w, ds.data, {0.0, 0.5, 1.0}, 30, 9);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a.points[j].mean, b.points[j].mean);
  EXPECT_THROW(local_energy_profile(w, ds.data, {0.5, 0.1}, 5, 1), std::invalid_argument);
  EXPECT_THROW(local_energy_profile(w, ds.data, {-0.1}, 5, 1), std::invalid_argument);
  EXPECT_THROW(local_energy_profile(w, ds.data, {0.1}, 0, 1), std::invalid_argument);
}

TEST(BallSampling, InsideAndCentered) {
  Rng rng(6);
  WeightMatrix c(2, 3);
  c << 1, -2, 3, 0.5, 0, -1;
  WeightMatrix acc = WeightMatrix::Zero(2, 3);
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const WeightMatrix s = sample_in_ball(c, 0.8, rng);
    EXPECT_LE(sq_distance(s, c), 0.8 * (1 + 1e-12));
    acc += s;
  }
  acc /= n;
  EXPECT_LT((acc - c).cwiseAbs().maxCoeff(), 0.03);
  EXPECT_THROW(sample_in_ball(c, 0.0, rng), std::invalid_argument);
}

TEST(BallSampling, UniformInDisk) {
  // For M = 2 the squared radius fraction r^2 / R^2 is U(0,1) and the angle is U(-pi, pi).
  Rng rng(7);
  const WeightMatrix c = WeightMatrix::Zero(1, 2);
  const double d = 2.0;  // R^2 = 4
  std::vector<double> r2, angle;
  for (int k = 0; k < 5000; ++k) {
    const WeightMatrix s = sample_in_ball(c, d, rng);
    r2.push_back(s.squaredNorm() / (2 * d));
    angle.push_back(std::atan2(s(0, 1), s(0, 0)));
  }
  EXPECT_GT(oracle::ks_pvalue(r2, [](double u) { return std::clamp(u, 0.0, 1.0); }), 0.01);
  EXPECT_GT(oracle::ks_pvalue(angle, [](double t) { return (t + std::numbers::pi) / (2 * std::numbers::pi); }), 0.01);
}

TEST(LocalEntropy, HalfSpaceGivesHalf) {
  // Error 0 on the half-space w'_1 >= w_1: the hit probability is 1/2 at every d.
  const WeightMatrix w = WeightMatrix::Constant(1, 1, 0.3);
  const ErrorFn err = [](const WeightMatrix& v) { return v(0, 0) >= 0.3 ? 0.0 : 1.0; };
  const auto prof = local_entropy_mc(w, err, {0.01, 1.0, 100.0}, 4000, 12);
  for (const auto& p : prof.points) {
    EXPECT_NEAR(p.mean, std::log(0.5), 4 * p.std_error + 1e-12);
    EXPECT_FALSE(p.censored);
  }
}

TEST(LocalEntropy, InnerBallFractionMatchesVolumeRatio) {
  // Hits are the points within radius r of the center: p = (r / R)^M exactly.
  const int m = 3;
  const double r = 0.8;
  const WeightMatrix w = WeightMatrix::Zero(1, m);
  const ErrorFn err = [r](const WeightMatrix& v) { return v.norm() <= r ? 0.0 : 1.0; };
  const std::vector<double> ds{0.5, 1.0, 2.0};
  const auto prof = local_entropy_mc(w, err, ds, 20000, 13);
  for (std::size_t j = 0; j < ds.size(); ++j) {
    const double big_r = std::sqrt(2 * ds[j]);
    const double expect = std::log(std::min(1.0, std::pow(r / big_r, m))) / m;
    EXPECT_NEAR(prof.points[j].mean, expect, 4 * prof.points[j].std_error + 1e-12) << ds[j];
  }
}

TEST(LocalEntropy, MatchesDirectEstimateOnPerceptron) {
  // Reference: a long independent run of the plain definition with its own sampler.
  Rng gen(14);
  const Dataset ds = synth_teacher_dataset(6, 1, 8, gen);
  const WeightMatrix w = init_weights(1, 6, gen);
  const double ref = train_error(w, ds.data);
  const double d = 2.0;
  Rng rng(99);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  long hits = 0;
  const long trials = 200000;
  for (long t = 0; t < trials; ++t) {
    WeightMatrix dir(1, 6);
    for (int i = 0; i < 6; ++i) dir(0, i) = normal(rng);
    const WeightMatrix s = w + dir / dir.norm() * std::sqrt(2 * d) * std::pow(unif(rng), 1.0 / 6);
    double errs = 0;
    for (Eigen::Index k = 0; k < ds.data.x.rows(); ++k) {
      const double pre = s.row(0).dot(ds.data.x.row(k));
      const double pred = pre >= 0 ? 1.0 : -1.0;
      errs += pred != ds.data.y(k);
    }
    hits += errs / static_cast<double>(ds.data.x.rows()) <= ref;
  }
  const double expect = std::log(static_cast<double>(hits) / trials) / 6.0;
  const auto prof = local_entropy_mc(w, ds.data, {d}, 20000, 15);
  EXPECT_NEAR(prof.points[0].mean, expect, 4 * prof.points[0].std_error + 0.002);
}

TEST(LocalEntropy, NonPositiveAndCensored) {
  Rng gen(16);
  const Dataset ds = synth_teacher_dataset(12, 1, 40, gen);
  const WeightMatrix w = init_weights(2, 12, gen);
  const auto prof = local_entropy_mc(w, ds.data, logspace(1e-3, 1e2, 6), 200, 17);
  for (const auto& p : prof.points) EXPECT_LE(p.mean, 0.0);

  const ErrorFn never = [](const WeightMatrix&) { return 1.0; };
  const ErrorFn at_center = [&](const WeightMatrix& v) { return v == w ? 0.0 : 1.0; };
  const auto c = local_entropy_mc(w, at_center, {1.0}, 99, 1);
  EXPECT_TRUE(c.points[0].censored);
  EXPECT_DOUBLE_EQ(c.points[0].mean, std::log(1.0 / 100.0) / 24.0);
  const auto all = local_entropy_mc(w, never, {1.0}, 10, 1);
  EXPECT_EQ(all.points[0].mean, 0.0);  // reference error 1: every sample ties
  EXPECT_THROW(local_entropy_mc(w, never, {0.0}, 10, 1), std::invalid_argument);
}

TEST(LocalEntropy, DeltaMethodStandardError) {
  const auto p = entropy_point(1.0, 25, 100, 10.0);
  EXPECT_DOUBLE_EQ(p.mean, std::log(0.25) / 10.0);
  EXPECT_DOUBLE_EQ(p.std_error, std::sqrt(0.25 * 0.75 / 100.0) / (10.0 * 0.25));
  const auto full = entropy_point(1.0, 100, 100, 10.0);
  EXPECT_EQ(full.mean, 0.0);
  EXPECT_EQ(full.std_error, 0.0);
  EXPECT_THROW(entropy_point(1.0, 0, 0, 1.0), std::invalid_argument);
}

TEST(Gibbs, OracleExamples) {
  WeightMatrix w(1, 2);
  w << 2.0, -4.0;
  const WeightMatrix m = gibbs_mean_oracle({1.0}, w, 3.0, 1.0);
  EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(m(0, 1), -2.0);
  EXPECT_EQ(gibbs_mean_oracle({0.0}, w, 1.0, 5.0), w);
  EXPECT_THROW(gibbs_mean_oracle({1.0}, w, 1.0, 0.0), std::invalid_argument);
}

TEST(Gibbs, MetropolisAgreesWithClosedForm) {
  WeightMatrix w(1, 3);
  w << 1.0, 2.0, -1.5;
  Rng rng(18);
  const QuadraticLoss loss{1.0};
  const WeightMatrix mc = gibbs_mean_metropolis(loss, w, 10.0, 3.0, 300000, rng);
  const WeightMatrix exact = gibbs_mean_oracle(loss, w, 10.0, 3.0);
  EXPECT_LT((mc - exact).norm() / exact.norm(), 0.02);
}

TEST(ReplicaEquivalence, SchurComplementMatchesReplicatedLoss) {
  for (int y : {1, 2, 3, 7}) {
    for (double gamma : {0.1, 1.0, 25.0}) {
      const Eigen::MatrixXd a = replica_precision_from_local_entropy({0.7}, 2.0, gamma, y);
      const Eigen::MatrixXd b = replicated_loss_precision({0.7}, 2.0, gamma, y);
      EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12 * b.cwiseAbs().maxCoeff()) << y << " " << gamma;
    }
  }
  EXPECT_THROW(replicated_loss_precision({1.0}, 1.0, 1.0, 0), std::invalid_argument);
}

namespace {

FlatnessProfile make_profile(std::vector<double> means, std::vector<double> ses) {
  FlatnessProfile p;
  for (std::size_t j = 0; j < means.size(); ++j) {
    ProfilePoint pt;
    pt.abscissa = static_cast<double>(j);
    pt.mean = means[j];
    pt.std_error = ses[j];
    pt.samples = 10;
    p.points.push_back(pt);
  }
  return p;
}

}  // namespace

TEST(AverageProfiles, Errors) {
  const auto a = make_profile({1.0, 3.0}, {0.2, 0.0});
  const auto b = make_profile({1.0, 1.0}, {0.2, 0.0});
  const auto avg = average_profiles({a, b});
  EXPECT_DOUBLE_EQ(avg.points[0].mean, 1.0);
  EXPECT_DOUBLE_EQ(avg.points[0].std_error, 0.2 / std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(avg.points[1].mean, 2.0);
  EXPECT_DOUBLE_EQ(avg.points[1].std_error, 1.0);
  EXPECT_EQ(avg.points[0].samples, 20u);
  EXPECT_THROW(average_profiles({a, make_profile({1.0}, {0.0})}), std::invalid_argument);
  EXPECT_THROW(average_profiles({}), std::invalid_argument);
}

TEST(ProfileCsv, RoundTripsExactly) {
  Rng gen(19);
  const Dataset ds = synth_teacher_dataset(10, 1, 40, gen);
  const WeightMatrix w = init_weights(2, 10, gen);
  const auto prof = local_entropy_mc(w, ds.data, logspace(1e-2, 10, 4), 50, 3);
  std::stringstream ss;
  write_profile_csv(prof, ss);
  const auto back = read_profile_csv(ss, AbscissaKind::SquaredDistance);
  ASSERT_EQ(back.points.size(), prof.points.size());
  for (std::size_t j = 0; j < back.points.size(); ++j) {
    EXPECT_EQ(back.points[j].abscissa, prof.points[j].abscissa);
    EXPECT_EQ(back.points[j].mean, prof.points[j].mean);
    EXPECT_EQ(back.points[j].std_error, prof.points[j].std_error);
    EXPECT_EQ(back.points[j].censored, prof.points[j].censored);
  }
  std::stringstream bad("abscissa,mean\n1,2\n");
  EXPECT_THROW(read_profile_csv(bad, AbscissaKind::Sigma), std::runtime_error);
}

TEST(Grids, Endpoints) {
  const auto l = logspace(1e-3, 1e2, 12);
  EXPECT_EQ(l.front(), 1e-3);
  EXPECT_EQ(l.back(), 1e2);
  for (std::size_t j = 1; j < l.size(); ++j) EXPECT_NEAR(l[j] / l[j - 1], std::pow(1e5, 1.0 / 11), 1e-12);
  const auto s = linspace(0.0, 1.0, 5);
  EXPECT_EQ(s, (std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0}));
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

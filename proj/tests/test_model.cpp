#include "flatmin/data.hpp"
#include "flatmin/model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace flatmin;

TEST(Margin, LargeBetaOnAlignedInputApproachesOne) {
  WeightMatrix w = WeightMatrix::Ones(1, 4);
  Eigen::VectorXd x = Eigen::VectorXd::Ones(4);
  EXPECT_NEAR(margin(w, x, 1e3), 1.0, 1e-12);
}

TEST(Margin, ZeroInputGivesZero) {
  Rng rng(1);
  WeightMatrix w = init_weights(3, 10, rng);
  EXPECT_EQ(margin(w, Eigen::VectorXd::Zero(10), 2.0), 0.0);
}

TEST(Margin, MatchesIndependentImplementation) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    WeightMatrix w = oracle::random_matrix(3, 10, rng);
    Eigen::VectorXd x = oracle::random_pm1(10, rng);
    EXPECT_NEAR(margin(w, x, 2.0), oracle::margin(w, x, 2.0), 1e-14);
  }
}

TEST(Margin, BoundedBySqrtH) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    WeightMatrix w = init_weights(5, 20, rng);
    Eigen::VectorXd x = oracle::random_pm1(20, rng);
    const double m = margin(w, x, 5.0);
    EXPECT_LT(std::abs(m), std::sqrt(5.0));
  }
}

TEST(Margin, DimensionMismatchThrows) {
  WeightMatrix w = WeightMatrix::Ones(2, 4);
  EXPECT_THROW(margin(w, Eigen::VectorXd::Ones(3), 1.0), std::invalid_argument);
  EXPECT_THROW(predict(w, Eigen::VectorXd::Ones(5)), std::invalid_argument);
}

TEST(Predict, SignOfSelfOverlap) {
  Rng rng(4);
  Eigen::VectorXd x = oracle::random_pm1(9, rng);
  WeightMatrix w = x.transpose();
  EXPECT_EQ(predict(w, x), 1);
  WeightMatrix neg = -w;
  EXPECT_EQ(predict(neg, x), -1);
}

TEST(Predict, TiesResolveToPlusOne) {
  // Two hidden units voting +1 and -1 give an exact zero output.
  WeightMatrix w(2, 2);
  w << 1, 0, -1, 0;
  Eigen::VectorXd x(2);
  x << 1, 1;
  EXPECT_EQ(predict(w, x), 1);
  // A zero preactivation counts as +1 for that unit.
  WeightMatrix z(1, 2);
  z << 1, -1;
  EXPECT_EQ(predict(z, x), 1);
}

TEST(Predict, InvariantUnderPositiveRowRescaling) {
  Rng rng(5);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 20; ++trial) {
    WeightMatrix w = oracle::random_matrix(5, 15, rng);
    WeightMatrix s = w;
    for (Eigen::Index h = 0; h < s.rows(); ++h) s.row(h) *= scale(rng);
    for (int k = 0; k < 20; ++k) {
      Eigen::VectorXd x = oracle::random_pm1(15, rng);
      EXPECT_EQ(predict(w, x), predict(s, x));
      EXPECT_EQ(predict(w, x), predict(normalize_rows(w), x));
    }
  }
}

TEST(Loss, ValueAtZero) {
  for (double omega : {0.5, 1.0, 5.0}) EXPECT_NEAR(f_loss(0.0, omega), std::log(2.0) / (2 * omega), 1e-15);
}

TEST(Loss, Asymptotes) {
  EXPECT_NEAR(f_loss(50.0, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(f_loss(-10.0, 5.0), 10.0, 1e-8);
}

TEST(Loss, NoOverflowAtExtremeArguments) {
  EXPECT_TRUE(std::isfinite(f_loss(1e6, 1e3)));
  EXPECT_NEAR(f_loss(-1e6, 1e3), 1e6, 1e-6);
  EXPECT_EQ(f_loss(1e6, 1e3), 0.0);
}

TEST(Loss, MatchesNaiveFormulaInSafeRange) {
  for (double x = -3.0; x <= 3.0; x += 0.25)
    for (double omega : {0.5, 2.0})
      EXPECT_NEAR(f_loss(x, omega), oracle::f_loss_naive(x, omega), 1e-13);
}

TEST(Loss, NonNegativeAndNonIncreasing) {
  for (double omega : {0.1, 1.0, 10.0}) {
    double prev = f_loss(-20.0, omega);
    for (double x = -20.0; x <= 20.0; x += 0.01) {
      const double v = f_loss(x, omega);
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, prev + 1e-15);
      prev = v;
    }
  }
}

TEST(Loss, DerivativeMatchesFiniteDifference) {
  for (double x = -2.0; x <= 2.0; x += 0.1) {
    const double h = 1e-6;
    const double fd = (f_loss(x + h, 1.5) - f_loss(x - h, 1.5)) / (2 * h);
    EXPECT_NEAR(f_loss_prime(x, 1.5), fd, 1e-8);
    EXPECT_NEAR(f_loss_prime(x, 1.5), -0.5 + std::tanh(1.5 * x) / 2, 1e-14);
  }
}

TEST(CeLoss, ZeroMarginGivesLogTwo) {
  LabeledSet batch;
  batch.x = PatternMatrix::Zero(4, 6);
  batch.y = Eigen::VectorXd::Ones(4);
  batch.y(1) = -1;
  WeightMatrix w = WeightMatrix::Ones(2, 6);
  EXPECT_NEAR(ce_loss(w, batch, 1.0, 3.0), std::log(2.0) / 6.0, 1e-15);
}

TEST(CeLoss, PerfectHugeMarginIsNearZero) {
  Rng rng(6);
  Eigen::VectorXd x = oracle::random_pm1(16, rng);
  LabeledSet batch;
  batch.x = x.transpose();
  batch.y = Eigen::VectorXd::Ones(1);
  WeightMatrix w = x.transpose();
  EXPECT_LT(ce_loss(w, batch, 100.0, 100.0), 1e-12);
}

TEST(CeLoss, MatchesPerPatternBruteForce) {
  Rng rng(7);
  const LabeledSet batch = oracle::random_set(12, 8, rng);
  WeightMatrix w = oracle::random_matrix(3, 8, rng);
  EXPECT_NEAR(ce_loss(w, batch, 1.3, 0.7), oracle::ce_loss(w, batch, 1.3, 0.7), 1e-14);
}

TEST(CeLoss, EmptyBatchThrows) {
  LabeledSet empty;
  empty.x = PatternMatrix(0, 4);
  WeightMatrix w = WeightMatrix::Ones(1, 4);
  EXPECT_THROW(ce_loss(w, empty, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(ce_grad(w, empty, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(train_error(w, empty), std::invalid_argument);
}

TEST(CeGrad, MatchesCentralDifferences) {
  Rng rng(8);
  const LabeledSet batch = oracle::random_set(5, 7, rng);
  WeightMatrix w = oracle::random_matrix(3, 7, rng);
  const WeightMatrix g = ce_grad(w, batch, 1.0, 2.0);
  const WeightMatrix fd = oracle::finite_difference_grad(w, batch, 1.0, 2.0, 1e-5);
  EXPECT_LT(oracle::max_relative_error(g, fd), 1e-5);
}

TEST(CeGrad, VanishesAtLargePositiveMargins) {
  Rng rng(9);
  Dataset ds = synth_teacher_dataset(30, 1, 10, rng);
  EXPECT_LT(ce_grad(*ds.teacher, ds.data, 50.0, 50.0).norm(), 1e-6);
}

TEST(CeGrad, FlippingLabelsNegatesGradientInLinearLossLimit) {
  // As omega -> 0, f'(x) -> -1/2, so the loss is linear in y and flipping every label negates
  // the gradient.
  Rng rng(10);
  LabeledSet half = oracle::random_set(4, 6, rng);
  LabeledSet flipped = half;
  flipped.y = -half.y;
  WeightMatrix w = oracle::random_matrix(2, 6, rng);
  const WeightMatrix g = ce_grad(w, half, 1.0, 1e-9);
  const WeightMatrix gf = ce_grad(w, flipped, 1.0, 1e-9);
  EXPECT_LT((g + gf).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + g.cwiseAbs().maxCoeff()));
}

TEST(CeGrad, DropoutMaskMatchesFiniteDifferences) {
  Rng rng(11);
  const LabeledSet batch = oracle::random_set(6, 5, rng);
  WeightMatrix w = oracle::random_matrix(4, 5, rng);
  const DropoutMask mask = draw_dropout_mask(6, 4, 0.3, rng);
  auto loss = [&](const WeightMatrix& v) { return ce_loss(v, batch, 1.5, 0.8, &mask); };
  const WeightMatrix g = ce_grad(w, batch, 1.5, 0.8, &mask);
  const WeightMatrix fd = oracle::finite_difference(w, loss, 1e-5);
  EXPECT_LT(oracle::max_relative_error(g, fd), 1e-5);
}

TEST(TrainError, TeacherAndFlippedTeacher) {
  Rng rng(12);
  Dataset ds = synth_teacher_dataset(50, 3, 200, rng);
  EXPECT_EQ(train_error(*ds.teacher, ds.data), 0.0);
  LabeledSet flipped = ds.data;
  flipped.y = -flipped.y;
  EXPECT_EQ(train_error(*ds.teacher, flipped), 1.0);
}

TEST(TrainError, RandomWeightsOnRandomLabelsNearHalf) {
  Rng rng(13);
  const LabeledSet data = oracle::random_set(4000, 200, rng);
  WeightMatrix w = init_weights(5, 200, rng);
  const double e = train_error(w, data);
  EXPECT_NEAR(e, 0.5, 3 * std::sqrt(0.25 / 4000));
}

TEST(NormalizeRows, TargetsSqrtN) {
  Rng rng(14);
  WeightMatrix w = oracle::random_matrix(4, 25, rng);
  const WeightMatrix n = normalize_rows(w);
  for (Eigen::Index h = 0; h < n.rows(); ++h) EXPECT_NEAR(n.row(h).norm(), 5.0, 5.0 * 1e-10);
  const WeightMatrix twice = normalize_rows(n);
  EXPECT_LT((twice - n).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NormalizeRows, ExamplesAndErrors) {
  WeightMatrix w = WeightMatrix::Constant(1, 4, 1.0);  // norm 2 = sqrt(4)
  EXPECT_LT((normalize_rows(w) - w).cwiseAbs().maxCoeff(), 1e-12);
  WeightMatrix big = 2.0 * w;
  EXPECT_LT((normalize_rows(big) - w).cwiseAbs().maxCoeff(), 1e-12);
  WeightMatrix zero = WeightMatrix::Zero(2, 3);
  zero(0, 0) = 1.0;
  EXPECT_THROW(normalize_rows(zero), std::domain_error);
  EXPECT_NEAR(normalize_rows(big, 1.0).row(0).norm(), 1.0, 1e-15);
}

TEST(Anneal, Examples) {
  EXPECT_EQ(anneal({2.0, 0.0}, 12345), 2.0);
  EXPECT_EQ(anneal({0.5, 1e-3}, 0), 0.5);
  EXPECT_NEAR(anneal({1.0, 1e-4}, 10000), std::exp(1.0), std::exp(1.0) * 1e-3);
}

TEST(Anneal, MultiplicativeAndNondecreasing) {
  const AnnealSchedule s{0.7, 3e-3};
  for (long t1 : {0L, 5L, 100L})
    for (long t2 : {1L, 17L, 400L})
      EXPECT_NEAR(anneal(s, t1 + t2), anneal(s, t1) * std::pow(1.003, t2), 1e-12 * anneal(s, t1 + t2));
  for (long t = 0; t < 1000; ++t) EXPECT_LE(anneal(s, t), anneal(s, t + 1));
}

TEST(Dropout, IdentityAtZeroAndZeroInput) {
  Rng rng(15);
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(9, -1, 1);
  EXPECT_EQ(apply_dropout(v, 0.0, rng), v);
  EXPECT_EQ(apply_dropout(Eigen::VectorXd::Zero(9), 0.7, rng), Eigen::VectorXd::Zero(9));
  EXPECT_THROW(apply_dropout(v, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(apply_dropout(v, -0.1, rng), std::invalid_argument);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  Rng rng(16);
  Eigen::VectorXd v(4);
  v << 0.3, -1.2, 2.0, 0.5;
  const int draws = 200000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
  for (int k = 0; k < draws; ++k) sum += apply_dropout(v, 0.5, rng);
  const Eigen::VectorXd mean = sum / draws;
  for (Eigen::Index i = 0; i < 4; ++i) {
    // Each draw is 0 or 2 v_i: standard deviation |v_i|.
    EXPECT_NEAR(mean(i), v(i), 4 * std::abs(v(i)) / std::sqrt(draws));
  }
}

TEST(Init, RowsHaveRequestedNorm) {
  Rng rng(17);
  const WeightMatrix w = init_weights(9, 784, rng);
  for (Eigen::Index h = 0; h < 9; ++h) EXPECT_NEAR(w.row(h).norm(), 28.0, 28.0 * 1e-10);
  const WeightMatrix u = init_weights(3, 10, rng, 1.0);
  for (Eigen::Index h = 0; h < 3; ++h) EXPECT_NEAR(u.row(h).norm(), 1.0, 1e-12);
}

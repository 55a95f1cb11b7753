#include <gtest/gtest.h>

#include <cmath>

#include "caat/montecarlo/montecarlo.hpp"
#include "caat/theory/theory.hpp"

using namespace caat;
using theory::GaussianTaskSpec;
using theory::LinearClassifier;
using theory::PerturbPolicy;

namespace {
GaussianTaskSpec fig1(double K = 2.0) { return {2, 2.0, 1.0, K, 1.0, std::nullopt}; }
}  // namespace

TEST(SampleDataset, BalancedProportions) {
  const auto ds = mc::sample_dataset({2, 1.0, 1.0, 1.0, 1.0, std::nullopt}, 10000, 7);
  const double sd = std::sqrt(10000 * 0.25);
  EXPECT_NEAR(static_cast<double>(ds.count(1)), 5000.0, 4 * sd);
  EXPECT_EQ(ds.count(1) + ds.count(-1), 10000u);
}

TEST(SampleDataset, ImbalancedPriors) {
  const auto ds = mc::sample_dataset({2, 1.0, 1.0, 1.0, 10.0, std::nullopt}, 11000, 3);
  const double sd = std::sqrt(11000 * (1.0 / 11) * (10.0 / 11));
  EXPECT_NEAR(static_cast<double>(ds.count(1)), 1000.0, 4 * sd);
}

TEST(SampleDataset, ExactFlipCountAndCleanLabels) {
  GaussianTaskSpec t{2, 1.0, 1.0, 1.0, 1.0, theory::LabelNoise{0.2, -1}};
  const auto ds = mc::sample_dataset(t, 5000, 11);
  std::size_t n_minus_clean = 0, flipped = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    n_minus_clean += ds.clean_labels[i] == -1;
    if (ds.is_flipped(i)) {
      ++flipped;
      EXPECT_EQ(ds.clean_labels[i], -1);
      EXPECT_EQ(ds.labels[i], 1);
    }
  }
  EXPECT_EQ(flipped, static_cast<std::size_t>(std::llround(0.2 * n_minus_clean)));
  EXPECT_EQ(ds.flipped_count(), flipped);
}

TEST(SampleDataset, DeterministicPerSeed) {
  const auto a = mc::sample_dataset(fig1(), 500, 42), b = mc::sample_dataset(fig1(), 500, 42);
  const auto c = mc::sample_dataset(fig1(), 500, 43);
  EXPECT_TRUE(a.features == b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(a.features == c.features);
}

TEST(SampleDataset, RejectsTinyOrDegenerate) {
  EXPECT_THROW(mc::sample_dataset(fig1(), 1, 1), std::invalid_argument);
  // p(+1) = 1/1001 makes an empty class overwhelmingly likely for n = 2.
  EXPECT_THROW(mc::sample_dataset({2, 1.0, 1.0, 1.0, 1000.0, std::nullopt}, 2, 1), std::runtime_error);
}

TEST(EstimateErrorsMc, SymmetricAnchor) {
  const GaussianTaskSpec t{2, 2.0, 1.0, 1.0, 1.0, std::nullopt};
  const auto e = mc::estimate_errors_mc(LinearClassifier::all_ones(2, 0.0), t, PerturbPolicy::natural(), 200000, 5);
  const double ref = normal_cdf(-2.0 * std::sqrt(2.0));
  for (int c : {-1, 1}) EXPECT_NEAR(e.of(c).natural.value, ref, 3 * binomial_std_error(ref, 200000));
}

TEST(EstimateErrorsMc, MatchesTheorem1) {
  const auto task = fig1();
  const PerturbPolicy pol{0.2, 1.0, 1.0, std::nullopt};
  const auto clf = theory::optimal_robust_bias(task, pol);
  const auto th = theory::theorem1_natural_errors(2.0, 2.0, 1.0, 2, 0.2, 1.0);
  const auto e = mc::estimate_errors_mc(clf, task, pol, 400000, 9);
  EXPECT_NEAR(e.minus.natural.value, th.minus, 3 * binomial_std_error(th.minus, 400000));
  EXPECT_NEAR(e.plus.natural.value, th.plus, 3 * binomial_std_error(th.plus, 400000));
  for (int c : {-1, 1}) {
    const auto exact = theory::class_errors_linear(task, clf, pol, c);
    EXPECT_NEAR(e.of(c).robust.value, exact.robust, 3 * binomial_std_error(exact.robust, 400000));
    EXPECT_GE(e.of(c).robust.value, e.of(c).natural.value);
  }
}

TEST(EstimateErrorsMc, StdErrorDefinition) {
  const auto e = mc::estimate_errors_mc(LinearClassifier::all_ones(2, 0.4), fig1(), PerturbPolicy::uniform(0.1), 10000, 1);
  const auto& n = e.minus.natural;
  EXPECT_DOUBLE_EQ(n.std_error, std::sqrt(n.value * (1 - n.value) / 10000));
  EXPECT_EQ(n.n_samples, 10000u);
}

// For a linear model the worst max-norm perturbation is the corner
// -y * r * sign(w); a brute-force grid over the ball must agree with the
// shift rule on every sample.
TEST(EstimateErrorsMc, ShiftRuleMatchesGridAttack) {
  const LinearClassifier clf{{0.6, 0.8}, 0.3};
  const auto ds = mc::sample_dataset(fig1(), 1000, 21);
  const double r = 0.4;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double* x = ds.features.row(i).data();
    const int y = ds.labels[i];
    const bool shift_err = y * clf.score(x) - r * clf.l1_norm() < 0.0;
    bool grid_err = false;
    for (int a = 0; a <= 20 && !grid_err; ++a)
      for (int b = 0; b <= 20 && !grid_err; ++b) {
        const double p[2] = {x[0] - r + 2 * r * a / 20.0, x[1] - r + 2 * r * b / 20.0};
        grid_err = y * clf.score(p) < 0.0;
      }
    agree += shift_err == grid_err;
  }
  EXPECT_EQ(agree, ds.size());
}

TEST(TrainLogisticRobust, NaturalSymmetricBoundary) {
  const GaussianTaskSpec t{2, 1.0, 1.0, 1.0, 1.0, std::nullopt};
  const auto data = mc::sample_dataset(t, 8000, 4);
  const auto clf = mc::train_logistic_robust(data, PerturbPolicy::natural(), {});
  clf.require_unit();
  EXPECT_NEAR(clf.bias, 0.0, 0.05);
  EXPECT_NEAR(clf.direction[0], std::sqrt(0.5), 0.05);
}

// Uniform adversarial training moves the boundary toward the harder class
// (bias decreases), as the closed-form bias search also predicts; raising the
// hard class's bound alone, or flipping the easy class to anti-adversarial,
// moves it toward the easy class, and the combined move is the larger one.
TEST(TrainLogisticRobust, BoundaryShiftDirections) {
  const auto data = mc::sample_dataset(fig1(), 6000, 2);
  mc::LogisticOptions o;
  const double nat = mc::train_logistic_robust(data, PerturbPolicy::natural(), o).bias;
  const double uni = mc::train_logistic_robust(data, PerturbPolicy::uniform(0.2), o).bias;
  const double hard = mc::train_logistic_robust(data, {0.2, 0.0, 1.0, std::nullopt}, o).bias;
  const double comb = mc::train_logistic_robust(data, {0.2, -1.0, 1.0, std::nullopt}, o).bias;
  EXPECT_LT(uni, nat);
  EXPECT_GT(hard, nat);
  EXPECT_GT(comb, hard);
  EXPECT_GT(std::abs(comb - nat), std::abs(uni - nat));

  const auto task = fig1();
  const double t_nat = theory::optimal_robust_bias(task, PerturbPolicy::natural()).bias;
  EXPECT_LT(theory::optimal_robust_bias(task, PerturbPolicy::uniform(0.2)).bias, t_nat);
  EXPECT_GT(theory::optimal_robust_bias(task, {0.2, 0.0, 1.0, std::nullopt}).bias, t_nat);
}

TEST(TrainLogisticRobust, DeterministicAndValidated) {
  const auto data = mc::sample_dataset(fig1(), 1000, 8);
  const auto a = mc::train_logistic_robust(data, PerturbPolicy::uniform(0.2), {});
  const auto b = mc::train_logistic_robust(data, PerturbPolicy::uniform(0.2), {});
  EXPECT_EQ(a.bias, b.bias);
  EXPECT_EQ(a.direction, b.direction);
  EXPECT_THROW(mc::train_logistic_robust(data, std::vector<double>(3, 0.0), {}), std::invalid_argument);
}

TEST(TrainLogisticRobust, NonFiniteLossIsReported) {
  auto data = mc::sample_dataset(fig1(), 200, 8);
  data.features(3, 1) = std::nan("");
  EXPECT_THROW(mc::train_logistic_robust(data, PerturbPolicy::natural(), {}), std::runtime_error);
}

TEST(Case3Experiment, MedianFlagsAndControl) {
  GaussianTaskSpec t{2, 2.0, 1.0, 1.0, 1.0, theory::LabelNoise{0.2, -1}};
  const auto rep = mc::case3_experiment(t, 0.2, {0.0, 1.0, 2.0, 4.0}, 4000, {1, 2, 3, 4, 5});
  EXPECT_TRUE(rep.minus_nonincreasing);
  EXPECT_TRUE(rep.plus_nondecreasing);
  EXPECT_TRUE(rep.control_worse());
  EXPECT_EQ(rep.sweep.rows.size(), 20u);
}

TEST(Case3Experiment, RequiresNoise) {
  EXPECT_THROW(mc::case3_experiment(fig1(1.0), 0.2, {0.0}, 1000, {1}), std::invalid_argument);
}

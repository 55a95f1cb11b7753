#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "caat/core/stats.hpp"
#include "caat/theory/theory.hpp"

using namespace caat;
using namespace caat::theory;

namespace {

GaussianTaskSpec fig1_task(double K = 2.0, double V = 1.0) { return {2, 2.0, 1.0, K, V, std::nullopt}; }

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(n == 1 ? a : a + (b - a) * i / (n - 1.0));
  return v;
}

}  // namespace

// Reference values from mpmath at 30 digits.
TEST(NormalCdf, MatchesHighPrecisionReference) {
  const std::pair<double, double> ref[] = {
      {-8.0, 6.2209605742717841e-16}, {-5.0, 2.8665157187919391e-7}, {-2.5, 0.0062096653257761352},
      {-1.0, 0.15865525393145705},    {0.3, 0.61791142218895263},    {3.0, 0.99865010196836991},
      {7.5, 0.99999999999996809}};
  for (auto [z, p] : ref) EXPECT_NEAR(normal_cdf(z) / p, 1.0, 1e-12) << "z = " << z;
  EXPECT_EQ(normal_cdf(0.0), 0.5);
}

TEST(ClassErrorsLinear, SymmetricTaskZeroBias) {
  const GaussianTaskSpec task{2, 2.0, 1.0, 1.0, 1.0, std::nullopt};
  const auto clf = LinearClassifier::all_ones(2, 0.0);
  for (int c : {-1, 1}) {
    const auto e = class_errors_linear(task, clf, PerturbPolicy::natural(), c);
    EXPECT_NEAR(e.natural, 0.0023388674905236288, 1e-15);
    EXPECT_EQ(e.natural, e.robust);
    const auto r = class_errors_linear(task, clf, PerturbPolicy::uniform(0.2), c);
    EXPECT_NEAR(r.robust, 0.005454749182134636, 1e-15);
  }
}

TEST(ClassErrorsLinear, RejectsNonUnitDirectionAndBadLabel) {
  const auto task = fig1_task();
  LinearClassifier bad{{1.0, 1.0}, 0.0};
  EXPECT_THROW(class_errors_linear(task, bad, PerturbPolicy::natural(), 1), std::invalid_argument);
  EXPECT_THROW(class_errors_linear(task, LinearClassifier::all_ones(2, 0), PerturbPolicy::natural(), 0),
               std::invalid_argument);
  GaussianTaskSpec zero_sigma = task;
  zero_sigma.sigma_minus = 0.0;
  EXPECT_THROW(class_errors_linear(zero_sigma, LinearClassifier::all_ones(2, 0), PerturbPolicy::natural(), 1),
               std::invalid_argument);
}

TEST(ClassErrorsLinear, AntiAdversarialShiftLowersRobustError) {
  const auto task = fig1_task();
  const auto clf = LinearClassifier::all_ones(2, 0.3);
  const auto adv = class_errors_linear(task, clf, {0.2, 1.0, 1.0, std::nullopt}, -1);
  const auto anti = class_errors_linear(task, clf, {0.2, -1.0, 1.0, std::nullopt}, -1);
  EXPECT_GT(adv.robust, adv.natural);
  EXPECT_LT(anti.robust, anti.natural);
}

TEST(Theorem1, FrozenExampleAndTerms) {
  const auto t = theorem1_terms(2.0, 2.0, 1.0, 2, 0.2, 1.0);
  EXPECT_NEAR(t.B, 2.0 / 3.0 * std::sqrt(2.0) * 1.8, 1e-15);
  EXPECT_NEAR(t.qK, 2.0 * std::log(2.0) / 3.0, 1e-15);
  const auto z = theorem1_natural_z(2.0, 2.0, 1.0, 2, 0.2, 1.0);
  // Phi^{-1} of the frozen oracle errors below; the oracle's bias search is
  // good to about 1e-10 in error, which is a few 1e-9 in z.
  EXPECT_NEAR(z.minus, -2.242067667411469, 5e-8);
  EXPECT_NEAR(z.plus, -1.7073932910405758, 5e-8);
  const auto e = theorem1_natural_errors(2.0, 2.0, 1.0, 2, 0.2, 1.0);
  // scipy bias-search oracle (tests/oracles/theory_oracle.py).
  EXPECT_NEAR(e.minus, 1.247849963927e-02, 1e-9);
  EXPECT_NEAR(e.plus, 4.387448825732e-02, 1e-9);
}

TEST(Theorem1, ZeroEpsMatchesNaturalOptimum) {
  const auto e = theorem1_natural_errors(2.0, 2.0, 1.0, 2, 0.0, 1.0);
  EXPECT_NEAR(e.minus, 1.686858814884e-02, 1e-9);
  EXPECT_NEAR(e.plus, 3.862855213140e-02, 1e-9);
  const auto task = fig1_task();
  const auto clf = optimal_robust_bias(task, PerturbPolicy::natural());
  EXPECT_NEAR(class_errors_linear(task, clf, PerturbPolicy::natural(), -1).natural, e.minus, 1e-9);
  EXPECT_NEAR(class_errors_linear(task, clf, PerturbPolicy::natural(), 1).natural, e.plus, 1e-9);
}

TEST(Theorem1, RejectsSingularAndOutOfRange) {
  EXPECT_THROW(theorem1_natural_errors(1.0, 2.0, 1.0, 2, 0.2, 1.0), std::invalid_argument);
  EXPECT_THROW(theorem1_natural_errors(2.0, 2.0, 1.0, 2, 0.2, 10.0), std::invalid_argument);
  EXPECT_THROW(theorem1_natural_errors(2.0, 2.0, 1.0, 2, -0.1, 1.0), std::invalid_argument);
}

TEST(Theorem1, MonotoneInRho) {
  double prev_m = -1, prev_p = 2;
  for (double rho : {0.0, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0}) {
    const auto e = theorem1_natural_errors(2.0, 2.0, 1.0, 2, 0.2, rho);
    EXPECT_GT(e.minus, prev_m);
    EXPECT_LT(e.plus, prev_p);
    prev_m = e.minus;
    prev_p = e.plus;
  }
}

TEST(Theorem2, FrozenExample) {
  const auto z = theorem2_natural_z(10.0, 2.0, 1.0, 2, 0.2, 1.0);
  EXPECT_NEAR(z.plus, -2.376156698223095, 1e-8);
  EXPECT_NEAR(z.minus, -3.280697551269274, 1e-8);
  const auto e = theorem2_natural_errors(10.0, 2.0, 1.0, 2, 0.2, 1.0);
  EXPECT_NEAR(e.minus, 5.177535969379e-04, 1e-10);
  EXPECT_NEAR(e.plus, 8.747015921035e-03, 1e-10);
}

TEST(Theorem2, BalancedLimitIsSymmetric) {
  const auto e = theorem2_natural_errors(1.0 + 1e-12, 2.0, 1.0, 2, 0.2, 1.0);
  EXPECT_NEAR(e.minus, e.plus, 1e-12);
  EXPECT_THROW(theorem2_natural_errors(1.0, 2.0, 1.0, 2, 0.2, 1.0), std::invalid_argument);
}

TEST(Theorem2, MonotoneInRho) {
  double prev_m = -1, prev_p = 2;
  for (double rho : {0.0, 0.5, 1.0, 2.0, 4.0}) {
    const auto e = theorem2_natural_errors(10.0, 2.0, 1.0, 2, 0.2, rho);
    EXPECT_GT(e.minus, prev_m);
    EXPECT_LT(e.plus, prev_p);
    prev_m = e.minus;
    prev_p = e.plus;
  }
}

TEST(OptimalRobustBias, SymmetricTaskHasZeroBias) {
  const GaussianTaskSpec task{3, 1.0, 0.7, 1.0, 1.0, std::nullopt};
  EXPECT_NEAR(optimal_robust_bias(task, PerturbPolicy::uniform(0.3)).bias, 0.0, 1e-9);
  EXPECT_NEAR(optimal_robust_bias(task, PerturbPolicy::natural()).bias, 0.0, 1e-9);
}

TEST(OptimalRobustBias, MatchesScipyOracle) {
  struct Row {
    GaussianTaskSpec task;
    PerturbPolicy pol;
    double bias;
  };
  const Row rows[] = {
      {fig1_task(), PerturbPolicy::uniform(0.2), 0.586359457335},
      {fig1_task(), PerturbPolicy::natural(), 0.705228083652},
      {fig1_task(1.0, 10.0), PerturbPolicy::uniform(0.2), -0.452270426523},
      {{3, 1.5, 0.8, 3.0, 1.0, std::nullopt}, {0.3, 1.0, 0.5, std::nullopt}, 0.550830103763},
      {fig1_task(), {0.2, -1.0, 1.0, std::nullopt}, 0.988070800323},
      {fig1_task(), {0.2, 0.0, 1.0, std::nullopt}, 0.787800319687},
  };
  for (const auto& r : rows) EXPECT_NEAR(optimal_robust_bias(r.task, r.pol).bias, r.bias, 1e-8);
}

TEST(OptimalRobustBias, ReproducesTheorem1) {
  const auto task = fig1_task();
  const PerturbPolicy pol{0.2, 1.0, 1.0, std::nullopt};
  const auto clf = optimal_robust_bias(task, pol);
  const auto th = theorem1_natural_errors(2.0, 2.0, 1.0, 2, 0.2, 1.0);
  EXPECT_NEAR(class_errors_linear(task, clf, pol, -1).natural, th.minus, 1e-9);
  EXPECT_NEAR(class_errors_linear(task, clf, pol, 1).natural, th.plus, 1e-9);
}

TEST(OptimalRobustBias, AntiAdversarialEasyClassShiftsBoundaryTowardIt) {
  // Class -1 sits at negative projections; a larger bias moves the boundary
  // toward it.
  const auto task = fig1_task();
  const double b0 = optimal_robust_bias(task, {0.2, 0.0, 1.0, std::nullopt}).bias;
  const double b_anti = optimal_robust_bias(task, {0.2, -1.0, 1.0, std::nullopt}).bias;
  EXPECT_GT(b_anti, b0);
}

TEST(OptimalRobustBias, RejectsInadmissiblePolicy) {
  EXPECT_THROW(optimal_robust_bias(fig1_task(), PerturbPolicy::uniform(2.5)), std::invalid_argument);
}

TEST(CorollaryCondition, ThresholdArithmetic) {
  EXPECT_TRUE(corollary_condition(2.0, 2, 2.0, 0.2, 1.0));
  EXPECT_TRUE(corollary_condition(10.0, 2, 2.0, 0.2, 1.0));
  EXPECT_TRUE(corollary_condition(25.5, 2, 2.0, 0.2, 1.0));
  EXPECT_FALSE(corollary_condition(25.6, 2, 2.0, 0.2, 1.0));
  EXPECT_FALSE(corollary_condition(std::exp(2 * 1.8 * 1.8 / 2.0), 2, 2.0, 0.2, 1.0));
  EXPECT_THROW(corollary_condition(2.0, 2, 2.0, 2.0, 1.0), std::invalid_argument);
}

TEST(MonotonicityReport, CaseIAdversarialAndCombined) {
  const auto grid = linspace(0.0, 0.95 * 2.0 / 0.2, 20);
  for (auto mode : {Mode::AdversarialOnly, Mode::Combined}) {
    const auto r = monotonicity_report(Case::I, fig1_task(), 0.2, mode, grid);
    EXPECT_EQ(r.curve.size(), 20u);
    EXPECT_TRUE(r.rejected_rho.empty());
    EXPECT_TRUE(r.all_monotone()) << (mode == Mode::Combined ? "combined" : "adversarial");
    EXPECT_EQ(r.closed_form, mode == Mode::AdversarialOnly);
  }
}

TEST(MonotonicityReport, ClosedFormAgreesWithBiasSearch) {
  const auto grid = linspace(0.0, 5.0, 11);
  const auto r = monotonicity_report(Case::I, fig1_task(), 0.2, Mode::AdversarialOnly, grid);
  for (const auto& p : r.curve) {
    const auto clf = optimal_robust_bias(fig1_task(), {0.2, 1.0, p.rho, std::nullopt});
    EXPECT_NEAR(class_errors_linear(fig1_task(), clf, PerturbPolicy::uniform(0.2), -1).natural, p.err_nat_minus, 1e-8);
    EXPECT_NEAR(class_errors_linear(fig1_task(), clf, PerturbPolicy::uniform(0.2), 1).robust, p.err_rob_plus, 1e-8);
  }
}

TEST(MonotonicityReport, CaseIIImbalance) {
  const auto r = monotonicity_report(Case::II, fig1_task(1.0, 10.0), 0.2, Mode::AdversarialOnly, linspace(0, 8, 12));
  EXPECT_TRUE(r.all_monotone());
}

TEST(MonotonicityReport, SinglePointAndRejectedPoints) {
  const auto one = monotonicity_report(Case::I, fig1_task(), 0.2, Mode::AdversarialOnly, {1.0});
  EXPECT_EQ(one.curve.size(), 1u);
  EXPECT_TRUE(one.all_strict());
  const auto rej = monotonicity_report(Case::I, fig1_task(), 0.2, Mode::AdversarialOnly, {1.0, 9.0, 10.0, 12.0});
  EXPECT_EQ(rej.curve.size(), 2u);
  ASSERT_EQ(rej.rejected_rho.size(), 2u);
  EXPECT_EQ(rej.rejected_rho[0], 10.0);
}

TEST(MonotonicityReport, RejectsBadGridAndFailedCondition) {
  EXPECT_THROW(monotonicity_report(Case::I, fig1_task(), 0.2, Mode::AdversarialOnly, {1.0, 0.5}),
               std::invalid_argument);
  EXPECT_THROW(monotonicity_report(Case::I, fig1_task(30.0), 0.2, Mode::AdversarialOnly, {1.0}),
               std::invalid_argument);
}

TEST(BoundaryScope, NaturalAnchorAndContainment) {
  const auto task = fig1_task();
  const auto anchor = boundary_scope_sweep(task, 0.2, {0.0}, {0.0}, Mode::AdversarialOnly);
  EXPECT_NEAR(anchor.bias[0][0], anchor.natural_bias, 1e-10);
  const auto adv = boundary_scope_sweep(task, 0.2, linspace(0, 5, 11), linspace(0, 5, 11), Mode::AdversarialOnly);
  const auto comb = boundary_scope_sweep(task, 0.2, linspace(-5, 5, 21), linspace(-5, 5, 21), Mode::Combined);
  EXPECT_TRUE(comb.strictly_contains(adv));
  EXPECT_THROW(boundary_scope_sweep(task, 0.2, {-1.0}, {0.0}, Mode::AdversarialOnly), std::invalid_argument);
  EXPECT_THROW(boundary_scope_sweep(task, 0.2, {10.0}, {0.0}, Mode::Combined), std::invalid_argument);
}

TEST(SweepPolicy, Conventions) {
  const auto a = sweep_policy(Case::I, Mode::Combined, 0.2, 1.5);
  EXPECT_EQ(a.rho_minus, -1.0);
  EXPECT_EQ(a.rho_plus, 1.5);
  const auto c = sweep_policy(Case::III, Mode::Combined, 0.2, 0.5);
  ASSERT_TRUE(c.rho_noisy.has_value());
  EXPECT_EQ(*c.rho_noisy, -0.5);
}

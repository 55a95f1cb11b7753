#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "caat/adversary/attack.hpp"
#include "caat/adversary/bounds.hpp"
#include "caat/nn/loss.hpp"

using namespace caat;
using adv::AttackConfig;
using nn::Tensor;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, scale);
  Tensor t = Tensor::matrix(r, c);
  for (double& v : t.values()) v = n01(rng);
  return t;
}

std::vector<int> labels_for(std::size_t n) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % 2);
  return y;
}

double max_abs_diff_row(const Tensor& a, const Tensor& b, std::size_t i) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - b(i, j)));
  return m;
}

std::vector<double> per_sample_ce(const nn::Network& net, const Tensor& x, const std::vector<int>& y) {
  nn::Tape t;
  return t.value(nn::cross_entropy(t, net.forward(t, t.constant(x), false).output, y)).buffer();
}

nn::Network small_net(std::uint64_t seed) {
  return nn::Network::init(nn::MlpSpec::make({2, 16, 2}, nn::Activation::Tanh), seed);
}

}  // namespace

TEST(ProjectBall, IdentityInsideAndClampOutside) {
  const std::vector<double> o{0.0, 1.0}, inside{0.05, 0.9};
  EXPECT_EQ(adv::project_ball(o, inside, 0.1), inside);
  const auto out = adv::project_ball(o, std::vector<double>{5.0, -5.0}, 0.1);
  EXPECT_DOUBLE_EQ(out[0], 0.1);
  EXPECT_DOUBLE_EQ(out[1], 0.9);
  EXPECT_EQ(adv::project_ball(o, out, 0.1), out);
}

TEST(ProjectBall, DomainClipAppliesAfterBall) {
  const std::vector<double> o{0.02, 0.99};
  const auto out = adv::project_ball(o, std::vector<double>{-1.0, 2.0}, 0.1, adv::DomainClip{0.0, 1.0});
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 1.0);
  EXPECT_THROW(adv::project_ball(o, std::vector<double>{0.0}, 0.1), std::invalid_argument);
  EXPECT_THROW(adv::project_ball(o, o, -0.1), std::invalid_argument);
}

TEST(Attack, ZeroRadiusReturnsInput) {
  const auto net = small_net(1);
  const Tensor x = random_matrix(6, 2, 2);
  const std::vector<double> eps(6, 0.0);
  adv::Rng rng(3);
  const AttackConfig cfg;
  EXPECT_TRUE(adv::gen_adversary(net, x, eps, cfg, rng).x == x);
  EXPECT_TRUE(adv::gen_anti_adversary(net, x, labels_for(6), eps, cfg, rng).x == x);
}

TEST(Attack, StaysInsideBall) {
  const auto net = small_net(4);
  const Tensor x = random_matrix(20, 2, 5);
  std::vector<double> eps(20);
  for (std::size_t i = 0; i < 20; ++i) eps[i] = 0.05 * static_cast<double>(i % 5);
  adv::Rng rng(6);
  const auto r = adv::gen_ce_adversary(net, x, labels_for(20), eps, AttackConfig{}, rng);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_LE(max_abs_diff_row(r.x, x, i), eps[i] + 1e-15);
}

TEST(Attack, KlAdversaryDoesNotDecreaseObjective) {
  const auto net = small_net(7);
  const Tensor x = random_matrix(30, 2, 8);
  const std::vector<double> eps(30, 0.3);
  adv::Rng rng(9);
  const auto r = adv::gen_adversary(net, x, eps, AttackConfig{}, rng);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_GE(r.final_objective[i], r.start_objective[i]);
  EXPECT_GT(*std::max_element(r.final_objective.begin(), r.final_objective.end()), 1e-4);
}

TEST(Attack, AntiAdversaryDoesNotIncreaseCrossEntropy) {
  const auto net = small_net(10);
  const Tensor x = random_matrix(30, 2, 11);
  const auto y = labels_for(30);
  const std::vector<double> eps(30, 0.3);
  adv::Rng rng(12);
  const auto at = adv::gen_anti_adversary(net, x, y, eps, AttackConfig{}, rng);
  const auto clean = per_sample_ce(net, x, y);
  const auto after = per_sample_ce(net, at.x, y);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_LE(at.final_objective[i], at.start_objective[i]);
    EXPECT_NEAR(after[i], at.final_objective[i], 1e-12);
  }
  adv::Rng rng2(12);
  const auto ad = adv::gen_ce_adversary(net, x, y, eps, AttackConfig{}, rng2);
  const auto worse = per_sample_ce(net, ad.x, y);
  for (std::size_t i = 0; i < 30; ++i) EXPECT_LE(after[i], worse[i]);
}

// A linear model's CE is monotone in the margin, so both attacks reach the
// ball's corner and move the margin by exactly eps * |w_1 - w_0|_1.
TEST(Attack, LinearModelSaturatesAtCorner) {
  auto net = nn::Network::init(nn::MlpSpec::make({2, 2}, nn::Activation::Tanh), 13);
  net.params.values[0] = Tensor::matrix(2, 2, {0.0, 1.0, 0.0, -2.0});
  const Tensor x = random_matrix(10, 2, 14, 0.3);
  const auto y = labels_for(10);
  const std::vector<double> eps(10, 0.1);
  AttackConfig cfg;
  cfg.steps = 20;
  auto margins = [&](const Tensor& xs) {
    const Tensor z = net.predict(xs);
    std::vector<double> m(xs.rows());
    for (std::size_t i = 0; i < xs.rows(); ++i) m[i] = (y[i] == 1 ? 1 : -1) * (z(i, 1) - z(i, 0));
    return m;
  };
  const auto m0 = margins(x);
  adv::Rng r1(15), r2(15);
  const auto ma = margins(adv::gen_ce_adversary(net, x, y, eps, cfg, r1).x);
  const auto mt = margins(adv::gen_anti_adversary(net, x, y, eps, cfg, r2).x);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NEAR(m0[i] - ma[i], 0.1 * 3.0, 1e-12);
    EXPECT_NEAR(mt[i] - m0[i], 0.1 * 3.0, 1e-12);
  }
}

TEST(Attack, DomainClipRespected) {
  const auto net = small_net(16);
  Tensor x = random_matrix(10, 2, 17);
  for (double& v : x.values()) v = std::clamp(0.5 + 0.5 * v, 0.0, 1.0);
  AttackConfig cfg;
  cfg.domain_clip = adv::DomainClip{0.0, 1.0};
  adv::Rng rng(18);
  const auto r = adv::gen_adversary(net, x, std::vector<double>(10, 0.4), cfg, rng);
  for (double v : r.x.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Attack, ConfigValidation) {
  AttackConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.step_for(0.2), 0.05);
  cfg.steps = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  const auto net = small_net(19);
  adv::Rng rng(1);
  EXPECT_THROW(adv::gen_adversary(net, random_matrix(3, 2, 1), std::vector<double>(2, 0.1), AttackConfig{}, rng),
               std::invalid_argument);
}

TEST(InputGradNorms, PositiveAwayFromOptimum) {
  const auto net = small_net(20);
  const Tensor x = random_matrix(8, 2, 21);
  const auto y = labels_for(8);
  adv::Rng rng(22);
  const auto xa = adv::gen_adversary(net, x, std::vector<double>(8, 0.2), AttackConfig{}, rng);
  const auto g = adv::input_grad_norms(net, x, xa.x, x, y);
  ASSERT_EQ(g.adv.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_GT(g.anti[i], 0.0);
}

TEST(GradBasedBound, ExtremesAndReferenceValue) {
  const double eps = 8.0 / 255.0;
  const std::vector<double> alpha{1.0, 0.0, 0.5}, beta{0.0, 1.0, 0.5};
  const std::vector<double> ga{0.0, 2.0, 1.0}, gt{4.0, 0.0, 2.0};
  const auto b = adv::grad_based_bound(alpha, beta, ga, gt, eps);
  // Normalized: ga -> {0, 1, 0.5}, gt -> {1, 0, 0.5}.
  EXPECT_DOUBLE_EQ(b.eps[0], 0.9 * eps);
  EXPECT_DOUBLE_EQ(b.eps[1], 0.9 * eps);
  EXPECT_DOUBLE_EQ(b.eps[2], 1.4 * eps);
  const auto top = adv::grad_based_bound(std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 0.0},
                                         std::vector<double>{0.0, 1.0}, std::vector<double>{1.0, 0.0}, eps);
  EXPECT_DOUBLE_EQ(top.eps[1], 1.9 * eps);
  for (double e : top.eps) {
    EXPECT_GE(e, 0.9 * eps);
    EXPECT_LE(e, 1.9 * eps);
  }
}

TEST(GradBasedBound, ConstantBatchAndValidation) {
  const std::vector<double> a{0.3, 0.7}, bt{0.7, 0.3}, g{1.0, 1.0};
  for (double e : adv::grad_based_bound(a, bt, g, g, 0.1).eps) EXPECT_DOUBLE_EQ(e, 0.09);
  EXPECT_THROW(adv::grad_based_bound(a, a, g, g, 0.1), std::invalid_argument);
  EXPECT_THROW(adv::grad_based_bound(a, bt, g, std::vector<double>{1.0}, 0.1), std::invalid_argument);
  EXPECT_THROW(adv::minmax_normalize(std::vector<double>{}), std::invalid_argument);
}

TEST(Remargin, RaisesHardClassAndClamps) {
  const std::vector<double> bdy{0.4, 0.1}, cur{0.1, 0.1};
  const auto out = adv::remargin_bounds(bdy, 0.25, 0.0, 0.5, cur, 0.3);
  EXPECT_DOUBLE_EQ(out[0], 0.1 + 0.5 * 0.15);
  EXPECT_DOUBLE_EQ(out[1], 0.1 - 0.5 * 0.15);
  const auto capped = adv::remargin_bounds(std::vector<double>{1.0, 0.0}, 0.5, 0.0, 1.0, cur, 0.3);
  EXPECT_EQ(capped[0], 0.3);
  EXPECT_EQ(capped[1], 0.0);
  EXPECT_THROW(adv::remargin_bounds(std::vector<double>{1.5, 0.0}, 0.5, 0.0, 1.0, cur, 0.3),
               std::invalid_argument);
  EXPECT_THROW(adv::remargin_bounds(bdy, 0.25, 0.0, 0.0, cur, 0.3), std::invalid_argument);
}

TEST(BoundMethod, StringRoundTrip) {
  for (auto m : {adv::BoundMethod::Fixed, adv::BoundMethod::GradBased, adv::BoundMethod::ReMargin})
    EXPECT_EQ(adv::bound_method_from_string(adv::to_string(m)), m);
  EXPECT_THROW(adv::bound_method_from_string("nope"), std::invalid_argument);
}

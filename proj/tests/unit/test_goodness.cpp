#include "ff/errors.hpp"
#include "ff/goodness.hpp"
#include "support/properties.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ff;
using ff::testing::random_tensor;

namespace {

GoodnessBatch<double> batch(std::initializer_list<double> pos, std::initializer_list<double> neg) {
  return {Tensor<double>::from({static_cast<Index>(pos.size())}, pos),
          Tensor<double>::from({static_cast<Index>(neg.size())}, neg)};
}

}  // namespace

TEST(Goodness, MeanOfSquares) {
  Tape<double> t;
  auto g = goodness(t.constant(Tensor<double>::from({2, 4}, {2, 2, 2, 2, 0, 0, 0, 0}))).value();
  EXPECT_EQ(g[0], 4.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(Goodness, MatchesFlatLoopAndIsHomogeneous) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({5, 3, 2, 2}, rng, -2, 2);
  Tape<double> t;
  const auto g = goodness(t.constant(x)).value();
  const auto gs = goodness(t.constant(x), GoodnessReduction::Sum).value();
  for (Index s = 0; s < 5; ++s) {
    double acc = 0;
    for (Index i = 0; i < 12; ++i) acc += x[s * 12 + i] * x[s * 12 + i];
    EXPECT_NEAR(g[s], acc / 12, 1e-10);
    EXPECT_NEAR(gs[s], acc, 1e-10);
    EXPECT_GE(g[s], 0);
  }
  const auto g3 = goodness(scale(t.constant(x), 3.0)).value();
  for (Index s = 0; s < 5; ++s) EXPECT_NEAR(g3[s], 9 * g[s], 1e-6);
}

TEST(Ftl, DegenerateValue) {
  EXPECT_NEAR(ftl_loss(batch({2.0}, {2.0}), 2.0), 2 * std::log(2.0), 1e-15);
}

TEST(Ftl, MatchesClosedForm) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 12);
  for (int i = 0; i < 50; ++i) {
    const double gp = u(rng), gn = u(rng), tau = 0.5 + u(rng);
    EXPECT_NEAR(ff::testing::ftl_library(gp, gn, tau), ff::testing::ftl_oracle(gp, gn, tau), 1e-12);
  }
}

TEST(Ftl, AsymmetryBetweenMirroredCases) {
  const double tau = 2.0;
  EXPECT_GT(std::abs(ftl_loss(batch({tau + 3}, {tau - 1}), tau) - ftl_loss(batch({tau - 3}, {tau + 1}), tau)), 1e-3);
}

TEST(Ftl, SymmetryHoldsIffSeparationsMatch) {
  const auto r = ff::testing::ftl_symmetry();
  EXPECT_TRUE(r.pass) << r.detail;
  EXPECT_LE(r.worst_equal, 1e-12);
  EXPECT_GT(r.smallest_unequal, 1e-6);
}

TEST(Ftl, GradientBalance) {
  const auto zero = ftl_gradient_balance(0.0, 3.0, 2.0);
  EXPECT_NEAR(zero.d_pos, 0.5, 1e-15);
  const auto dom = ftl_gradient_balance(0.1, 5.0, 2.0);
  EXPECT_NEAR(dom.d_neg / dom.d_pos, (1.0 + std::exp(-0.1)) / (1.0 + std::exp(-5.0)), 1e-12);
  const auto eq = ftl_gradient_balance(1.3, 1.3, 2.0);
  EXPECT_EQ(eq.d_neg, eq.d_pos);
}

TEST(Symba, DegenerateValueIsLog2) {
  EXPECT_NEAR(symba_loss(batch({3.0, 0.0}, {3.0, 0.0}), 4.0), std::log(2.0), 1e-15);
}

TEST(Symba, WellSeparatedTail) {
  EXPECT_NEAR(symba_loss(batch({10.0}, {0.0}), 4.0), 4.248354255291589e-18, 1e-30);
}

TEST(Symba, TranslationInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 5), c(-3, 30);
  for (int i = 0; i < 50; ++i) {
    const double gp = u(rng), gn = u(rng), shift = c(rng);
    EXPECT_NEAR(symba_loss(batch({gp}, {gn}), 4.0), symba_loss(batch({gp + shift}, {gn + shift}), 4.0), 1e-9);
  }
}

TEST(Symba, StrictlyDecreasingInSeparation) {
  for (double alpha : {0.1, 1.0, 4.0, 10.0}) {
    double prev = INFINITY;
    for (double d = -4; d <= 4; d += 0.25) {
      const double l = symba_loss(batch({1.0 + d}, {1.0}), alpha);
      EXPECT_LT(l, prev) << "alpha " << alpha << " delta " << d;
      prev = l;
    }
  }
}

TEST(Symba, TapeAndValueAgree) {
  std::mt19937_64 rng(4);
  const auto gp = random_tensor({8}, rng, 0, 3), gn = random_tensor({8}, rng, 0, 3);
  Tape<double> t;
  LossConfig cfg;
  EXPECT_NEAR(local_loss(t.constant(gp), t.constant(gn), cfg).value().item(), symba_loss(GoodnessBatch<double>{gp, gn}, 4.0),
              1e-14);
  cfg.kind = LossKind::Ftl;
  EXPECT_NEAR(local_loss(t.constant(gp), t.constant(gn), cfg).value().item(), ftl_loss(GoodnessBatch<double>{gp, gn}, 2.0),
              1e-14);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.alpha = 0;
  EXPECT_THROW(c.validate(), UsageError);
  c = {};
  c.kind = LossKind::Ftl;
  c.tau = -1;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_EQ(loss_kind_from_string(to_string(LossKind::Ftl)), LossKind::Ftl);
  EXPECT_THROW(loss_kind_from_string("hinge"), UsageError);
}

TEST(CrossEntropy, SaturatedAndOracle) {
  Tape<double> t;
  const std::vector<int> one{2};
  auto logits = Tensor<double>::from({1, 3}, {0, 0, 50});
  EXPECT_LT(cross_entropy(t.constant(logits), one).value().item(), 1e-20);
  std::mt19937_64 rng(5);
  const auto l = random_tensor({4, 3}, rng, -2, 2);
  const std::vector<int> labels{0, 2, 1, 1};
  double ref = 0;
  for (Index i = 0; i < 4; ++i) {
    double z = 0;
    for (Index k = 0; k < 3; ++k) z += std::exp(l.at({i, k}));
    ref -= std::log(std::exp(l.at({i, static_cast<Index>(labels[static_cast<std::size_t>(i)])})) / z);
  }
  EXPECT_NEAR(cross_entropy(t.constant(l), labels).value().item(), ref / 4, 1e-10);
  const std::vector<int> bad{0, 3, 1, 1};
  EXPECT_THROW(cross_entropy(t.constant(l), bad), UsageError);
}

TEST(Scaling, IdentityReport) {
  const auto r = ff::testing::scaling_identity();
  EXPECT_TRUE(r.pass) << r.detail;
}

#include <gtest/gtest.h>

#include <cmath>

#include "motarfuse/error.hpp"
#include "motarfuse/gradcheck.hpp"
#include "motarfuse/motion.hpp"
#include "motarfuse/objectives.hpp"
#include "motarfuse/ops.hpp"
#include "motarfuse/trainer.hpp"
#include "support.hpp"
#include "triplet_oracle.hpp"

namespace motarfuse {
namespace {

using testing::random_tensor;
using testing::triplet_oracle;

Var points(Tape& tape, const std::vector<std::vector<double>>& rows) {
  Tensor t(Shape{rows.size(), rows[0].size()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) t.at(r, c) = rows[r][c];
  return tape.constant(t);
}

TEST(Classify, ZeroHeadGivesZeroLogits) {
  Rng rng(1);
  ParameterSet ps;
  const ClassifierParams p = make_classifier(ps, 4, 3, 0.0, rng);
  Tape tape;
  Binder b(tape, ps);
  Var logits = classify(b, p, tape.constant(random_tensor({2, 4}, rng)));
  EXPECT_EQ(logits.shape(), (Shape{2, 3}));
  for (double v : logits.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Classify, SingleClassGivesOneLogit) {
  Rng rng(2);
  ParameterSet ps;
  const ClassifierParams p = make_classifier(ps, 4, 1, 0.1, rng);
  Tape tape;
  Binder b(tape, ps);
  EXPECT_EQ(classify(b, p, tape.constant(random_tensor({1, 4}, rng))).value().numel(), 1u);
  EXPECT_THROW(make_classifier(ps, 4, 0, 0.1, rng), ConfigError);
}

TEST(Classify, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  ParameterSet ps;
  const ClassifierParams p = make_classifier(ps, 5, 4, 0.5, rng);
  ps.value(p.b) = random_tensor({4}, rng);
  const auto rep = check_gradients(ps, {random_tensor({3, 5}, rng)},
                                   [&](Binder& b, const std::vector<Var>& in) {
                                     static const std::vector<int> labels{0, 3, 1};
                                     return ops::cross_entropy_logits(classify(b, p, in[0]), labels);
                                   },
                                   GradCheckOptions{});
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(Triplet, EasyTripletContributesZero) {
  // anchor at 0, positive at 0.2, negative at 0.9
  Tape tape;
  Var f = points(tape, {{0.0}, {0.2}, {0.9}, {1.1}});
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_EQ(triplet_loss(f, labels, 0.3).value().item(), 0.0);
}

TEST(Triplet, HardTripletContributesHinge) {
  // anchor 0: d_ap = 0.5, d_an = 0.4 -> 0.4; the others are checked by the oracle
  Tape tape;
  const std::vector<std::vector<double>> rows{{0.0, 0.0}, {0.5, 0.0}, {0.0, 0.4}, {0.0, 0.9}};
  Var f = points(tape, rows);
  const std::vector<int> labels{0, 0, 1, 1};
  const double got = triplet_loss(f, labels, 0.3).value().item();
  EXPECT_NEAR(got, triplet_oracle(f.value(), labels, 0.3), 1e-15);
  const double d_other = std::sqrt(0.5 * 0.5 + 0.4 * 0.4);
  const double expect = (0.4 + std::max(0.0, 0.5 - d_other + 0.3) + std::max(0.0, 0.5 - 0.4 + 0.3) +
                         std::max(0.0, 0.5 - 0.9 + 0.3)) /
                        4.0;
  EXPECT_NEAR(got, expect, 1e-15);
}

TEST(Triplet, MatchesExhaustiveEnumeration) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t classes = static_cast<std::size_t>(rng.uniform_int(2, 4));
    const std::size_t per = static_cast<std::size_t>(rng.uniform_int(2, 4));
    std::vector<int> labels;
    for (std::size_t c = 0; c < classes; ++c)
      for (std::size_t k = 0; k < per; ++k) labels.push_back(static_cast<int>(c));
    rng.shuffle(labels.begin(), labels.end());
    Tape tape;
    Var f = tape.constant(random_tensor({labels.size(), 3}, rng, 0.4));
    const double margin = rng.uniform(0.1, 1.0);
    EXPECT_NEAR(triplet_loss(f, labels, margin).value().item(), triplet_oracle(f.value(), labels, margin), 1e-12);
  }
}

TEST(Triplet, ZeroWhenClassesAreFarApart) {
  Rng rng(5);
  Tensor t(Shape{6, 2});
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  for (std::size_t i = 0; i < 6; ++i) {
    t.at(i, 0) = 10.0 * labels[i] + 0.01 * rng.normal();
    t.at(i, 1) = 0.01 * rng.normal();
  }
  Tape tape;
  EXPECT_EQ(triplet_loss(tape.constant(t), labels, 0.3).value().item(), 0.0);
}

TEST(Triplet, MissingPositiveOrNegativeIsContractError) {
  Tape tape;
  Var f = points(tape, {{0.0}, {1.0}, {2.0}});
  try {
    triplet_loss(f, std::vector<int>{4, 4, 9}, 0.3);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("label 9"), std::string::npos) << e.what();
  }
  EXPECT_THROW(triplet_loss(f, std::vector<int>{4, 4, 4}, 0.3), ContractError);
}

TEST(Triplet, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const std::vector<int> labels{0, 0, 1, 1, 2, 2};
  ParameterSet none;
  const auto rep = check_gradients(none, {random_tensor({6, 4}, rng, 0.3)},
                                   [&](Binder&, const std::vector<Var>& in) { return triplet_loss(in[0], labels, 1.0); },
                                   GradCheckOptions{});
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst;
}

TEST(TotalLoss, LinearCombination) {
  const LossBreakdown l = total_loss(1.5, 0.5, 0.5, 1.0, 1.0);
  EXPECT_EQ(l.l_g, 2.0);
  EXPECT_EQ(l.total, 2.5);
}

TEST(TotalLoss, ZeroMotionWeightLeavesIdentityLoss) {
  const LossBreakdown l = total_loss(1.25, 0.75, 3.0, 1.0, 0.0);
  EXPECT_EQ(l.total, l.l_g);
}

TEST(TotalLoss, InvariantsOnRandomInputs) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double ce = rng.uniform(0, 5), tri = rng.uniform(0, 2), mc = rng.uniform(0, 2);
    const double lg = rng.uniform(0, 3), lm = rng.uniform(0, 3);
    const LossBreakdown l = total_loss(ce, tri, mc, lg, lm);
    EXPECT_LE(std::abs(l.l_g - (l.l_ce + l.l_triplet)), 1e-12);
    EXPECT_LE(std::abs(l.total - (l.lambda_g * l.l_g + l.lambda_mc * l.l_mc)), 1e-12);
  }
}

TEST(TotalLoss, NegativeWeightIsConfigError) {
  EXPECT_THROW(total_loss(1.0, 1.0, 1.0, -1.0, 1.0), ConfigError);
  EXPECT_THROW(total_loss(1.0, 1.0, 1.0, 1.0, -0.5), ConfigError);
  Tape tape;
  Var one = tape.constant(Tensor::scalar(1.0));
  EXPECT_THROW(total_loss(one, one, one, 1.0, -1.0), ConfigError);
}

TEST(TotalLoss, MotionWeightScalesMotionGradientExactly) {
  Rng rng(8);
  const Tensor x0 = random_tensor({3, 4}, rng), target = random_tensor({3, 4}, rng);
  auto grad_at = [&](double lambda_mc) {
    Tape tape;
    Var x = tape.variable(x0);
    Var zero = tape.constant(Tensor::scalar(0.0));
    Var l = total_loss(zero, zero, motion_consistency_loss(x, tape.constant(target)), 1.0, lambda_mc);
    tape.backward(l);
    return x.grad();
  };
  const std::vector<double> g1 = grad_at(1.0), g4 = grad_at(4.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_EQ(g4[i], 4.0 * g1[i]);
}

TEST(TotalLoss, GradientSplitsAcrossComponents) {
  ParameterSet none;
  Rng rng(9);
  const auto rep = check_gradients(none, {random_tensor({1}, rng), random_tensor({1}, rng), random_tensor({1}, rng)},
                                   [](Binder&, const std::vector<Var>& in) {
                                     auto sq = [](Var v) { return ops::sum(ops::mul(v, v)); };
                                     return total_loss(sq(in[0]), sq(in[1]), sq(in[2]), 0.7, 2.5);
                                   },
                                   GradCheckOptions{});
  EXPECT_LT(rep.max_rel_error, 1e-8) << rep.worst;
}

TEST(CrossEntropy, DescendsOnSeparableProblem) {
  Rng rng(10);
  ParameterSet ps;
  const ClassifierParams p = make_classifier(ps, 2, 2, 0.1, rng);
  Tensor x(Shape{8, 2});
  std::vector<int> labels;
  for (std::size_t i = 0; i < 8; ++i) {
    const int y = static_cast<int>(i % 2);
    x.at(i, 0) = (y ? 1.0 : -1.0) + 0.1 * rng.normal();
    x.at(i, 1) = 0.1 * rng.normal();
    labels.push_back(y);
  }
  AdamState state;
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 20; ++step) {
    Tape tape;
    Binder b(tape, ps);
    Var l = ops::cross_entropy_logits(classify(b, p, tape.constant(x)), labels);
    EXPECT_LT(l.value().item(), prev);
    prev = l.value().item();
    tape.backward(l);
    ps.zero_grad();
    b.accumulate_grads(ps);
    adam_step(ps, state, AdamHyper{0.05, 0.9, 0.999, 1e-8});
  }
}

}  // namespace
}  // namespace motarfuse

#include <gtest/gtest.h>

#include <cmath>

#include "motarfuse/backbone.hpp"
#include "motarfuse/error.hpp"
#include "motarfuse/gradcheck.hpp"
#include "motarfuse/motion.hpp"
#include "motarfuse/ops.hpp"
#include "motarfuse/viz.hpp"
#include "support.hpp"

namespace motarfuse {
namespace {

using testing::random_tensor;
using testing::tiny_model;

TokenSequence visual_from(Var tokens) {
  const std::size_t n = tokens.rows();
  return TokenSequence{tokens, std::vector<TokenRole>(n, TokenRole::visual), std::vector<int>(n, -1)};
}

struct MotionFixture : ::testing::Test {
  ModelConfig cfg = tiny_model();
  ParameterSet ps;
  Rng rng{31};
  MotionParams p;
  void SetUp() override { p = make_motion(ps, cfg, rng); }
};

TEST_F(MotionFixture, TenQueriesOver32VisualTokens) {
  cfg.query_count = 10;
  ParameterSet ps10;
  const MotionParams p10 = make_motion(ps10, cfg, rng);
  Tape tape;
  Binder b(tape, ps10);
  MotionTokens m = motion_tokens(b, p10, visual_from(tape.constant(random_tensor({32, cfg.d_model}, rng))));
  EXPECT_EQ(m.tokens.shape(), (Shape{10, cfg.d_model}));
}

TEST_F(MotionFixture, TwoQueriesMinimal) {
  cfg.query_count = 2;
  ParameterSet ps2;
  const MotionParams p2 = make_motion(ps2, cfg, rng);
  Tape tape;
  Binder b(tape, ps2);
  MotionTokens m = motion_tokens(b, p2, visual_from(tape.constant(random_tensor({5, cfg.d_model}, rng))));
  EXPECT_EQ(m.tokens.shape(), (Shape{2, cfg.d_model}));
}

TEST_F(MotionFixture, ShapeIndependentOfVisualCount) {
  Tape tape;
  Binder b(tape, ps);
  for (std::size_t n : {1u, 4u, 32u}) {
    MotionTokens m = motion_tokens(b, p, visual_from(tape.constant(random_tensor({n, cfg.d_model}, rng))));
    EXPECT_EQ(m.tokens.shape(), (Shape{cfg.query_count, cfg.d_model}));
  }
}

TEST_F(MotionFixture, WidthMismatchIsShapeError) {
  Tape tape;
  Binder b(tape, ps);
  EXPECT_THROW(motion_tokens(b, p, visual_from(tape.constant(Tensor(Shape{4, cfg.d_model + 1})))), ShapeError);
}

TEST_F(MotionFixture, GradientMatchesFiniteDifferences) {
  Rng in_rng(5);
  const auto rep = check_gradients(ps, {random_tensor({4, cfg.d_model}, in_rng)},
                                   [&](Binder& b, const std::vector<Var>& in) {
                                     Var m = motion_tokens(b, p, visual_from(in[0])).tokens;
                                     return ops::sum(ops::mul(m, ops::gelu(m)));
                                   },
                                   GradCheckOptions{});
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;
}

TEST_F(MotionFixture, UniformVisualTokensGiveUniformMap) {
  Tensor same(Shape{6, cfg.d_model});
  Tensor row = random_tensor({cfg.d_model}, rng);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < cfg.d_model; ++c) same.at(r, c) = row[c];
  Tape tape;
  Binder b(tape, ps);
  const Tensor map = attention_map(b, p, visual_from(tape.constant(same)));
  ASSERT_EQ(map.shape(), (Shape{cfg.query_count, 6}));
  for (double v : map.data()) EXPECT_NEAR(v, 1.0 / 6.0, 1e-15);
}

TEST_F(MotionFixture, MapRowsAreDistributions) {
  Tape tape;
  Binder b(tape, ps);
  const Tensor map = attention_map(b, p, visual_from(tape.constant(random_tensor({9, cfg.d_model}, rng, 3.0))));
  for (std::size_t q = 0; q < map.dim(0); ++q) {
    double acc = 0.0;
    for (std::size_t k = 0; k < map.dim(1); ++k) {
      EXPECT_GE(map.at(q, k), 0.0);
      acc += map.at(q, k);
    }
    EXPECT_NEAR(acc, 1.0, 1e-9);
  }
}

TEST(PatchAttentionMap, FollowsPatchifyRasterOrder) {
  // Adapter token k attends only to patch `hot`; every motion query then maps
  // onto that patch, and the upsampled image must light exactly its pixels.
  const std::size_t h = 16, w = 8, ps = 4, gh = h / ps, gw = w / ps, n = gh * gw;
  const std::size_t hot = 1 * gw + 1;
  Tensor adapter(Shape{1, 2, n}, 0.0);
  for (std::size_t k = 0; k < 2; ++k) adapter[k * n + hot] = 1.0;
  const Tensor motion = Tensor::matrix({{0.25, 0.75}, {1.0, 0.0}});
  const Tensor per_patch = patch_attention_map(motion, AdapterTrace{{adapter}});
  ASSERT_EQ(per_patch.shape(), (Shape{2, n}));

  ImageFrame frame(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) frame.at(0, y, x) = static_cast<double>(y * w + x);
  const Tensor patches = patchify(frame, ps);

  std::vector<double> map(per_patch.data().begin(), per_patch.data().begin() + static_cast<std::ptrdiff_t>(n));
  const std::vector<double> img = upsample_map(map, gh, gw, h, w);
  std::vector<double> lit;
  for (std::size_t i = 0; i < img.size(); ++i)
    if (img[i] > 0.5) lit.push_back(static_cast<double>(i));
  std::vector<double> expected(patches.data().begin() + static_cast<std::ptrdiff_t>(hot * 3 * ps * ps),
                               patches.data().begin() + static_cast<std::ptrdiff_t>(hot * 3 * ps * ps + ps * ps));
  EXPECT_EQ(lit, expected);
}

TEST(MotionConsistency, IdenticalTokensGiveZero) {
  Rng rng(2);
  Tape tape;
  Var x = tape.variable(random_tensor({4, 6}, rng));
  EXPECT_EQ(motion_consistency_loss(x, x).value().item(), 0.0);
  EXPECT_EQ(motion_consistency_loss(x, x, McLossKind::cosine_stopgrad).value().item(), 0.0);
}

TEST(MotionConsistency, OrthogonalRowsGiveTwo) {
  Tape tape;
  Var a = tape.variable(Tensor::matrix({{3, 0}, {0, -2}}));
  Var b = tape.variable(Tensor::matrix({{0, 5}, {0.5, 0}}));
  // The 1e-12 under the normalising square root shifts the result by ~eps/|row|^2.
  EXPECT_NEAR(motion_consistency_loss(a, b).value().item(), 2.0, 1e-10);
}

TEST(MotionConsistency, MatchesScalarRecomputation) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor s = random_tensor({5, 7}, rng), t = random_tensor({5, 7}, rng);
    double expect = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
      double ns = 0.0, nt = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        ns += s.at(r, c) * s.at(r, c);
        nt += t.at(r, c) * t.at(r, c);
      }
      for (std::size_t c = 0; c < 7; ++c) {
        const double d = s.at(r, c) / std::sqrt(ns) - t.at(r, c) / std::sqrt(nt);
        expect += d * d / 5.0;
      }
    }
    Tape tape;
    const double got = motion_consistency_loss(tape.constant(s), tape.constant(t)).value().item();
    EXPECT_NEAR(got, expect, 1e-12);
    EXPECT_GE(got, 0.0);
  }
}

TEST(MotionConsistency, NoGradientReachesPairBranch) {
  Rng rng(4);
  Tape tape;
  Var single = tape.variable(random_tensor({3, 4}, rng));
  Var pair = tape.variable(random_tensor({3, 4}, rng));
  tape.backward(motion_consistency_loss(single, pair));
  for (double g : pair.grad()) EXPECT_EQ(g, 0.0);
  double norm = 0.0;
  for (double g : single.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(MotionConsistency, GradientOfSingleBranchMatchesFiniteDifferences) {
  Rng rng(6);
  const Tensor target = random_tensor({3, 4}, rng);
  for (McLossKind kind : {McLossKind::mse_stopgrad, McLossKind::cosine_stopgrad}) {
    ParameterSet none;
    const auto rep = check_gradients(none, {random_tensor({3, 4}, rng)},
                                     [&](Binder& b, const std::vector<Var>& in) {
                                       return motion_consistency_loss(in[0], b.tape().constant(target), kind);
                                     },
                                     GradCheckOptions{});
    EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst;
  }
}

TEST(MotionConsistency, QueryCountMismatchIsShapeError) {
  Tape tape;
  EXPECT_THROW(motion_consistency_loss(tape.constant(Tensor(Shape{3, 4}, 1.0)), tape.constant(Tensor(Shape{2, 4}, 1.0))),
               ShapeError);
}

}  // namespace
}  // namespace motarfuse

#include <gtest/gtest.h>

#include "motarfuse/error.hpp"
#include "motarfuse/fusion.hpp"
#include "motarfuse/gradcheck.hpp"
#include "motarfuse/ops.hpp"
#include "support.hpp"

namespace motarfuse {
namespace {

using testing::random_tensor;
using testing::tiny_model;

TokenSequence visual_from(Var tokens) {
  const std::size_t n = tokens.rows();
  return TokenSequence{tokens, std::vector<TokenRole>(n, TokenRole::visual), std::vector<int>(n, -1)};
}

void set_identity(Tensor& w) {
  w = Tensor(w.shape(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) w.at(i, i) = 1.0;
}

TEST(Fuse, EmptyStackWithIdentityProjectionsReturnsHybridToken) {
  ModelConfig cfg = tiny_model();
  cfg.fusion_depth = 0;
  Rng rng(1);
  ParameterSet ps;
  FusionParams p = make_fusion(ps, cfg, rng);
  EXPECT_FALSE(p.norm.has_value());
  set_identity(ps.value(p.proj_v_w));
  set_identity(ps.value(p.proj_m_w));
  Tape tape;
  Binder b(tape, ps);
  Var v = tape.constant(random_tensor({4, cfg.d_model}, rng));
  Var m = tape.constant(random_tensor({3, cfg.d_model}, rng));
  FusedRepresentation f = fuse(b, p, visual_from(v), MotionTokens{m, SourceMode::single_frame});
  EXPECT_EQ(f.h_m_cls.value().storage(), ps.value(p.hybrid_cls).storage());
  EXPECT_EQ(f.fused_tokens.shape(), (Shape{1 + 4 + 3, cfg.d_model}));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < cfg.d_model; ++c) EXPECT_EQ(f.fused_tokens.value().at(1 + r, c), v.value().at(r, c));
}

class FuseModes : public ::testing::TestWithParam<FusionMode> {};

TEST_P(FuseModes, OutputWidthIsModelWidth) {
  for (std::size_t depth : {0u, 1u, 2u}) {
    ModelConfig cfg = tiny_model();
    cfg.fusion_mode = GetParam();
    cfg.fusion_depth = depth;
    Rng rng(2);
    ParameterSet ps;
    FusionParams p = make_fusion(ps, cfg, rng);
    Tape tape;
    Binder b(tape, ps);
    FusedRepresentation f = fuse(b, p, visual_from(tape.constant(random_tensor({4, cfg.d_model}, rng))),
                                 MotionTokens{tape.constant(random_tensor({3, cfg.d_model}, rng))});
    EXPECT_EQ(f.h_m_cls.shape(), (Shape{1, cfg.d_model}));
    EXPECT_EQ(f.fused_tokens.shape(), (Shape{8, cfg.d_model}));
    EXPECT_EQ(f.h_m_cls.value().storage(),
              std::vector<double>(f.fused_tokens.value().data().begin(),
                                  f.fused_tokens.value().data().begin() + static_cast<std::ptrdiff_t>(cfg.d_model)));
  }
}

TEST_P(FuseModes, GradientReachesEveryInput) {
  ModelConfig cfg = tiny_model();
  cfg.fusion_mode = GetParam();
  Rng rng(3);
  ParameterSet ps;
  FusionParams p = make_fusion(ps, cfg, rng);
  const auto loss = [&](Binder& b, const std::vector<Var>& in) {
    Var h = fuse(b, p, visual_from(in[0]), MotionTokens{in[1]}, in[2]).h_m_cls;
    return ops::sum(ops::mul(h, ops::gelu(h)));
  };
  const std::vector<Tensor> inputs{random_tensor({4, cfg.d_model}, rng), random_tensor({3, cfg.d_model}, rng),
                                   random_tensor({cfg.d_model}, rng, 0.5)};
  const auto rep = check_gradients(ps, inputs, loss, GradCheckOptions{});
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst;

  Tape tape;
  Binder b(tape, ps);
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.variable(t));
  tape.backward(loss(b, leaves));
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    double norm = 0.0;
    for (double g : leaves[i].grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << "input " << i;
  }
}

TEST_P(FuseModes, ZeroMotionProjectionIgnoresMotionTokens) {
  ModelConfig cfg = tiny_model();
  cfg.fusion_mode = GetParam();
  Rng rng(4);
  ParameterSet ps;
  FusionParams p = make_fusion(ps, cfg, rng);
  ps.value(p.proj_m_w) = Tensor(ps.value(p.proj_m_w).shape(), 0.0);
  ps.value(p.proj_m_b) = Tensor(ps.value(p.proj_m_b).shape(), 0.0);
  const Tensor v = random_tensor({4, cfg.d_model}, rng);
  auto run = [&](const Tensor& m) {
    Tape tape;
    Binder b(tape, ps);
    return fuse(b, p, visual_from(tape.constant(v)), MotionTokens{tape.constant(m)}).h_m_cls.value();
  };
  EXPECT_TRUE(bitwise_equal(run(Tensor(Shape{3, cfg.d_model}, 0.0)), run(random_tensor({3, cfg.d_model}, rng))));
}

TEST_P(FuseModes, IsPure) {
  ModelConfig cfg = tiny_model();
  cfg.fusion_mode = GetParam();
  Rng rng(5);
  ParameterSet ps;
  FusionParams p = make_fusion(ps, cfg, rng);
  const Tensor v = random_tensor({4, cfg.d_model}, rng), m = random_tensor({3, cfg.d_model}, rng);
  auto run = [&]() {
    Tape tape;
    Binder b(tape, ps);
    return fuse(b, p, visual_from(tape.constant(v)), MotionTokens{tape.constant(m)}).h_m_cls.value();
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

INSTANTIATE_TEST_SUITE_P(Modes, FuseModes, ::testing::Values(FusionMode::self_attention, FusionMode::cross_attention));

TEST(Fuse, WidthMismatchIsShapeError) {
  ModelConfig cfg = tiny_model();
  Rng rng(6);
  ParameterSet ps;
  FusionParams p = make_fusion(ps, cfg, rng);
  Tape tape;
  Binder b(tape, ps);
  EXPECT_THROW(fuse(b, p, visual_from(tape.constant(Tensor(Shape{4, cfg.d_model}))),
                    MotionTokens{tape.constant(Tensor(Shape{3, cfg.d_model + 2}))}),
               ShapeError);
}

}  // namespace
}  // namespace motarfuse

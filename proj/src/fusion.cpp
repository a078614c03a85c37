#include "motarfuse/fusion.hpp"

#include "motarfuse/error.hpp"
#include "motarfuse/ops.hpp"

namespace motarfuse {

namespace {
constexpr double kHybridClsStd = 0.02;
}  // namespace

FusionParams make_fusion(ParameterSet& ps, const ModelConfig& cfg, Rng& rng) {
  const InitSpec spec{cfg.d_model, cfg.heads, cfg.d_model * cfg.mlp_ratio, cfg.init_std, cfg.ln_eps};
  const std::size_t d = cfg.d_model;
  FusionParams p;
  p.hybrid_cls = ps.add_normal("fusion.hybrid_cls", Shape{d}, kHybridClsStd, rng);
  p.proj_v_w = ps.add_normal("fusion.proj_v.w", Shape{d, d}, cfg.init_std, rng);
  p.proj_v_b = ps.add_constant("fusion.proj_v.b", Shape{d}, 0.0);
  p.proj_m_w = ps.add_normal("fusion.proj_m.w", Shape{d, d}, cfg.init_std, rng);
  p.proj_m_b = ps.add_constant("fusion.proj_m.b", Shape{d}, 0.0);
  p.mode = cfg.fusion_mode;
  for (std::size_t i = 0; i < cfg.fusion_depth; ++i) {
    const std::string prefix = "fusion." + std::to_string(i);
    if (p.mode == FusionMode::self_attention) {
      p.self_blocks.push_back(make_self_block(ps, prefix, spec, rng));
    } else {
      p.cross_blocks.push_back(make_cross_block(ps, prefix, spec, rng));
    }
  }
  if (cfg.fusion_depth > 0) p.norm = make_layer_norm(ps, "fusion.norm", spec);
  return p;
}

FusedRepresentation fuse(Binder& b, const FusionParams& p, const TokenSequence& visual, const MotionTokens& motion,
                         Var hybrid_cls) {
  visual.check();
  const std::size_t d = visual.tokens.cols();
  if (motion.tokens.cols() != d || hybrid_cls.value().numel() != d) {
    throw ShapeError("fuse: widths differ, visual " + shape_string(visual.tokens.shape()) + ", motion " +
                     shape_string(motion.tokens.shape()) + ", hybrid_cls " + shape_string(hybrid_cls.shape()));
  }
  Var cls = hybrid_cls.value().rank() == 2 ? hybrid_cls : ops::reshape(hybrid_cls, Shape{1, d});
  Var pv = ops::linear(visual.tokens, b(p.proj_v_w), b(p.proj_v_b));
  Var pm = ops::linear(motion.tokens, b(p.proj_m_w), b(p.proj_m_b));
  if (p.mode == FusionMode::self_attention) {
    Var x = ops::concat_rows({cls, pv, pm});
    for (const auto& blk : p.self_blocks) x = self_block(b, blk, x);
    if (p.norm) x = layer_norm(b, *p.norm, x);
    return FusedRepresentation{ops::slice_rows(x, 0, 1), x};
  }
  Var ctx = ops::concat_rows({pv, pm});
  for (const auto& blk : p.cross_blocks) cls = cross_block(b, blk, cls, ctx);
  if (p.norm) {
    cls = layer_norm(b, *p.norm, cls);
    ctx = layer_norm(b, *p.norm, ctx);
  }
  return FusedRepresentation{cls, ops::concat_rows({cls, ctx})};
}

FusedRepresentation fuse(Binder& b, const FusionParams& p, const TokenSequence& visual, const MotionTokens& motion) {
  return fuse(b, p, visual, motion, b(p.hybrid_cls));
}

}  // namespace motarfuse

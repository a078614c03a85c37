#pragma once

#include <optional>

#include "motarfuse/motion.hpp"

namespace motarfuse {

struct FusedRepresentation {
  Var h_m_cls;       // [1 x d_model], row 0 of fused_tokens
  Var fused_tokens;  // [(1 + n_visual + Q) x d_model]
};

struct FusionParams {
  ParamId hybrid_cls;  // [d_model]
  ParamId proj_v_w, proj_v_b;
  ParamId proj_m_w, proj_m_b;
  FusionMode mode = FusionMode::self_attention;
  std::vector<SelfBlockParams> self_blocks;
  std::vector<CrossBlockParams> cross_blocks;
  std::optional<LayerNormParams> norm;  // closes a non-empty stack
};

FusionParams make_fusion(ParameterSet& ps, const ModelConfig& cfg, Rng& rng);

// Self mode: [cls; proj_v(visual); proj_m(motion)] through self-attention
// blocks. Cross mode: cls alone is refined by cross-attending to the projected
// tokens, which pass through unchanged. A non-empty stack ends with a layer
// norm; an empty one returns the inputs as they are.
FusedRepresentation fuse(Binder& b, const FusionParams& p, const TokenSequence& visual, const MotionTokens& motion,
                         Var hybrid_cls);
FusedRepresentation fuse(Binder& b, const FusionParams& p, const TokenSequence& visual, const MotionTokens& motion);

}  // namespace motarfuse

#pragma once

#include "motarfuse/backbone.hpp"

namespace motarfuse {

enum class SourceMode { single_frame, frame_pair, clip };

struct MotionTokens {
  Var tokens;  // [Q x d_model]
  SourceMode source_mode = SourceMode::single_frame;
};

// Learnable part queries, one cross-attention layer over the visual tokens,
// then self-attention/feed-forward refinement.
struct MotionParams {
  ParamId queries;  // [Q x d_model]
  CrossBlockParams cross;
  std::vector<SelfBlockParams> refine;
};

MotionParams make_motion(ParameterSet& ps, const ModelConfig& cfg, Rng& rng);

// `cross_weights` receives the [heads x Q x n_visual] weights of the
// cross-attention layer.
MotionTokens motion_tokens(Binder& b, const MotionParams& p, const TokenSequence& visual,
                           SourceMode mode = SourceMode::single_frame, Tensor* cross_weights = nullptr);

// Mean over the Q token rows of |norm(single) - norm(sg(pair))|^2 for
// mse_stopgrad, or of 1 - cos for cosine_stopgrad. No gradient reaches `pair`.
Var motion_consistency_loss(Var single, Var pair, McLossKind kind = McLossKind::mse_stopgrad);

// Head-averaged cross-attention weights [Q x n_visual]; rows are distributions.
Tensor attention_map(Binder& b, const MotionParams& p, const TokenSequence& visual);

// Composes the motion map with the adapter's head- and layer-averaged weights
// to give per-patch weights [Q x T*patches]. Rows remain distributions.
Tensor patch_attention_map(const Tensor& motion_map, const AdapterTrace& adapter);

}  // namespace motarfuse

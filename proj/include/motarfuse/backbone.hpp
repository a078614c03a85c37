#pragma once

#include <vector>

#include "motarfuse/config.hpp"
#include "motarfuse/image.hpp"
#include "motarfuse/layers.hpp"

namespace motarfuse {

enum class TokenRole { patch, cls, visual, motion, hybrid_cls };

// Token matrix [n x d_model] with a role and source frame per row. Tokens
// pooled across frames carry frame index -1.
struct TokenSequence {
  Var tokens;
  std::vector<TokenRole> roles;
  std::vector<int> frame_index;

  std::size_t size() const { return roles.size(); }
  void check() const;
};

struct BackboneParams {
  ParamId patch_w, patch_b;
  ParamId pos_embed;  // [patches_per_frame x d]
  std::vector<SelfBlockParams> encoder;
  ParamId frame_pos;  // [max_frames x d]
  ParamId condenser;  // [n_visual_tokens x d]
  std::vector<CrossBlockParams> adapter;
  std::size_t patch_size = 0;
  std::size_t max_frames = 0;
};

BackboneParams make_backbone(ParameterSet& ps, const ModelConfig& cfg, Rng& rng);

// Splits a frame into non-overlapping p x p patches in raster order; each row
// holds one patch flattened channel-major (c, dy, dx).
Tensor patchify(const ImageFrame& frame, std::size_t patch_size);

// embed_frame centers pixels as (v - 0.5) / 0.25 before calling embed.
// Token i = patches[i] * proj_w + proj_b + pos_embed[i].
TokenSequence embed(Var patches, Var proj_w, Var proj_b, Var pos_embed, int frame = 0);
TokenSequence embed_frame(Binder& b, const BackboneParams& p, const ImageFrame& frame, int frame_index = 0);

// Stack of pre-norm self-attention blocks; identity for an empty stack.
TokenSequence encode(Binder& b, const std::vector<SelfBlockParams>& blocks, const TokenSequence& tokens);

struct AdapterTrace {
  // One [heads x n_visual x (T * patches)] tensor per adapter block.
  std::vector<Tensor> weights;
};

// Condenses the encoded tokens of T frames into n_visual_tokens visual tokens.
// Learned condenser queries cross-attend to every frame token plus the frame's
// position embedding; T = 1 is image mode and uses frame position 0.
TokenSequence adapt(Binder& b, const BackboneParams& p, const std::vector<TokenSequence>& per_frame,
                    AdapterTrace* trace = nullptr);

}  // namespace motarfuse

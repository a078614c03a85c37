#include "motarfuse/backbone.hpp"

#include "motarfuse/error.hpp"
#include "motarfuse/ops.hpp"

namespace motarfuse {

namespace {
// Pixels in [0,1] are shifted to zero mean before projection.
constexpr double kPixelMean = 0.5;
constexpr double kPixelStd = 0.25;
}  // namespace

void TokenSequence::check() const {
  if (!tokens.valid()) throw ContractError("token sequence has no tokens");
  if (tokens.rows() != roles.size() || roles.size() != frame_index.size()) {
    throw ShapeError("token sequence bookkeeping mismatch: " + std::to_string(tokens.rows()) + " tokens, " +
                     std::to_string(roles.size()) + " roles, " + std::to_string(frame_index.size()) + " frame ids");
  }
}

BackboneParams make_backbone(ParameterSet& ps, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const InitSpec spec{cfg.d_model, cfg.heads, cfg.d_model * cfg.mlp_ratio, cfg.init_std, cfg.ln_eps};
  BackboneParams p;
  p.patch_size = cfg.patch_size;
  p.max_frames = cfg.max_frames;
  p.patch_w = ps.add_normal("backbone.patch.w", Shape{cfg.patch_dim(), cfg.d_model}, cfg.init_std, rng);
  p.patch_b = ps.add_constant("backbone.patch.b", Shape{cfg.d_model}, 0.0);
  p.pos_embed = ps.add_normal("backbone.pos_embed", Shape{cfg.patches_per_frame(), cfg.d_model}, cfg.init_std, rng);
  for (std::size_t i = 0; i < cfg.encoder_depth; ++i) {
    p.encoder.push_back(make_self_block(ps, "encoder." + std::to_string(i), spec, rng));
  }
  p.frame_pos = ps.add_normal("adapter.frame_pos", Shape{cfg.max_frames, cfg.d_model}, cfg.init_std, rng);
  p.condenser = ps.add_normal("adapter.condenser", Shape{cfg.n_visual_tokens, cfg.d_model}, cfg.init_std, rng);
  for (std::size_t i = 0; i < cfg.adapter_depth; ++i) {
    p.adapter.push_back(make_cross_block(ps, "adapter." + std::to_string(i), spec, rng));
  }
  return p;
}

Tensor patchify(const ImageFrame& frame, std::size_t patch_size) {
  const std::size_t p = patch_size;
  if (p == 0 || frame.height % p != 0 || frame.width % p != 0) {
    throw ShapeError("patchify: frame " + std::to_string(frame.height) + "x" + std::to_string(frame.width) +
                     " is not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = frame.height / p, gw = frame.width / p;
  Tensor out(Shape{gh * gw, 3 * p * p});
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double* row = out.data().data() + (py * gw + px) * 3 * p * p;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) *row++ = frame.at(c, py * p + dy, px * p + dx);
    }
  }
  return out;
}

TokenSequence embed(Var patches, Var proj_w, Var proj_b, Var pos_embed, int frame) {
  if (pos_embed.rows() != patches.rows()) {
    throw ConfigError("embed: " + std::to_string(pos_embed.rows()) + " position rows for " +
                      std::to_string(patches.rows()) + " patches");
  }
  Var tokens = ops::add(ops::linear(patches, proj_w, proj_b), pos_embed);
  const std::size_t n = tokens.rows();
  return TokenSequence{tokens, std::vector<TokenRole>(n, TokenRole::patch), std::vector<int>(n, frame)};
}

TokenSequence embed_frame(Binder& b, const BackboneParams& p, const ImageFrame& frame, int frame_index) {
  Tensor raw = patchify(frame, p.patch_size);
  for (double& v : raw.data()) v = (v - kPixelMean) / kPixelStd;
  Var patches = b.tape().constant(std::move(raw));
  return embed(patches, b(p.patch_w), b(p.patch_b), b(p.pos_embed), frame_index);
}

TokenSequence encode(Binder& b, const std::vector<SelfBlockParams>& blocks, const TokenSequence& tokens) {
  tokens.check();
  TokenSequence out = tokens;
  for (const auto& blk : blocks) out.tokens = self_block(b, blk, out.tokens);
  return out;
}

TokenSequence adapt(Binder& b, const BackboneParams& p, const std::vector<TokenSequence>& per_frame,
                    AdapterTrace* trace) {
  const std::size_t t_count = per_frame.size();
  if (t_count == 0) throw ContractError("adapt: no frames");
  if (t_count > p.max_frames) {
    throw ConfigError("adapt: " + std::to_string(t_count) + " frames exceed max_frames " +
                      std::to_string(p.max_frames));
  }
  const Shape& first = per_frame.front().tokens.shape();
  std::vector<Var> context;
  context.reserve(t_count);
  Var frame_pos = b(p.frame_pos);
  for (std::size_t t = 0; t < t_count; ++t) {
    per_frame[t].check();
    if (per_frame[t].tokens.shape() != first) {
      throw ShapeError("adapt: frame " + std::to_string(t) + " has shape " +
                       shape_string(per_frame[t].tokens.shape()) + ", frame 0 has " + shape_string(first));
    }
    context.push_back(ops::add_row(per_frame[t].tokens, ops::slice_rows(frame_pos, t, 1)));
  }
  Var ctx = t_count == 1 ? context.front() : ops::concat_rows(context);
  Var q = b(p.condenser);
  if (trace) trace->weights.clear();
  for (const auto& blk : p.adapter) {
    Tensor w;
    q = cross_block(b, blk, q, ctx, trace ? &w : nullptr);
    if (trace) trace->weights.push_back(std::move(w));
  }
  const std::size_t n = q.rows();
  return TokenSequence{q, std::vector<TokenRole>(n, TokenRole::visual), std::vector<int>(n, -1)};
}

}  // namespace motarfuse

#include "motarfuse/motion.hpp"

#include "motarfuse/error.hpp"
#include "motarfuse/ops.hpp"

namespace motarfuse {

MotionParams make_motion(ParameterSet& ps, const ModelConfig& cfg, Rng& rng) {
  const InitSpec spec{cfg.d_model, cfg.heads, cfg.d_model * cfg.mlp_ratio, cfg.init_std, cfg.ln_eps};
  MotionParams p;
  p.queries = ps.add_normal("motion.queries", Shape{cfg.query_count, cfg.d_model}, cfg.init_std, rng);
  p.cross = make_cross_block(ps, "motion.cross", spec, rng, /*with_ffn=*/false);
  for (std::size_t i = 0; i < cfg.motion_depth; ++i) {
    p.refine.push_back(make_self_block(ps, "motion.refine." + std::to_string(i), spec, rng));
  }
  return p;
}

MotionTokens motion_tokens(Binder& b, const MotionParams& p, const TokenSequence& visual, SourceMode mode,
                           Tensor* cross_weights) {
  visual.check();
  Var q = b(p.queries);
  if (visual.tokens.cols() != q.cols()) {
    throw ShapeError("motion_tokens: visual width " + std::to_string(visual.tokens.cols()) + " vs query width " +
                     std::to_string(q.cols()));
  }
  Var x = cross_block(b, p.cross, q, visual.tokens, cross_weights);
  for (const auto& blk : p.refine) x = self_block(b, blk, x);
  return MotionTokens{x, mode};
}

Var motion_consistency_loss(Var single, Var pair, McLossKind kind) {
  if (single.shape() != pair.shape()) {
    throw ShapeError("motion_consistency_loss: " + shape_string(single.shape()) + " vs " +
                     shape_string(pair.shape()));
  }
  const double rows = static_cast<double>(single.rows());
  Var a = ops::l2_normalize_rows(single);
  Var t = ops::l2_normalize_rows(ops::detach(pair));
  // Per row |a - t|^2 summed, then averaged over rows; cosine form is half of it.
  Var sq = ops::scale(ops::sum(ops::mul(ops::sub(a, t), ops::sub(a, t))), 1.0 / rows);
  return kind == McLossKind::mse_stopgrad ? sq : ops::scale(sq, 0.5);
}

Tensor attention_map(Binder& b, const MotionParams& p, const TokenSequence& visual) {
  Tensor w;
  motion_tokens(b, p, visual, SourceMode::single_frame, &w);
  return mean_over_heads(w);
}

Tensor patch_attention_map(const Tensor& motion_map, const AdapterTrace& adapter) {
  if (adapter.weights.empty()) throw ContractError("patch_attention_map: adapter trace is empty");
  Tensor pooled = mean_over_heads(adapter.weights.front());
  for (std::size_t l = 1; l < adapter.weights.size(); ++l) {
    Tensor w = mean_over_heads(adapter.weights[l]);
    for (std::size_t i = 0; i < pooled.numel(); ++i) pooled[i] += w[i];
  }
  for (auto& v : pooled.data()) v /= static_cast<double>(adapter.weights.size());
  const std::size_t q = motion_map.dim(0), nv = motion_map.dim(1), np = pooled.dim(1);
  if (pooled.dim(0) != nv) {
    throw ShapeError("patch_attention_map: motion map " + shape_string(motion_map.shape()) + " vs adapter map " +
                     shape_string(pooled.shape()));
  }
  Tensor out(Shape{q, np}, 0.0);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t k = 0; k < nv; ++k) {
      const double w = motion_map.at(i, k);
      for (std::size_t j = 0; j < np; ++j) out[i * np + j] += w * pooled.at(k, j);
    }
  return out;
}

}  // namespace motarfuse

#include "motarfuse/layers.hpp"

#include "motarfuse/error.hpp"
#include "motarfuse/ops.hpp"

namespace motarfuse {

LayerNormParams make_layer_norm(ParameterSet& ps, const std::string& prefix, const InitSpec& spec) {
  LayerNormParams p;
  p.gain = ps.add_constant(prefix + ".gain", Shape{spec.d_model}, 1.0);
  p.bias = ps.add_constant(prefix + ".bias", Shape{spec.d_model}, 0.0);
  p.eps = spec.ln_eps;
  return p;
}

AttentionParams make_attention(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng) {
  if (spec.heads == 0 || spec.d_model % spec.heads != 0) {
    throw ConfigError("d_model " + std::to_string(spec.d_model) + " is not divisible by heads " +
                      std::to_string(spec.heads));
  }
  const std::size_t d = spec.d_model;
  AttentionParams p;
  p.wq = ps.add_normal(prefix + ".wq", Shape{d, d}, spec.init_std, rng);
  p.bq = ps.add_constant(prefix + ".bq", Shape{d}, 0.0);
  p.wk = ps.add_normal(prefix + ".wk", Shape{d, d}, spec.init_std, rng);
  p.bk = ps.add_constant(prefix + ".bk", Shape{d}, 0.0);
  p.wv = ps.add_normal(prefix + ".wv", Shape{d, d}, spec.init_std, rng);
  p.bv = ps.add_constant(prefix + ".bv", Shape{d}, 0.0);
  p.wo = ps.add_normal(prefix + ".wo", Shape{d, d}, spec.init_std, rng);
  p.bo = ps.add_constant(prefix + ".bo", Shape{d}, 0.0);
  p.heads = spec.heads;
  return p;
}

FeedForwardParams make_feed_forward(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng) {
  FeedForwardParams p;
  p.w1 = ps.add_normal(prefix + ".w1", Shape{spec.d_model, spec.hidden}, spec.init_std, rng);
  p.b1 = ps.add_constant(prefix + ".b1", Shape{spec.hidden}, 0.0);
  p.w2 = ps.add_normal(prefix + ".w2", Shape{spec.hidden, spec.d_model}, spec.init_std, rng);
  p.b2 = ps.add_constant(prefix + ".b2", Shape{spec.d_model}, 0.0);
  return p;
}

SelfBlockParams make_self_block(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng) {
  SelfBlockParams p;
  p.ln1 = make_layer_norm(ps, prefix + ".ln1", spec);
  p.attn = make_attention(ps, prefix + ".attn", spec, rng);
  p.ln2 = make_layer_norm(ps, prefix + ".ln2", spec);
  p.ffn = make_feed_forward(ps, prefix + ".ffn", spec, rng);
  return p;
}

CrossBlockParams make_cross_block(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng,
                                  bool with_ffn) {
  CrossBlockParams p;
  p.ln_q = make_layer_norm(ps, prefix + ".ln_q", spec);
  p.ln_ctx = make_layer_norm(ps, prefix + ".ln_ctx", spec);
  p.attn = make_attention(ps, prefix + ".attn", spec, rng);
  p.with_ffn = with_ffn;
  if (with_ffn) {
    p.ln2 = make_layer_norm(ps, prefix + ".ln2", spec);
    p.ffn = make_feed_forward(ps, prefix + ".ffn", spec, rng);
  }
  return p;
}

Var layer_norm(Binder& b, const LayerNormParams& p, Var x) { return ops::layer_norm(x, b(p.gain), b(p.bias), p.eps); }

Var multi_head_attention(Binder& b, const AttentionParams& p, Var q_src, Var kv_src, Tensor* weights) {
  if (q_src.cols() != kv_src.cols()) {
    throw ShapeError("multi_head_attention: query width " + std::to_string(q_src.cols()) + " vs key width " +
                     std::to_string(kv_src.cols()));
  }
  Var q = ops::linear(q_src, b(p.wq), b(p.bq));
  Var k = ops::linear(kv_src, b(p.wk), b(p.bk));
  Var v = ops::linear(kv_src, b(p.wv), b(p.bv));
  Var o = ops::attention(q, k, v, p.heads, weights);
  return ops::linear(o, b(p.wo), b(p.bo));
}

Var feed_forward(Binder& b, const FeedForwardParams& p, Var x) {
  Var h = ops::gelu(ops::linear(x, b(p.w1), b(p.b1)));
  return ops::linear(h, b(p.w2), b(p.b2));
}

Var self_block(Binder& b, const SelfBlockParams& p, Var x, Tensor* weights) {
  Var n1 = layer_norm(b, p.ln1, x);
  x = ops::add(x, multi_head_attention(b, p.attn, n1, n1, weights));
  return ops::add(x, feed_forward(b, p.ffn, layer_norm(b, p.ln2, x)));
}

Var cross_block(Binder& b, const CrossBlockParams& p, Var queries, Var context, Tensor* weights) {
  Var nq = layer_norm(b, p.ln_q, queries);
  Var nc = layer_norm(b, p.ln_ctx, context);
  Var x = ops::add(queries, multi_head_attention(b, p.attn, nq, nc, weights));
  if (!p.with_ffn) return x;
  return ops::add(x, feed_forward(b, p.ffn, layer_norm(b, p.ln2, x)));
}

Tensor mean_over_heads(const Tensor& weights) {
  if (weights.rank() != 3) throw ShapeError("mean_over_heads: expected [heads x nq x nk], got " + shape_string(weights.shape()));
  const std::size_t h = weights.dim(0), nq = weights.dim(1), nk = weights.dim(2);
  Tensor out(Shape{nq, nk}, 0.0);
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < nq * nk; ++i) out[i] += weights[k * nq * nk + i];
  for (auto& v : out.data()) v /= static_cast<double>(h);
  return out;
}

}  // namespace motarfuse

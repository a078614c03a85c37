#pragma once

#include <string>

#include "motarfuse/params.hpp"

// Pre-norm transformer building blocks shared by the encoder, adapter,
// motion-aware transformer and fusion encoder.
namespace motarfuse {

struct LayerNormParams {
  ParamId gain, bias;
  double eps = 1e-6;
};

struct AttentionParams {
  ParamId wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;
};

struct FeedForwardParams {
  ParamId w1, b1, w2, b2;
};

// x + MHA(LN(x)); then x + FFN(LN(x)).
struct SelfBlockParams {
  LayerNormParams ln1;
  AttentionParams attn;
  LayerNormParams ln2;
  FeedForwardParams ffn;
};

// q + MHA(LN(q), LN(ctx)); then, if with_ffn, q + FFN(LN(q)).
struct CrossBlockParams {
  LayerNormParams ln_q, ln_ctx;
  AttentionParams attn;
  bool with_ffn = true;
  LayerNormParams ln2;
  FeedForwardParams ffn;
};

struct InitSpec {
  std::size_t d_model = 0;
  std::size_t heads = 1;
  std::size_t hidden = 0;
  double init_std = 0.02;
  double ln_eps = 1e-6;
};

LayerNormParams make_layer_norm(ParameterSet& ps, const std::string& prefix, const InitSpec& spec);
AttentionParams make_attention(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng);
FeedForwardParams make_feed_forward(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng);
SelfBlockParams make_self_block(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng);
CrossBlockParams make_cross_block(ParameterSet& ps, const std::string& prefix, const InitSpec& spec, Rng& rng,
                                  bool with_ffn = true);

Var layer_norm(Binder& b, const LayerNormParams& p, Var x);

// Projects q_src to queries and kv_src to keys/values, attends, projects out.
// Self-attention when q_src and kv_src are the same Var. `weights` receives
// [heads x nq x nk].
Var multi_head_attention(Binder& b, const AttentionParams& p, Var q_src, Var kv_src, Tensor* weights = nullptr);

Var feed_forward(Binder& b, const FeedForwardParams& p, Var x);
Var self_block(Binder& b, const SelfBlockParams& p, Var x, Tensor* weights = nullptr);
Var cross_block(Binder& b, const CrossBlockParams& p, Var queries, Var context, Tensor* weights = nullptr);

// Averages [heads x nq x nk] attention weights over heads into [nq x nk].
Tensor mean_over_heads(const Tensor& weights);

}  // namespace motarfuse

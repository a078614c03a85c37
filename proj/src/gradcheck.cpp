#include "motarfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "motarfuse/backbone.hpp"
#include "motarfuse/error.hpp"
#include "motarfuse/fusion.hpp"
#include "motarfuse/network.hpp"
#include "motarfuse/objectives.hpp"
#include "motarfuse/ops.hpp"

namespace motarfuse {

GradCheckReport check_gradients(ParameterSet& params, std::vector<Tensor> inputs, const GradLossFn& loss,
                                const GradCheckOptions& opt) {
  std::vector<std::vector<double>> analytic_inputs;
  std::vector<std::vector<double>> analytic_params;
  {
    Tape tape;
    Binder b(tape, params);
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.variable(t));
    Var l = loss(b, leaves);
    tape.backward(l);
    for (const auto& v : leaves) analytic_inputs.push_back(v.grad());
    params.zero_grad();
    b.accumulate_grads(params);
    for (auto& e : params.entries()) analytic_params.push_back(e.value.grad());
  }

  auto evaluate = [&]() {
    Tape tape(false);
    Binder b(tape, params, false);
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.constant(t));
    return loss(b, leaves).value().item();
  };

  GradCheckReport rep;
  auto compare = [&](double& slot, double analytic, const std::string& where, std::size_t i) {
    const double saved = slot;
    slot = saved + opt.eps;
    const double up = evaluate();
    slot = saved - opt.eps;
    const double down = evaluate();
    slot = saved;
    const double numeric = (up - down) / (2.0 * opt.eps);
    const double err = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    ++rep.checked;
    if (err > rep.max_rel_error || !std::isfinite(err)) {
      rep.max_rel_error = std::isfinite(err) ? err : INFINITY;
      rep.worst = where + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                  std::to_string(numeric);
    }
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& data = inputs[k].storage();
    for (std::size_t i = 0; i < data.size(); ++i) compare(data[i], analytic_inputs[k][i], "input" + std::to_string(k), i);
  }
  auto& entries = params.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& data = entries[k].value.storage();
    for (std::size_t i = 0; i < data.size(); ++i) compare(data[i], analytic_params[k][i], entries[k].name, i);
  }
  return rep;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(shape, 0.0);
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

// sum(x * r) for a fixed random r, so every output entry reaches the loss.
Var readout(Var x, std::uint64_t seed) {
  Rng rng(seed ^ 0x5eedULL);
  return ops::sum(ops::mul(x, x.tape->constant(random_tensor(x.shape(), rng))));
}

void jitter(ParameterSet& ps, Rng& rng, double stddev) {
  for (auto& e : ps.entries())
    for (auto& v : e.value.data()) v += rng.normal(0.0, stddev);
}

struct Case {
  std::string name;
  // Fills the parameter set and inputs for one trial and returns the loss.
  std::function<GradLossFn(ParameterSet&, std::vector<Tensor>&, Rng&)> setup;
};

ModelConfig tiny_model() {
  ModelConfig m;
  m.image_height = 8;
  m.image_width = 8;
  m.patch_size = 4;
  m.d_model = 8;
  m.heads = 2;
  m.encoder_depth = 1;
  m.adapter_depth = 1;
  m.motion_depth = 1;
  m.fusion_depth = 1;
  m.mlp_ratio = 2;
  m.n_visual_tokens = 3;
  m.max_frames = 4;
  m.query_count = 2;
  m.init_std = 0.4;
  m.ln_eps = 1e-5;
  return m;
}

InitSpec tiny_spec() {
  const ModelConfig m = tiny_model();
  return InitSpec{m.d_model, m.heads, m.d_model * m.mlp_ratio, m.init_std, m.ln_eps};
}

TokenSequence as_tokens(Var x, int frame) {
  TokenSequence s;
  s.tokens = x;
  s.roles.assign(x.rows(), TokenRole::patch);
  s.frame_index.assign(x.rows(), frame);
  return s;
}

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::vector<Case> build_cases() {
  std::vector<Case> cases;
  auto unary = [&](std::string name, Shape shape, std::function<Var(Var)> f) {
    cases.push_back({name, [shape, f](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                       in.push_back(random_tensor(shape, rng));
                       const std::uint64_t rs = rng.next_u64();
                       return [f, rs](Binder&, const std::vector<Var>& x) { return readout(f(x[0]), rs); };
                     }});
  };
  auto binary = [&](std::string name, Shape sa, Shape sb, std::function<Var(Var, Var)> f) {
    cases.push_back({name, [sa, sb, f](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                       in.push_back(random_tensor(sa, rng));
                       in.push_back(random_tensor(sb, rng));
                       const std::uint64_t rs = rng.next_u64();
                       return [f, rs](Binder&, const std::vector<Var>& x) { return readout(f(x[0], x[1]), rs); };
                     }});
  };

  binary("matmul", {3, 4}, {4, 5}, [](Var a, Var b) { return ops::matmul(a, b); });
  unary("transpose", {3, 5}, [](Var a) { return ops::transpose(a); });
  cases.push_back({"linear", [](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                     in.push_back(random_tensor({4, 3}, rng));
                     in.push_back(random_tensor({3, 5}, rng));
                     in.push_back(random_tensor({5}, rng));
                     const std::uint64_t rs = rng.next_u64();
                     return [rs](Binder&, const std::vector<Var>& x) { return readout(ops::linear(x[0], x[1], x[2]), rs); };
                   }});
  binary("add", {3, 4}, {3, 4}, [](Var a, Var b) { return ops::add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](Var a, Var b) { return ops::sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](Var a, Var b) { return ops::mul(a, b); });
  unary("scale", {3, 4}, [](Var a) { return ops::scale(a, -1.7); });
  binary("add_row", {3, 4}, {4}, [](Var a, Var b) { return ops::add_row(a, b); });
  binary("concat_rows", {2, 4}, {3, 4}, [](Var a, Var b) { return ops::concat_rows({a, b, a}); });
  unary("slice_rows", {5, 3}, [](Var a) { return ops::slice_rows(a, 1, 3); });
  unary("reshape", {4, 6}, [](Var a) { return ops::reshape(a, Shape{3, 8}); });
  unary("softmax", {4, 6}, [](Var a) { return ops::softmax(a); });
  cases.push_back({"layer_norm", [](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                     in.push_back(random_tensor({4, 6}, rng));
                     in.push_back(random_tensor({6}, rng));
                     in.push_back(random_tensor({6}, rng));
                     const std::uint64_t rs = rng.next_u64();
                     return [rs](Binder&, const std::vector<Var>& x) {
                       return readout(ops::layer_norm(x[0], x[1], x[2], 1e-5), rs);
                     };
                   }});
  unary("gelu", {4, 6}, [](Var a) { return ops::gelu(a); });
  unary("sum", {4, 6}, [](Var a) { return ops::scale(ops::sum(ops::mul(a, a)), 0.5); });
  unary("mean", {4, 6}, [](Var a) { return ops::mean(ops::mul(a, a)); });
  binary("mse", {4, 6}, {4, 6}, [](Var a, Var b) { return ops::mse(a, b); });
  cases.push_back({"cross_entropy_logits", [](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                     in.push_back(random_tensor({6, 5}, rng, 2.0));
                     std::vector<int> labels;
                     for (int i = 0; i < 6; ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, 4)));
                     return [labels](Binder&, const std::vector<Var>& x) {
                       return ops::cross_entropy_logits(x[0], labels);
                     };
                   }});
  unary("l2_normalize_rows", {4, 6}, [](Var a) { return ops::l2_normalize_rows(a); });
  cases.push_back({"attention", [](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                     in.push_back(random_tensor({3, 8}, rng));
                     in.push_back(random_tensor({5, 8}, rng));
                     in.push_back(random_tensor({5, 8}, rng));
                     const std::uint64_t rs = rng.next_u64();
                     return [rs](Binder&, const std::vector<Var>& x) {
                       return readout(ops::attention(x[0], x[1], x[2], 2), rs);
                     };
                   }});

  // ---- composite blocks ----
  auto block = [&](std::string name,
                   std::function<GradLossFn(ParameterSet&, std::vector<Tensor>&, Rng&, std::uint64_t)> make) {
    cases.push_back({name, [make](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                       const std::uint64_t rs = rng.next_u64();
                       GradLossFn f = make(ps, in, rng, rs);
                       jitter(ps, rng, 0.3);
                       return f;
                     }});
  };
  block("layer_norm_params", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    auto p = make_layer_norm(ps, "ln", tiny_spec());
    in.push_back(random_tensor({4, 8}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) { return readout(layer_norm(b, p, x[0]), rs); };
  });
  block("multi_head_attention", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    auto p = make_attention(ps, "attn", tiny_spec(), rng);
    in.push_back(random_tensor({3, 8}, rng));
    in.push_back(random_tensor({5, 8}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) {
      return readout(multi_head_attention(b, p, x[0], x[1]), rs);
    };
  });
  block("feed_forward", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    auto p = make_feed_forward(ps, "ffn", tiny_spec(), rng);
    in.push_back(random_tensor({4, 8}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) { return readout(feed_forward(b, p, x[0]), rs); };
  });
  block("encoder_block", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    auto p = make_self_block(ps, "enc", tiny_spec(), rng);
    in.push_back(random_tensor({4, 8}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) { return readout(self_block(b, p, x[0]), rs); };
  });
  block("cross_block", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    auto p = make_cross_block(ps, "cross", tiny_spec(), rng);
    in.push_back(random_tensor({3, 8}, rng));
    in.push_back(random_tensor({5, 8}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) { return readout(cross_block(b, p, x[0], x[1]), rs); };
  });
  block("patch_embedding", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    const ModelConfig m = tiny_model();
    auto p = make_backbone(ps, m, rng);
    ImageFrame frame(m.image_height, m.image_width);
    for (auto& v : frame.pixels) v = rng.uniform();
    in.push_back(patchify(frame, m.patch_size));
    return [p, rs](Binder& b, const std::vector<Var>& x) {
      return readout(encode(b, p.encoder, embed(x[0], b(p.patch_w), b(p.patch_b), b(p.pos_embed))).tokens, rs);
    };
  });
  block("adapter", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    const ModelConfig m = tiny_model();
    auto p = make_backbone(ps, m, rng);
    in.push_back(random_tensor({m.patches_per_frame(), m.d_model}, rng));
    in.push_back(random_tensor({m.patches_per_frame(), m.d_model}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) {
      return readout(adapt(b, p, {as_tokens(x[0], 0), as_tokens(x[1], 1)}).tokens, rs);
    };
  });
  block("motion_transformer", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    ModelConfig m = tiny_model();
    m.motion_depth = 2;
    auto p = make_motion(ps, m, rng);
    in.push_back(random_tensor({m.n_visual_tokens, m.d_model}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) {
      TokenSequence v = as_tokens(x[0], -1);
      v.roles.assign(v.size(), TokenRole::visual);
      return readout(motion_tokens(b, p, v).tokens, rs);
    };
  });
  for (FusionMode mode : {FusionMode::self_attention, FusionMode::cross_attention}) {
    block("fusion_encoder_" + to_string(mode),
          [mode](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
            ModelConfig m = tiny_model();
            m.fusion_mode = mode;
            auto p = make_fusion(ps, m, rng);
            in.push_back(random_tensor({m.n_visual_tokens, m.d_model}, rng));
            in.push_back(random_tensor({m.query_count, m.d_model}, rng));
            return [p, rs](Binder& b, const std::vector<Var>& x) {
              TokenSequence v = as_tokens(x[0], -1);
              v.roles.assign(v.size(), TokenRole::visual);
              const FusedRepresentation f = fuse(b, p, v, MotionTokens{x[1], SourceMode::single_frame});
              return ops::add(readout(f.h_m_cls, rs), readout(f.fused_tokens, rs + 1));
            };
          });
  }
  block("classifier", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng, std::uint64_t rs) -> GradLossFn {
    auto p = make_classifier(ps, 8, 5, 0.4, rng);
    in.push_back(random_tensor({3, 8}, rng));
    return [p, rs](Binder& b, const std::vector<Var>& x) { return readout(classify(b, p, x[0]), rs); };
  });

  // ---- losses ----
  cases.push_back({"triplet_loss", [](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                     in.push_back(random_tensor({8, 5}, rng));
                     const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
                     return [labels](Binder&, const std::vector<Var>& x) { return triplet_loss(x[0], labels, 2.0); };
                   }});
  for (McLossKind kind : {McLossKind::mse_stopgrad, McLossKind::cosine_stopgrad}) {
    cases.push_back({"motion_consistency_" + to_string(kind),
                     [kind](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                       in.push_back(random_tensor({4, 6}, rng));
                       Tensor pair = random_tensor({4, 6}, rng);
                       return [kind, pair](Binder& b, const std::vector<Var>& x) {
                         return motion_consistency_loss(x[0], b.tape().constant(pair), kind);
                       };
                     }});
  }
  cases.push_back({"total_loss", [](ParameterSet&, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
                     in.push_back(random_tensor({8, 5}, rng));
                     in.push_back(random_tensor({4, 6}, rng));
                     Tensor pair = random_tensor({4, 6}, rng);
                     const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
                     const double lg = rng.uniform(0.2, 2.0), lmc = rng.uniform(0.2, 2.0);
                     return [labels, pair, lg, lmc](Binder& b, const std::vector<Var>& x) {
                       Var ce = ops::cross_entropy_logits(x[0], labels);
                       Var tr = triplet_loss(x[0], labels, 2.0);
                       Var mc = motion_consistency_loss(x[1], b.tape().constant(pair));
                       return total_loss(ce, tr, mc, lg, lmc);
                     };
                   }});
  // Pixel-range inputs and the plain initialisation: with jittered weights the
  // stacked layer norms make third derivatives large enough for the central
  // difference truncation error to reach 1e-4.
  cases.push_back({"network_end_to_end", [](ParameterSet& ps, std::vector<Tensor>& in, Rng& rng) -> GradLossFn {
    ModelConfig m = tiny_model();
    m.init_std = 0.3;
    m.num_classes = 3;
    auto bb = make_backbone(ps, m, rng);
    auto mo = make_motion(ps, m, rng);
    auto fu = make_fusion(ps, m, rng);
    auto hd = make_classifier(ps, m.d_model, 3, m.init_std, rng);
    for (int i = 0; i < 4; ++i) {
      ImageFrame frame(m.image_height, m.image_width);
      for (auto& v : frame.pixels) v = rng.uniform();
      in.push_back(patchify(frame, m.patch_size));
    }
    const std::vector<int> labels{0, 0, 1, 1};
    return [=](Binder& b, const std::vector<Var>& x) {
      std::vector<Var> feats, logits;
      for (std::size_t i = 0; i < x.size(); ++i) {
        TokenSequence t = encode(b, bb.encoder, embed(x[i], b(bb.patch_w), b(bb.patch_b), b(bb.pos_embed)));
        TokenSequence v = adapt(b, bb, {t});
        MotionTokens mt = motion_tokens(b, mo, v);
        FusedRepresentation f = fuse(b, fu, v, mt);
        feats.push_back(f.h_m_cls);
        logits.push_back(classify(b, hd, f.h_m_cls));
      }
      Var ce = ops::cross_entropy_logits(ops::concat_rows(logits), labels);
      Var tr = triplet_loss(ops::concat_rows(feats), labels, 5.0);
      return total_loss(ce, tr, std::nullopt, 1.0, 1.0);
    };
  }});
  return cases;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt) {
  std::vector<GradCheckResult> results;
  for (const Case& c : build_cases()) {
    GradCheckResult r;
    r.name = c.name;
    for (std::size_t trial = 0; trial < opt.trials; ++trial) {
      Rng rng(opt.seed * 1000003ULL + trial * 7919ULL + name_hash(c.name) % 1000);
      ParameterSet ps;
      std::vector<Tensor> inputs;
      GradLossFn f = c.setup(ps, inputs, rng);
      const GradCheckReport rep = check_gradients(ps, std::move(inputs), f, opt);
      ++r.trials;
      r.checked += rep.checked;
      if (rep.max_rel_error >= r.max_rel_error) {
        r.max_rel_error = rep.max_rel_error;
        r.worst = rep.worst;
      }
    }
    r.passed = r.max_rel_error < opt.tolerance;
    results.push_back(r);
  }
  return results;
}

}  // namespace motarfuse

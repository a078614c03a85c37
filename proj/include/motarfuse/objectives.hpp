#pragma once

#include <optional>
#include <span>

#include "motarfuse/config.hpp"
#include "motarfuse/params.hpp"

namespace motarfuse {

struct ClassifierParams {
  ParamId w, b;  // [d x classes], [classes]
};

ClassifierParams make_classifier(ParameterSet& ps, std::size_t d_model, std::size_t classes, double init_std,
                                 Rng& rng);

// Linear identity head, no activation: h[n x d] -> logits[n x classes].
Var classify(Binder& b, const ClassifierParams& p, Var h);

// Batch-hard triplet loss on Euclidean distances: for every anchor, the
// farthest same-label sample against the closest other-label sample,
// max(0, d_ap - d_an + margin), averaged over anchors. Ties resolve to the
// lowest index.
Var triplet_loss(Var features, std::span<const int> labels, double margin);

struct LossBreakdown {
  double l_ce = 0.0;
  double l_triplet = 0.0;
  double l_g = 0.0;
  double l_mc = 0.0;
  double total = 0.0;
  double lambda_g = 1.0;
  double lambda_mc = 1.0;
};

// total = lambda_g * (l_ce + l_triplet) + lambda_mc * l_mc.
LossBreakdown total_loss(double l_ce, double l_triplet, double l_mc, double lambda_g, double lambda_mc);

// Differentiable counterpart of total_loss. Without l_mc the motion term is
// absent from the graph.
Var total_loss(Var l_ce, Var l_triplet, std::optional<Var> l_mc, double lambda_g, double lambda_mc);

}  // namespace motarfuse

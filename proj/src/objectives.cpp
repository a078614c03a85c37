#include "motarfuse/objectives.hpp"

#include <cmath>
#include <string>

#include "motarfuse/error.hpp"
#include "motarfuse/ops.hpp"

namespace motarfuse {

ClassifierParams make_classifier(ParameterSet& ps, std::size_t d_model, std::size_t classes, double init_std,
                                 Rng& rng) {
  if (classes == 0) throw ConfigError("classifier needs at least one class");
  ClassifierParams p;
  p.w = ps.add_normal("head.w", Shape{d_model, classes}, init_std, rng);
  p.b = ps.add_constant("head.b", Shape{classes}, 0.0);
  return p;
}

Var classify(Binder& b, const ClassifierParams& p, Var h) { return ops::linear(h, b(p.w), b(p.b)); }

Var triplet_loss(Var features, std::span<const int> labels, double margin) {
  const Tensor& f = features.value();
  const std::size_t n = f.rows(), d = f.cols();
  if (labels.size() != n) {
    throw ShapeError("triplet_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) +
                     " features");
  }
  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = f[i * d + c] - f[j * d + c];
        s += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(s);
    }

  struct Mined {
    std::size_t pos, neg;
    bool active;
  };
  std::vector<Mined> mined(n);
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    std::optional<std::size_t> pos, neg;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (!pos || dist[a * n + j] > dist[a * n + *pos]) pos = j;
      } else if (!neg || dist[a * n + j] < dist[a * n + *neg]) {
        neg = j;
      }
    }
    if (!pos) throw ContractError("triplet_loss: label " + std::to_string(labels[a]) + " has no positive in the batch");
    if (!neg) throw ContractError("triplet_loss: label " + std::to_string(labels[a]) + " has no negative in the batch");
    const double h = dist[a * n + *pos] - dist[a * n + *neg] + margin;
    mined[a] = Mined{*pos, *neg, h > 0.0};
    if (h > 0.0) total += h;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const int id = features.id;
  return features.tape->record(Tensor::scalar(total * inv_n), {features}, [id, mined, n, d, inv_n](Tape& t, int o) {
    const double g = t.grad(o)[0] * inv_n;
    const auto& f = t.value(id);
    auto& gf = t.grad(id);
    // d|x_a - x_j| / dx_a = (x_a - x_j) / |x_a - x_j|
    auto push = [&](std::size_t a, std::size_t j, double w) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = f[a * d + c] - f[j * d + c];
        s += diff * diff;
      }
      const double nrm = std::sqrt(s);
      if (nrm == 0.0) return;
      for (std::size_t c = 0; c < d; ++c) {
        const double u = w * (f[a * d + c] - f[j * d + c]) / nrm;
        gf[a * d + c] += u;
        gf[j * d + c] -= u;
      }
    };
    for (std::size_t a = 0; a < n; ++a) {
      if (!mined[a].active) continue;
      push(a, mined[a].pos, g);
      push(a, mined[a].neg, -g);
    }
  });
}

LossBreakdown total_loss(double l_ce, double l_triplet, double l_mc, double lambda_g, double lambda_mc) {
  if (lambda_g < 0.0 || lambda_mc < 0.0) throw ConfigError("total_loss: loss weights must be non-negative");
  if (!std::isfinite(l_ce) || !std::isfinite(l_triplet) || !std::isfinite(l_mc)) {
    throw ContractError("total_loss: non-finite loss component");
  }
  LossBreakdown out;
  out.l_ce = l_ce;
  out.l_triplet = l_triplet;
  out.l_mc = l_mc;
  out.lambda_g = lambda_g;
  out.lambda_mc = lambda_mc;
  out.l_g = l_ce + l_triplet;
  out.total = lambda_g * out.l_g + lambda_mc * l_mc;
  return out;
}

Var total_loss(Var l_ce, Var l_triplet, std::optional<Var> l_mc, double lambda_g, double lambda_mc) {
  if (lambda_g < 0.0 || lambda_mc < 0.0) throw ConfigError("total_loss: loss weights must be non-negative");
  Var total = ops::scale(ops::add(l_ce, l_triplet), lambda_g);
  if (l_mc) total = ops::add(total, ops::scale(*l_mc, lambda_mc));
  return total;
}

}  // namespace motarfuse

#pragma once

#include <span>
#include <vector>

#include "motarfuse/tape.hpp"

// Differentiable operations over Vars. Matrices are rank-2 [rows x cols];
// gains and biases are rank-1. The only broadcast is a row vector added to
// every row (bias-add).
namespace motarfuse::ops {

Var matmul(Var a, Var b);
Var transpose(Var a);
// x[n x in] * w[in x out] + bias[out]. An invalid bias Var means no bias.
Var linear(Var x, Var w, Var bias);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_row(Var x, Var row);

Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var reshape(Var x, Shape shape);

// Softmax along the last axis, max-subtracted.
Var softmax(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps);
// Exact form 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Var x);

Var sum(Var x);
Var mean(Var x);
Var mse(Var a, Var b);
// Mean over rows of -log softmax(logits)[label]. logits is [B x C] or [C].
Var cross_entropy_logits(Var logits, std::span<const int> labels);
// Each row divided by sqrt(|row|^2 + eps).
Var l2_normalize_rows(Var x, double eps = 1e-12);
// Copy with no gradient path back to x.
Var detach(Var x);

// Scaled dot-product attention split over `heads` column groups.
// q[nq x d], k[nk x d], v[nk x d] -> [nq x d]. When `weights` is non-null it
// receives the softmax weights as [heads x nq x nk].
Var attention(Var q, Var k, Var v, std::size_t heads, Tensor* weights = nullptr);

}  // namespace motarfuse::ops

#include "motarfuse/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "motarfuse/error.hpp"

namespace motarfuse::ops {

namespace {

void require_matrix(const Var& v, const char* op) {
  if (v.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(v.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// c[m x n] += a[m x k] * b[k x n]; four rows of c share each row of b.
void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* c0 = c + i * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    const double* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s0 = a0[p], s1 = a0[k + p], s2 = a0[2 * k + p], s3 = a0[3 * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = bp[j];
        c0[j] += s0 * v;
        c1[j] += s1 * v;
        c2[j] += s2 * v;
        c3[j] += s3 * v;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += s * bp[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
void gemm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

// c[k x n] += a[m x k]^T * b[m x n]; four rows of a and b per pass over c.
void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* b0 = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s0 = a0[p], s1 = a0[k + p], s2 = a0[2 * k + p], s3 = a0[3 * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        cp[j] += s0 * b0[j] + s1 * b0[n + j] + s2 * b0[2 * n + j] + s3 * b0[3 * n + j];
      }
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += s * bi[j];
    }
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;

}  // namespace

Var matmul(Var a, Var b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out(Shape{m, n}, 0.0);
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, int o) {
    const double* g = t.grad(o).data();
    if (t.requires_grad(ia)) gemm_nt(g, t.value(ib).data().data(), t.grad(ia).data(), m, n, k);
    if (t.requires_grad(ib)) gemm_tn(t.value(ia).data().data(), g, t.grad(ib).data(), m, k, n);
  });
}

Var transpose(Var a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.value().dim(0), c = a.value().dim(1);
  Tensor out(Shape{c, r});
  const auto& x = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, r, c](Tape& t, int o) {
    const auto& g = t.grad(o);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += g[j * r + i];
  });
}

Var linear(Var x, Var w, Var bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t n = x.value().dim(0), in = x.value().dim(1), out_dim = w.value().dim(1);
  if (w.value().dim(0) != in) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not fit weight " +
                     shape_string(w.shape()));
  }
  const bool has_bias = bias.valid();
  if (has_bias && bias.value().numel() != out_dim) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " does not fit weight " +
                     shape_string(w.shape()));
  }
  Tensor out(Shape{n, out_dim}, 0.0);
  if (has_bias) {
    const auto& b = bias.value();
    for (std::size_t i = 0; i < n; ++i) std::copy(b.data().begin(), b.data().end(), out.data().begin() + i * out_dim);
  }
  gemm_nn(x.value().data().data(), w.value().data().data(), out.data().data(), n, in, out_dim);
  const int ix = x.id, iw = w.id, ib = has_bias ? bias.id : -1;
  std::vector<Var> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return x.tape->record(std::move(out), inputs, [ix, iw, ib, n, in, out_dim](Tape& t, int o) {
    const double* g = t.grad(o).data();
    if (t.requires_grad(ix)) gemm_nt(g, t.value(iw).data().data(), t.grad(ix).data(), n, out_dim, in);
    if (t.requires_grad(iw)) gemm_tn(t.value(ix).data().data(), g, t.grad(iw).data(), n, in, out_dim);
    if (ib >= 0 && t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, int o) {
    const auto& g = t.grad(o);
    for (int id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto& gi = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= y[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, int o) {
    const auto& g = t.grad(o);
    if (t.requires_grad(ia)) {
      auto& gi = t.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gi = t.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= y[i];
  const int ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {a, b}, [ia, ib](Tape& t, int o) {
    const auto& g = t.grad(o);
    if (t.requires_grad(ia)) {
      auto& gi = t.grad(ia);
      const auto& y = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i];
    }
    if (t.requires_grad(ib)) {
      auto& gi = t.grad(ib);
      const auto& x = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * x[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  const int ia = a.id;
  return a.tape->record(std::move(out), {a}, [ia, s](Tape& t, int o) {
    const auto& g = t.grad(o);
    auto& gi = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += s * g[i];
  });
}

Var add_row(Var x, Var row) {
  const std::size_t c = x.cols();
  if (row.value().numel() != c) {
    throw ShapeError("add_row: row " + shape_string(row.shape()) + " does not fit " + shape_string(x.shape()));
  }
  Tensor out = x.value();
  const auto& r = row.value();
  const std::size_t n = out.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += r[j];
  const int ix = x.id, ir = row.id;
  return x.tape->record(std::move(out), {x, row}, [ix, ir, n, c](Tape& t, int o) {
    const auto& g = t.grad(o);
    if (t.requires_grad(ix)) {
      auto& gi = t.grad(ix);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
    if (t.requires_grad(ir)) {
      auto& gr = t.grad(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  std::vector<int> ids;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != c) {
      throw ShapeError("concat_rows: width mismatch " + shape_string(parts.front().shape()) + " vs " +
                       shape_string(p.shape()));
    }
    ids.push_back(p.id);
    offsets.push_back(total);
    total += p.value().numel();
  }
  Tensor out(Shape{total / c, c});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offsets[k]));
  }
  return parts.front().tape->record(std::move(out), parts, [ids, offsets](Tape& t, int o) {
    const auto& g = t.grad(o);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gi = t.grad(ids[k]);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[offsets[k] + i];
    }
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const std::size_t c = x.cols(), n = x.rows();
  if (count == 0 || begin + count > n) {
    throw ShapeError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_string(x.shape()));
  }
  const auto& v = x.value();
  Tensor out(Shape{count, c},
             std::vector<double>(v.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                                 v.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c)));
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, begin, c](Tape& t, int o) {
    const auto& g = t.grad(o);
    auto& gi = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gi[begin * c + i] += g[i];
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix](Tape& t, int o) {
    const auto& g = t.grad(o);
    auto& gi = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
  });
}

Var softmax(Var x) {
  Tensor out = x.value();
  const std::size_t c = out.cols(), n = out.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double* r = out.data().data() + i * c;
    const double mx = *std::max_element(r, r + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    for (std::size_t j = 0; j < c; ++j) r[j] /= s;
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, n, c](Tape& t, int o) {
    const auto& g = t.grad(o);
    const auto& y = t.value(o);
    auto& gi = t.grad(ix);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t d = x.cols(), n = x.rows();
  if (gain.value().numel() != d || bias.value().numel() != d) {
    throw ShapeError("layer_norm: gain/bias do not fit " + shape_string(x.shape()));
  }
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  auto xhat = std::make_shared<std::vector<double>>(xv.numel());
  auto rstd = std::make_shared<std::vector<double>>(n);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = xv.data().data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += r[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (r[j] - mu) * rs;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  const int ix = x.id, ig = gain.id, ib = bias.id;
  return x.tape->record(std::move(out), {x, gain, bias}, [ix, ig, ib, n, d, xhat, rstd](Tape& t, int o) {
    const auto& g = t.grad(o);
    const auto& gv = t.value(ig);
    if (t.requires_grad(ig)) {
      auto& gg = t.grad(ig);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    }
    if (t.requires_grad(ix)) {
      auto& gx = t.grad(ix);
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t i = 0; i < n; ++i) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g[i * d + j] * gv[j];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[i * d + j];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = g[i * d + j] * gv[j];
          gx[i * d + j] += (*rstd)[i] * (dh - mean_dh - (*xhat)[i * d + j] * mean_dh_h);
        }
      }
    }
  });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix](Tape& t, int o) {
    const auto& g = t.grad(o);
    const auto& xv = t.value(ix);
    auto& gi = t.grad(ix);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gi[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const int ix = x.id;
  return x.tape->record(Tensor::scalar(s), {x}, [ix](Tape& t, int o) {
    const double g = t.grad(o)[0];
    for (auto& v : t.grad(ix)) v += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().numel())); }

Var mse(Var a, Var b) {
  require_same_shape(a, b, "mse");
  const auto& av = a.value();
  const auto& bv = b.value();
  const double inv_n = 1.0 / static_cast<double>(av.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const int ia = a.id, ib = b.id;
  return a.tape->record(Tensor::scalar(s * inv_n), {a, b}, [ia, ib, inv_n](Tape& t, int o) {
    const double g = t.grad(o)[0];
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& gi = t.grad(ia);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += 2.0 * inv_n * g * (av[i] - bv[i]);
    }
    if (t.requires_grad(ib)) {
      auto& gi = t.grad(ib);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] -= 2.0 * inv_n * g * (av[i] - bv[i]);
    }
  });
}

Var cross_entropy_logits(Var logits, std::span<const int> labels) {
  const auto& z = logits.value();
  const std::size_t c = z.cols(), b = z.rows();
  if (labels.size() != b) {
    throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(z.shape()));
  }
  auto probs = std::make_shared<std::vector<double>>(z.numel());
  std::vector<int> lab(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (lab[i] < 0 || static_cast<std::size_t>(lab[i]) >= c) {
      throw ContractError("cross_entropy_logits: label " + std::to_string(lab[i]) + " outside [0, " +
                          std::to_string(c) + ")");
    }
    const double* r = z.data().data() + i * c;
    const double mx = *std::max_element(r, r + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(r[j] - mx);
    const double lse = mx + std::log(s);
    total += lse - r[lab[i]];
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(r[j] - lse);
  }
  const double inv_b = 1.0 / static_cast<double>(b);
  const int iz = logits.id;
  return logits.tape->record(Tensor::scalar(total * inv_b), {logits}, [iz, probs, lab, b, c, inv_b](Tape& t, int o) {
    const double g = t.grad(o)[0] * inv_b;
    auto& gi = t.grad(iz);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += g * (*probs)[i * c + j];
      gi[i * c + static_cast<std::size_t>(lab[i])] -= g;
    }
  });
}

Var l2_normalize_rows(Var x, double eps) {
  Tensor out = x.value();
  const std::size_t c = out.cols(), n = out.rows();
  auto norms = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += out[i * c + j] * out[i * c + j];
    const double nrm = std::sqrt(s + eps);
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= nrm;
  }
  const int ix = x.id;
  return x.tape->record(std::move(out), {x}, [ix, norms, n, c](Tape& t, int o) {
    const auto& g = t.grad(o);
    const auto& y = t.value(o);
    auto& gi = t.grad(ix);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * g[i * c + j];
      for (std::size_t j = 0; j < c; ++j) gi[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / (*norms)[i];
    }
  });
}

Var detach(Var x) { return x.tape->constant(x.value()); }

Var attention(Var q, Var k, Var v, std::size_t heads, Tensor* weights) {
  require_matrix(q, "attention");
  require_matrix(k, "attention");
  require_matrix(v, "attention");
  const std::size_t nq = q.rows(), nk = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != nk) {
    throw ShapeError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                     shape_string(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* qv = q.value().data().data();
  const double* kv = k.value().data().data();
  const double* vv = v.value().data().data();
  auto probs = std::make_shared<std::vector<double>>(heads * nq * nk);
  Tensor out(Shape{nq, d}, 0.0);
  double* ov = out.data().data();
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < nq; ++i) {
      double* a = probs->data() + (h * nq + i) * nk;
      const double* qi = qv + i * d + off;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < nk; ++j) {
        const double* kj = kv + j * d + off;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        a[j] = s * sc;
        mx = std::max(mx, a[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        a[j] = std::exp(a[j] - mx);
        z += a[j];
      }
      double* oi = ov + i * d + off;
      for (std::size_t j = 0; j < nk; ++j) {
        a[j] /= z;
        const double* vj = vv + j * d + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += a[j] * vj[c];
      }
    }
  }
  if (weights) *weights = Tensor(Shape{heads, nq, nk}, *probs);
  const int iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(std::move(out), {q, k, v}, [iq, ik, iv, heads, nq, nk, d, dh, sc, probs](Tape& t, int o) {
    const double* g = t.grad(o).data();
    const double* qv = t.value(iq).data().data();
    const double* kv = t.value(ik).data().data();
    const double* vv = t.value(iv).data().data();
    double* gq = t.requires_grad(iq) ? t.grad(iq).data() : nullptr;
    double* gk = t.requires_grad(ik) ? t.grad(ik).data() : nullptr;
    double* gv = t.requires_grad(iv) ? t.grad(iv).data() : nullptr;
    std::vector<double> ds(nk);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < nq; ++i) {
        const double* a = probs->data() + (h * nq + i) * nk;
        const double* gi = g + i * d + off;
        double dot = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          const double* vj = vv + j * d + off;
          double da = 0.0;
          for (std::size_t c = 0; c < dh; ++c) da += gi[c] * vj[c];
          ds[j] = da;
          dot += da * a[j];
          if (gv) {
            double* gvj = gv + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) gvj[c] += a[j] * gi[c];
          }
        }
        const double* qi = qv + i * d + off;
        for (std::size_t j = 0; j < nk; ++j) {
          const double s = a[j] * (ds[j] - dot) * sc;
          if (s == 0.0) continue;
          const double* kj = kv + j * d + off;
          if (gq) {
            double* gqi = gq + i * d + off;
            for (std::size_t c = 0; c < dh; ++c) gqi[c] += s * kj[c];
          }
          if (gk) {
            double* gkj = gk + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) gkj[c] += s * qi[c];
          }
        }
      }
    }
  });
}

}  // namespace motarfuse::ops

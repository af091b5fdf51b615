#include "bga/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bga {

using detail::make_result;
using detail::Node;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Row count / width of a tensor viewed as a matrix (vectors are one row).
std::size_t as_rows(const Tensor& t) { return t.rank() >= 2 ? t.shape()[0] : 1; }
std::size_t as_cols(const Tensor& t) { return t.shape().back(); }

Node& in(Node& out, std::size_t i) { return *out.inputs[i]; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return make_result({m, n}, std::move(c), {a, b}, "matmul", [m, k, n](Node& out) {
    Node& a = in(out, 0);
    Node& b = in(out, 1);
    const auto& g = out.grad;
    if (a.requires_grad) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b.value[p * n + j];
          ga[i * k + p] += s;
        }
      }
    }
    if (b.requires_grad) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = a.value[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: widths disagree for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> c(m * n);
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += av[i * k + p] * bv[j * k + p];
      c[i * n + j] = s;
    }
  }
  return make_result({m, n}, std::move(c), {a, b}, "matmul_nt", [m, k, n](Node& out) {
    Node& a = in(out, 0);
    Node& b = in(out, 1);
    const auto& g = out.grad;
    if (a.requires_grad) {
      auto& ga = a.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * b.value[j * k + p];
        }
    }
    if (b.requires_grad) {
      auto& gb = b.grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * a.value[i * k + p];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> t(m * n);
  auto av = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = av[i * n + j];
  return make_result({n, m}, std::move(t), {a}, "transpose", [m, n](Node& out) {
    auto& ga = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += out.grad[j * m + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> v(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(v), {x}, "reshape", [](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] + bv[i];
  return make_result(a.shape(), std::move(c), {a, b}, "add", [](Node& out) {
    for (std::size_t k = 0; k < 2; ++k) {
      Node& x = in(out, k);
      if (!x.requires_grad) continue;
      auto& gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += out.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] - bv[i];
  return make_result(a.shape(), std::move(c), {a, b}, "sub", [](Node& out) {
    Node& a = in(out, 0);
    Node& b = in(out, 1);
    if (a.requires_grad) {
      auto& g = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (b.requires_grad) {
      auto& g = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> c(av.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(c), {a, b}, "mul", [](Node& out) {
    Node& a = in(out, 0);
    Node& b = in(out, 1);
    if (a.requires_grad) {
      auto& g = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      auto& g = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * a.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor;
  return make_result(x.shape(), std::move(y), {x}, "scale", [factor](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * factor;
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& row) {
  require_rank2(x, "add_rowwise");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (row.numel() != d || as_rows(row) != 1) {
    throw DimensionError("add_rowwise: row " + shape_str(row.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  auto xv = x.values();
  auto rv = row.values();
  std::vector<double> y(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = xv[i * d + j] + rv[j];
  return make_result(x.shape(), std::move(y), {x, row}, "add_rowwise", [n, d](Node& out) {
    Node& x = in(out, 0);
    Node& r = in(out, 1);
    if (x.requires_grad) {
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i];
    }
    if (r.requires_grad) {
      auto& g = r.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += out.grad[i * d + j];
    }
  });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  return make_result(x.shape(), std::move(y), {x}, "gelu", [](Node& out) {
    Node& x = in(out, 0);
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = x.value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += out.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor relu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_result(x.shape(), std::move(y), {x}, "relu", [](Node& out) {
    Node& x = in(out, 0);
    auto& g = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.value[i] > 0.0) g[i] += out.grad[i];
  });
}

namespace {

// Softmax over strided slices: `outer` blocks of `len` entries spaced `inner`.
std::vector<double> softmax_strided(std::span<const double> z, std::size_t outer, std::size_t len,
                                    std::size_t inner) {
  std::vector<double> y(z.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * len * inner + s;
      double mx = -kInf;
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, z[base + i * inner]);
      if (mx == -kInf) throw DimensionError("softmax: every entry along the axis is -inf");
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double v = z[base + i * inner];
        const double e = v == -kInf ? 0.0 : std::exp(v - mx);
        y[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) y[base + i * inner] /= total;
    }
  }
  return y;
}

void softmax_backward(const std::vector<double>& y, const std::vector<double>& gy,
                      std::vector<double>& gx, std::size_t outer, std::size_t len,
                      std::size_t inner, double factor = 1.0) {
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * len * inner + s;
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += y[base + i * inner] * gy[base + i * inner];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = base + i * inner;
        gx[k] += factor * y[k] * (gy[k] - dot);
      }
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  for (double v : x.values()) {
    if (std::isnan(v) || v == kInf) throw NumericError("softmax: input holds NaN or +inf");
  }
  auto y = softmax_strided(x.values(), outer, len, inner);
  return make_result(shape, y, {x}, "softmax", [y, outer, len, inner](Node& out) {
    softmax_backward(y, out.grad, in(out, 0).grad_buffer(), outer, len, inner);
  });
}

Tensor softmax_masked_rows(const Tensor& x, const Tensor& mask) {
  require_same_shape(x, mask, "softmax_masked_rows");
  const std::size_t n = as_rows(x), m = as_cols(x);
  auto xv = x.values();
  auto mv = mask.values();
  std::vector<double> z(xv.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = xv[i] + mv[i];
  for (double v : z) {
    if (std::isnan(v) || v == kInf) throw NumericError("softmax_masked_rows: NaN or +inf logits");
  }
  auto y = softmax_strided(z, n, m, 1);
  return make_result(x.shape(), y, {x}, "softmax_masked_rows", [y, n, m](Node& out) {
    softmax_backward(y, out.grad, in(out, 0).grad_buffer(), n, m, 1);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = as_rows(x), d = as_cols(x);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<double> xhat(n * d), rstd(n), y(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * rstd[i];
      y[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(y), {x, gain, bias}, "layer_norm",
                     [xhat = std::move(xhat), rstd = std::move(rstd), n, d](Node& out) {
                       Node& x = in(out, 0);
                       Node& gain = in(out, 1);
                       Node& bias = in(out, 2);
                       const auto& g = out.grad;
                       if (gain.requires_grad) {
                         auto& gg = gain.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * xhat[i * d + j];
                       }
                       if (bias.requires_grad) {
                         auto& gb = bias.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
                       }
                       if (x.requires_grad) {
                         auto& gx = x.grad_buffer();
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t i = 0; i < n; ++i) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dxh = g[i * d + j] * gain.value[j];
                             m1 += dxh;
                             m2 += dxh * xhat[i * d + j];
                           }
                           m1 *= inv_d;
                           m2 *= inv_d;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dxh = g[i * d + j] * gain.value[j];
                             gx[i * d + j] += rstd[i] * (dxh - m1 - xhat[i * d + j] * m2);
                           }
                         }
                       }
                     });
}

namespace {

// Neumaier-compensated summation.
double accurate_sum(std::span<const double> v) {
  double s = 0.0, c = 0.0;
  for (double x : v) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

}  // namespace

Tensor sum(const Tensor& x) {
  const double s = accurate_sum(x.values());
  return make_result({1}, {s}, {x}, "sum", [](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (auto& v : g) v += out.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.numel());
  const double s = accurate_sum(x.values());
  return make_result({1}, {s * inv}, {x}, "mean", [inv](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (auto& v : g) v += out.grad[0] * inv;
  });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) + " weights for " +
                         shape_str(x.shape()));
  }
  std::vector<double> w(weights.begin(), weights.end());
  double s = 0.0;
  auto xv = x.values();
  for (std::size_t i = 0; i < w.size(); ++i) s += xv[i] * w[i];
  return make_result({1}, {s}, {x}, "weighted_sum", [w = std::move(w)](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[0] * w[i];
  });
}

Tensor element(const Tensor& x, std::size_t i) {
  if (i >= x.numel()) {
    throw DimensionError("element: index " + std::to_string(i) + " outside " + shape_str(x.shape()));
  }
  return make_result({1}, {x.values()[i]}, {x}, "element", [i](Node& out) {
    in(out, 0).grad_buffer()[i] += out.grad[0];
  });
}

namespace {

void check_normalized(std::span<const double> v, std::size_t rows, std::size_t cols,
                      const char* op) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double x = v[r * cols + j];
      if (!(x >= 0.0) || !std::isfinite(x)) {
        throw std::invalid_argument(std::string(op) + ": entries must be finite probabilities");
      }
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument(std::string(op) + ": input does not sum to 1 (sum " +
                                  std::to_string(s) + ")");
    }
  }
}

// Shared by the vector and row-wise forms. Writes one KL value per row.
Tensor kl_impl(const Tensor& p, const Tensor& q, std::size_t rows, std::size_t cols, Shape shape,
               const char* op) {
  auto pv = p.values();
  auto qv = q.values();
  check_normalized(pv, rows, cols, op);
  check_normalized(qv, rows, cols, op);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t k = r * cols + j;
      if (pv[k] == 0.0) continue;
      s += pv[k] * (std::log(std::max(pv[k], kProbabilityFloor)) -
                    std::log(std::max(qv[k], kProbabilityFloor)));
    }
    out[r] = s;
  }
  return make_result(std::move(shape), std::move(out), {p, q}, op, [rows, cols](Node& o) {
    Node& p = in(o, 0);
    Node& q = in(o, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const double g = o.grad[r];
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t k = r * cols + j;
        const double pc = std::max(p.value[k], kProbabilityFloor);
        const double qc = std::max(q.value[k], kProbabilityFloor);
        if (p.requires_grad) {
          double d = std::log(pc) - std::log(qc);
          if (p.value[k] > kProbabilityFloor) d += 1.0;
          p.grad_buffer()[k] += g * d;
        }
        if (q.requires_grad && q.value[k] > kProbabilityFloor) {
          q.grad_buffer()[k] -= g * p.value[k] / qc;
        }
      }
    }
  });
}

}  // namespace

Tensor kl_divergence(const Tensor& p, const Tensor& q) {
  if (p.numel() != q.numel()) {
    throw DimensionError("kl_divergence: length mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
  }
  return kl_impl(p, q, 1, p.numel(), {1}, "kl_divergence");
}

Tensor kl_divergence_rows(const Tensor& p, const Tensor& q) {
  require_same_shape(p, q, "kl_divergence_rows");
  const std::size_t n = as_rows(p);
  return kl_impl(p, q, n, as_cols(p), {n}, "kl_divergence_rows");
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t d = as_cols(parts.front());
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  std::vector<double> y;
  for (const auto& t : parts) {
    if (as_cols(t) != d) {
      throw DimensionError("concat_rows: width mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(t.shape()));
    }
    offsets.push_back(y.size());
    auto v = t.values();
    y.insert(y.end(), v.begin(), v.end());
    n += as_rows(t);
  }
  return make_result({n, d}, std::move(y), parts, "concat_rows", [offsets](Node& out) {
    for (std::size_t k = 0; k < out.inputs.size(); ++k) {
      Node& x = *out.inputs[k];
      if (!x.requires_grad) continue;
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[offsets[k] + i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t n = as_rows(parts.front());
  std::vector<std::size_t> widths, offsets;
  std::size_t d = 0;
  for (const auto& t : parts) {
    if (as_rows(t) != n) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(t.shape()));
    }
    offsets.push_back(d);
    widths.push_back(as_cols(t));
    d += as_cols(t);
  }
  std::vector<double> y(n * d);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) y[i * d + offsets[k] + j] = v[i * widths[k] + j];
  }
  return make_result({n, d}, std::move(y), parts, "concat_cols",
                     [widths, offsets, n, d](Node& out) {
                       for (std::size_t k = 0; k < out.inputs.size(); ++k) {
                         Node& x = *out.inputs[k];
                         if (!x.requires_grad) continue;
                         auto& g = x.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < widths[k]; ++j)
                             g[i * widths[k] + j] += out.grad[i * d + offsets[k] + j];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = as_rows(x), d = as_cols(x);
  if (begin >= end || end > n) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  auto v = x.values();
  std::vector<double> y(v.begin() + begin * d, v.begin() + end * d);
  return make_result({end - begin, d}, std::move(y), {x}, "slice_rows", [begin, d](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < out.grad.size(); ++i) g[begin * d + i] += out.grad[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = as_rows(x), d = as_cols(x);
  if (begin >= end || end > d) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  auto v = x.values();
  std::vector<double> y(n * w);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) y[i * w + j] = v[i * d + begin + j];
  return make_result({n, w}, std::move(y), {x}, "slice_cols", [begin, n, w, d](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * d + begin + j] += out.grad[i * w + j];
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank2(table, "gather_rows");
  const std::size_t rows = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  auto v = table.values();
  std::vector<double> y(idx.size() * d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) {
      throw DimensionError("gather_rows: id " + std::to_string(idx[i]) + " outside table of " +
                           std::to_string(rows) + " rows");
    }
    std::copy_n(v.begin() + idx[i] * d, d, y.begin() + i * d);
  }
  const std::size_t n = idx.size();
  return make_result({n, d}, std::move(y), {table}, "gather_rows", [idx, d](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += out.grad[i * d + j];
  });
}

Tensor repeat_rows(const Tensor& row, std::size_t n) {
  if (as_rows(row) != 1) throw DimensionError("repeat_rows: expects a single row");
  if (n == 0) throw DimensionError("repeat_rows: zero repetitions");
  const std::size_t d = as_cols(row);
  auto v = row.values();
  std::vector<double> y(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy(v.begin(), v.end(), y.begin() + i * d);
  return make_result({n, d}, std::move(y), {row}, "repeat_rows", [n, d](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[j] += out.grad[i * d + j];
  });
}

Tensor mean_rows(const Tensor& x) {
  const std::size_t n = as_rows(x), d = as_cols(x);
  auto v = x.values();
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) y[j] += v[i * d + j];
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& e : y) e *= inv;
  return make_result({1, d}, std::move(y), {x}, "mean_rows", [n, d, inv](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += out.grad[j] * inv;
  });
}

Tensor masked_mean_rows(const Tensor& x, const Tensor& m) {
  const std::size_t n = as_rows(x), d = as_cols(x);
  if (m.numel() != n) {
    throw DimensionError("masked_mean_rows: mask of " + std::to_string(m.numel()) +
                         " entries for " + std::to_string(n) + " rows");
  }
  auto xv = x.values();
  auto mv = m.values();
  double count = 0.0;
  for (double e : mv) count += e;
  const double denom = std::max(count, 1.0);
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (mv[i] == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) y[j] += mv[i] * xv[i * d + j];
  }
  for (auto& e : y) e /= denom;
  const bool count_active = count >= 1.0;
  return make_result({1, d}, y, {x, m}, "masked_mean_rows",
                     [y, n, d, denom, count_active](Node& out) {
                       Node& x = in(out, 0);
                       Node& m = in(out, 1);
                       if (x.requires_grad) {
                         auto& g = x.grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) {
                           const double w = m.value[i] / denom;
                           if (w == 0.0) continue;
                           for (std::size_t j = 0; j < d; ++j) g[i * d + j] += out.grad[j] * w;
                         }
                       }
                       if (m.requires_grad) {
                         auto& g = m.grad_buffer();
                         double shared = 0.0;
                         if (count_active) {
                           for (std::size_t j = 0; j < d; ++j) shared += out.grad[j] * y[j];
                         }
                         for (std::size_t i = 0; i < n; ++i) {
                           double s = 0.0;
                           for (std::size_t j = 0; j < d; ++j) s += out.grad[j] * x.value[i * d + j];
                           g[i] += (s - shared) / denom;
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> keep(x.numel());
  for (auto& k : keep) k = rng.uniform() < rate ? 0.0 : keep_scale;
  auto v = x.values();
  std::vector<double> y(v.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = v[i] * keep[i];
  return make_result(x.shape(), std::move(y), {x}, "dropout", [keep = std::move(keep)](Node& out) {
    auto& g = in(out, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * keep[i];
  });
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, Rng& rng, bool hard) {
  if (!(temperature > 0.0)) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  require_rank2(logits, "gumbel_softmax");
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  auto lv = logits.values();
  std::vector<double> z(n * k);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double gumbel = -std::log(-std::log(rng.uniform()));
    z[i] = (lv[i] + gumbel) / temperature;
  }
  auto soft = softmax_strided(z, n, k, 1);
  std::vector<double> y = soft;
  if (hard) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (soft[i * k + j] > soft[i * k + best]) best = j;
      for (std::size_t j = 0; j < k; ++j) y[i * k + j] = j == best ? 1.0 : 0.0;
    }
  }
  const double inv_t = 1.0 / temperature;
  return make_result(logits.shape(), std::move(y), {logits}, "gumbel_softmax",
                     [soft = std::move(soft), n, k, inv_t](Node& out) {
                       softmax_backward(soft, out.grad, in(out, 0).grad_buffer(), n, k, 1, inv_t);
                     });
}

}  // namespace bga

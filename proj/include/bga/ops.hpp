#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bga/rng.hpp"
#include "bga/tensor.hpp"

// Differentiable operations. Matrices are rank-2 tensors; "rows" ops treat a
// rank-1 tensor of length n as a 1 x n matrix.
namespace bga {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Same values in row-major order under a new shape.
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Adds a length-d vector (or 1 x d matrix) to every row of an n x d matrix.
Tensor add_rowwise(const Tensor& x, const Tensor& row);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

/// Softmax along `axis`. Entries equal to -inf receive exactly zero mass; an
/// axis slice made only of -inf entries is a DimensionError.
Tensor softmax(const Tensor& x, std::size_t axis);
/// Row softmax of x + mask, where mask is a constant n x m matrix of 0 / -inf.
Tensor softmax_masked_rows(const Tensor& x, const Tensor& mask);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// sum_i x_i * w_i for a constant weight list.
Tensor weighted_sum(const Tensor& x, std::span<const double> weights);
/// Scalar entry at flat index i.
Tensor element(const Tensor& x, std::size_t i);

inline constexpr double kProbabilityFloor = 1e-12;

/// D_KL(p || q) for two probability vectors; entries are clamped from below at
/// kProbabilityFloor before the logarithm.
Tensor kl_divergence(const Tensor& p, const Tensor& q);
/// Row-wise D_KL(p_i || q_i) of two row-stochastic n x d matrices -> length n.
Tensor kl_divergence_rows(const Tensor& p, const Tensor& q);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
Tensor repeat_rows(const Tensor& row, std::size_t n);
/// Column mean over rows -> 1 x d.
Tensor mean_rows(const Tensor& x);
/// (sum_i m_i x_i) / max(sum_i m_i, 1) -> 1 x d. m is differentiable.
Tensor masked_mean_rows(const Tensor& x, const Tensor& m);

Tensor dropout(const Tensor& x, double rate, Rng& rng);

/// Gumbel-Softmax over the rows of an n x 2 logit matrix. In hard mode the
/// forward value is the one-hot row argmax and the gradient is that of the
/// soft sample (straight-through).
Tensor gumbel_softmax(const Tensor& logits, double temperature, Rng& rng, bool hard);

}  // namespace bga

#pragma once

#include <vector>

#include "bga/ops.hpp"
#include "bga/rng.hpp"
#include "bga/tensor.hpp"

namespace bga::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& e : w) e = rng.normal();
  return w;
}

/// Generic scalar projection of a tensor; avoids the cancellations that make
/// plain sums degenerate (e.g. sum of a layer-normalized row).
inline Tensor project(const Tensor& x, const std::vector<double>& w) { return weighted_sum(x, w); }

inline std::vector<double> probabilities(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& e : p) s += (e = rng.uniform() + 0.05);
  for (auto& e : p) e /= s;
  return p;
}

}  // namespace bga::testing

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "bga/tensor.hpp"

namespace bga {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), coordinate by
/// coordinate. The error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
/// `f` must be deterministic. Throws NumericError at non-finite probes.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double eps = 1e-6);

/// Same comparison for a closure over parameter tensors, perturbing the leaves
/// in place. With `max_coords_per_tensor` > 0 only an evenly spaced subset of
/// each tensor's coordinates is probed.
GradCheckResult check_parameter_gradients(const std::function<Tensor()>& loss,
                                          std::vector<Tensor> params, double eps = 1e-6,
                                          std::size_t max_coords_per_tensor = 0);

}  // namespace bga

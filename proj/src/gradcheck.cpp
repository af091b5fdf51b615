#include "bga/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bga {

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw std::invalid_argument("finite difference eps must be in (0, 1e-3]");
}

double probe(const std::function<Tensor()>& loss) {
  const double v = loss().item();
  if (!std::isfinite(v)) throw NumericError("function is not finite at a probe point");
  return v;
}

double rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                               double eps) {
  Tensor leaf(x.shape(), x.to_vector(), true);
  return check_parameter_gradients([&] { return f(leaf); }, {leaf}, eps).max_rel_error;
}

GradCheckResult check_parameter_gradients(const std::function<Tensor()>& loss,
                                          std::vector<Tensor> params, double eps,
                                          std::size_t max_coords_per_tensor) {
  check_eps(eps);
  for (auto& p : params) {
    for (double v : p.values()) {
      if (!std::isfinite(v)) throw NumericError("probe point holds a non-finite coordinate");
    }
    p.zero_grad();
  }
  Tensor out = loss();
  if (!std::isfinite(out.item())) throw NumericError("function is not finite at the base point");
  backward(out);

  GradCheckResult result;
  for (auto& p : params) {
    const std::size_t n = p.numel();
    std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(n, 0.0);
    std::size_t stride = 1;
    if (max_coords_per_tensor > 0 && n > max_coords_per_tensor) {
      stride = (n + max_coords_per_tensor - 1) / max_coords_per_tensor;
    }
    auto values = p.values_mut();
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      const double hi = saved + eps;
      const double lo = saved - eps;
      values[i] = hi;
      const double up = probe(loss);
      values[i] = lo;
      const double down = probe(loss);
      values[i] = saved;
      // Divide by the step actually taken, not the nominal 2 * eps.
      const double numeric = (up - down) / (hi - lo);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[i], numeric));
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace bga

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bga {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool leaf_op = false;

  bool passed() const { return max_rel_error <= tolerance; }
};

/// Finite-difference comparison for every differentiable op (tolerance 1e-5),
/// the network blocks, the CRF and the tiny end-to-end model (1e-4).
std::vector<GradCheckEntry> run_gradient_suite(std::uint64_t seed = 2024);

}  // namespace bga

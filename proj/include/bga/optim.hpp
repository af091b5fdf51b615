#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "bga/nn.hpp"

namespace bga {

struct AdamWConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 1;
};

/// Steps of linear warmup for a ratio of the total step count (at least 1).
std::size_t warmup_steps_for(double ratio, std::size_t total_steps);

/// Decoupled weight decay Adam. Parameters for which `decays` returns false
/// (biases, norms, embeddings by default) skip the decay term.
class AdamW {
 public:
  AdamW(nn::ParamList params, AdamWConfig cfg,
        std::function<bool(const std::string&)> decays = default_decay_rule);

  /// lr * (s + 1) / warmup for s < warmup, lr afterwards.
  double learning_rate(std::size_t step) const;

  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();
  std::size_t steps_taken() const { return step_; }
  const nn::ParamList& params() const { return params_; }

  static bool default_decay_rule(const std::string& name);

 private:
  nn::ParamList params_;
  AdamWConfig cfg_;
  std::vector<bool> decay_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace bga

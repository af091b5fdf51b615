#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bga/nn.hpp"

namespace bga {

/// Two-layer perceptron with a GELU between the layers.
struct Mlp {
  nn::Linear hidden;
  nn::Linear out;

  static Mlp init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, nn::ParamList& out_params) const;
};

/// Context sampler parameters for one modality in one layer.
struct ScsParams {
  Mlp local;   // d -> d
  Mlp global;  // d -> d
  Mlp decide;  // 2d -> 2, channel 0 = keep, channel 1 = drop

  static ScsParams init(std::size_t d, Rng& rng);
  void collect(const std::string& prefix, nn::ParamList& out) const;
};

/// (sum_i m_i x_i) / max(sum_i m_i, 1) as a 1 x d row.
Tensor masked_gap(const Tensor& x, const Tensor& m);

struct ScsOutput {
  Tensor keep_probs;  // n
  /// Decision times previous mask, length n. In training the decision is a
  /// hard Gumbel sample with straight-through gradients; in evaluation it is
  /// the argmax and carries no gradient.
  Tensor mask;
};

/// Decides which rows to keep. `prev_mask` is the previous layer's mask (all
/// ones for the first layer); the result never keeps a row prev_mask drops.
ScsOutput scs_forward(const Tensor& features, const Tensor& prev_mask, const ScsParams& params,
                      double temperature, Rng* rng, bool training);

/// Hard 0/1 values of a mask tensor.
std::vector<double> mask_values(const Tensor& mask);

}  // namespace bga

#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

#include "bga/nn.hpp"

namespace bga {

/// Raised when a generation mask keeps no source row.
class EmptyContentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Text-to-visual and visual-to-text generators, shared by every layer.
struct GeneratorParams {
  nn::DecoderBlockParams t2v;
  nn::DecoderBlockParams v2t;
  Tensor visual_query;   // N_v x d
  Tensor textual_query;  // max_len x d, truncated per sentence

  static GeneratorParams init(std::size_t d, std::size_t patches, std::size_t max_len, Rng& rng);
  void collect(const std::string& prefix, nn::ParamList& out) const;
};

/// n_queries x n_src matrix, 0 where m_j = 1 and -inf where m_j = 0.
/// Throws EmptyContentError when m keeps nothing.
Tensor build_attention_mask(std::span<const double> m, std::size_t n_queries);

/// Decoder block with `queries` attending to `source` rows kept by m.
Tensor generate(const nn::DecoderBlockParams& generator, const Tensor& source, const Tensor& queries,
                std::span<const double> m, const nn::AttentionConfig& cfg,
                const nn::ForwardContext& ctx = {});

/// sum_i KL(softmax(a_i) || softmax(b_i)) * m_i; m may carry gradients.
Tensor feature_kl(const Tensor& a, const Tensor& b, const Tensor& m);

struct GenerationOutput {
  Tensor v_hat;  // N_v x d, always produced
  Tensor t_hat;  // N_t x d, only when the pair has an image
  Tensor v_bar;
  Tensor t_bar;
  Tensor recon_loss;  // scalar, 0 for image-missing or degenerate pairs
  Tensor cycle_loss;
  bool degenerate = false;  // a mask kept nothing; losses forced to 0
};

/// Both generation directions plus reconstruction and cycle losses for one
/// layer. `visual` and `m_v` are ignored when has_image is false; `compute_losses`
/// false skips everything except V-hat.
GenerationOutput forward_generation(const Tensor& text, const Tensor& visual, const Tensor& m_t,
                                    const Tensor& m_v, const GeneratorParams& params,
                                    const nn::AttentionConfig& cfg, bool has_image,
                                    const nn::ForwardContext& ctx = {}, bool compute_losses = true);

}  // namespace bga

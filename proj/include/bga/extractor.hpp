#pragma once

#include <optional>
#include <vector>

#include "bga/mcg.hpp"
#include "bga/nn.hpp"
#include "bga/scs.hpp"

namespace bga {

/// Attention + feed-forward block whose keys and values are the primary rows
/// followed by the generated rows of the other modality.
using ExtractorParams = nn::EncoderLayerParams;

/// Output has primary's shape. An undefined `generated_other` means no rows.
Tensor hybrid_extract(const Tensor& primary, const Tensor& generated_other, const ExtractorParams& params,
                      const nn::AttentionConfig& cfg, const nn::ForwardContext& ctx = {},
                      nn::AttentionTrace* trace = nullptr);

/// Per-layer parameters: one sampler and one extractor per modality.
struct BgaLayerParams {
  ScsParams scs_text;
  ScsParams scs_visual;
  ExtractorParams extract_text;
  ExtractorParams extract_visual;

  static BgaLayerParams init(std::size_t d, Rng& rng);
  void collect(const std::string& prefix, nn::ParamList& out) const;
};

struct BgaLayerInput {
  Tensor text;         // N_t x d
  Tensor visual;       // N_v x d; undefined on the text-only path
  Tensor prev_mask_t;  // N_t
  Tensor prev_mask_v;  // N_v; ignored on the text-only path
  /// 1 at word rows, 0 at [CLS]/[SEP]; these rows never enter generation.
  std::vector<double> content_t;
  bool has_image = false;
};

struct BgaLayerResult {
  Tensor text;
  Tensor visual;  // undefined unless the visual branch ran
  Tensor mask_t;
  Tensor mask_v;
  GenerationOutput generation;
};

struct SamplerSettings {
  double temperature = 1.0;
  Rng* rng = nullptr;
};

/// One BGA layer. The visual branch (visual SCS, T-hat, losses, V^{l+1}) runs
/// only when the input has an image and `visual` is defined.
BgaLayerResult bga_layer(const BgaLayerInput& in, const BgaLayerParams& params, const GeneratorParams& generator,
                         const nn::AttentionConfig& cfg, const nn::ForwardContext& ctx,
                         const SamplerSettings& sampler);

}  // namespace bga

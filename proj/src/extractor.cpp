#include "bga/extractor.hpp"

namespace bga {

Tensor hybrid_extract(const Tensor& primary, const Tensor& generated_other, const ExtractorParams& params,
                      const nn::AttentionConfig& cfg, const nn::ForwardContext& ctx, nn::AttentionTrace* trace) {
  const Tensor kv = generated_other.defined() ? concat_rows({primary, generated_other}) : primary;
  return nn::attend_and_feed(primary, kv, std::nullopt, params, cfg, ctx, trace);
}

BgaLayerParams BgaLayerParams::init(std::size_t d, Rng& rng) {
  BgaLayerParams p;
  p.scs_text = ScsParams::init(d, rng);
  p.scs_visual = ScsParams::init(d, rng);
  p.extract_text = nn::EncoderLayerParams::init(d, rng);
  p.extract_visual = nn::EncoderLayerParams::init(d, rng);
  return p;
}

void BgaLayerParams::collect(const std::string& prefix, nn::ParamList& out) const {
  scs_text.collect(prefix + ".scs_text", out);
  scs_visual.collect(prefix + ".scs_visual", out);
  extract_text.collect(prefix + ".extract_text", out);
  extract_visual.collect(prefix + ".extract_visual", out);
}

BgaLayerResult bga_layer(const BgaLayerInput& in, const BgaLayerParams& params, const GeneratorParams& generator,
                         const nn::AttentionConfig& cfg, const nn::ForwardContext& ctx,
                         const SamplerSettings& sampler) {
  const std::size_t n_t = in.text.rows();
  if (in.content_t.size() != n_t) {
    throw DimensionError("bga_layer: content mask of " + std::to_string(in.content_t.size()) + " entries for " +
                         std::to_string(n_t) + " text rows");
  }
  const bool visual_branch = in.has_image && in.visual.defined();

  BgaLayerResult out;
  auto scs_t = scs_forward(in.text, in.prev_mask_t, params.scs_text, sampler.temperature, sampler.rng, ctx.training);
  out.mask_t = mul(scs_t.mask, Tensor({n_t}, in.content_t));
  if (visual_branch) {
    auto scs_v =
        scs_forward(in.visual, in.prev_mask_v, params.scs_visual, sampler.temperature, sampler.rng, ctx.training);
    out.mask_v = scs_v.mask;
  }
  out.generation = forward_generation(in.text, in.visual, out.mask_t, out.mask_v, generator, cfg, visual_branch,
                                      ctx, ctx.training || visual_branch);
  out.text = hybrid_extract(in.text, out.generation.v_hat, params.extract_text, cfg, ctx);
  if (visual_branch) out.visual = hybrid_extract(in.visual, out.generation.t_hat, params.extract_visual, cfg, ctx);
  return out;
}

}  // namespace bga

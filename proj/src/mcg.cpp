#include "bga/mcg.hpp"

#include <limits>
#include <vector>

namespace bga {

namespace {

double kept(std::span<const double> m) {
  double s = 0.0;
  for (double v : m) s += v;
  return s;
}

Tensor text_queries(const GeneratorParams& params, std::size_t n) {
  if (n > params.textual_query.rows()) {
    throw std::length_error("generator: sentence of " + std::to_string(n) + " rows exceeds " +
                            std::to_string(params.textual_query.rows()) + " textual queries");
  }
  return slice_rows(params.textual_query, 0, n);
}

}  // namespace

GeneratorParams GeneratorParams::init(std::size_t d, std::size_t patches, std::size_t max_len, Rng& rng) {
  GeneratorParams p;
  p.t2v = nn::DecoderBlockParams::init(d, rng);
  p.v2t = nn::DecoderBlockParams::init(d, rng);
  auto gaussian = [&](std::size_t rows) {
    std::vector<double> v(rows * d);
    for (auto& e : v) e = rng.normal();
    return Tensor({rows, d}, std::move(v), true);
  };
  p.visual_query = gaussian(patches);
  p.textual_query = gaussian(max_len);
  return p;
}

void GeneratorParams::collect(const std::string& prefix, nn::ParamList& out) const {
  t2v.collect(prefix + ".t2v", out);
  v2t.collect(prefix + ".v2t", out);
  out.emplace_back(prefix + ".visual_query", visual_query);
  out.emplace_back(prefix + ".textual_query", textual_query);
}

Tensor build_attention_mask(std::span<const double> m, std::size_t n_queries) {
  if (kept(m) < 1.0) throw EmptyContentError("generation mask keeps no source row");
  return nn::key_mask(m, n_queries);
}

Tensor generate(const nn::DecoderBlockParams& generator, const Tensor& source, const Tensor& queries,
                std::span<const double> m, const nn::AttentionConfig& cfg, const nn::ForwardContext& ctx) {
  if (m.size() != source.rows()) {
    throw DimensionError("generate: mask of " + std::to_string(m.size()) + " entries for " +
                         std::to_string(source.rows()) + " source rows");
  }
  return nn::transformer_decoder_block(queries, source, build_attention_mask(m, queries.rows()), generator, cfg,
                                       ctx);
}

Tensor feature_kl(const Tensor& a, const Tensor& b, const Tensor& m) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw DimensionError("feature_kl: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (m.numel() != a.rows()) {
    throw DimensionError("feature_kl: mask of " + std::to_string(m.numel()) + " entries for " +
                         std::to_string(a.rows()) + " rows");
  }
  const Tensor kl = kl_divergence_rows(softmax(a, 1), softmax(b, 1));
  return sum(mul(kl, reshape(m, {a.rows()})));
}

GenerationOutput forward_generation(const Tensor& text, const Tensor& visual, const Tensor& m_t,
                                    const Tensor& m_v, const GeneratorParams& params,
                                    const nn::AttentionConfig& cfg, bool has_image,
                                    const nn::ForwardContext& ctx, bool compute_losses) {
  const std::size_t n_t = text.rows();
  if (m_t.numel() != n_t) {
    throw DimensionError("forward_generation: text mask of " + std::to_string(m_t.numel()) + " entries for " +
                         std::to_string(n_t) + " rows");
  }
  GenerationOutput out;
  out.recon_loss = Tensor::scalar(0.0);
  out.cycle_loss = Tensor::scalar(0.0);

  const auto mt = m_t.to_vector();
  const bool text_empty = kept(mt) < 1.0;
  std::vector<double> cls_only(n_t, 0.0);
  cls_only[0] = 1.0;
  out.v_hat = generate(params.t2v, text, params.visual_query, text_empty ? cls_only : mt, cfg, ctx);
  out.degenerate = text_empty;
  if (!has_image) return out;

  const std::size_t n_v = visual.rows();
  if (m_v.numel() != n_v) {
    throw DimensionError("forward_generation: visual mask of " + std::to_string(m_v.numel()) +
                         " entries for " + std::to_string(n_v) + " rows");
  }
  const auto mv = m_v.to_vector();
  const bool visual_empty = kept(mv) < 1.0;
  out.degenerate = out.degenerate || visual_empty;
  const Tensor q_t = text_queries(params, n_t);
  out.t_hat = generate(params.v2t, visual, q_t, visual_empty ? std::vector<double>(n_v, 1.0) : mv, cfg, ctx);
  if (!compute_losses || out.degenerate) return out;

  out.recon_loss = add(feature_kl(out.v_hat, visual, m_v), feature_kl(out.t_hat, text, m_t));
  const std::vector<double> all_t(n_t, 1.0), all_v(n_v, 1.0);
  out.v_bar = generate(params.t2v, out.t_hat, params.visual_query, all_t, cfg, ctx);
  out.t_bar = generate(params.v2t, out.v_hat, q_t, all_v, cfg, ctx);
  out.cycle_loss = add(feature_kl(out.v_bar, visual, m_v), feature_kl(out.t_bar, text, m_t));
  return out;
}

}  // namespace bga

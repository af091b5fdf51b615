#include "bga/scs.hpp"

#include <stdexcept>

namespace bga {

Mlp Mlp::init(std::size_t d_in, std::size_t d_hidden, std::size_t d_out, Rng& rng) {
  return {nn::Linear::init(d_in, d_hidden, rng), nn::Linear::init(d_hidden, d_out, rng)};
}

Tensor Mlp::forward(const Tensor& x) const { return out.forward(gelu(hidden.forward(x))); }

void Mlp::collect(const std::string& prefix, nn::ParamList& out_params) const {
  hidden.collect(prefix + ".hidden", out_params);
  out.collect(prefix + ".out", out_params);
}

ScsParams ScsParams::init(std::size_t d, Rng& rng) {
  ScsParams p;
  p.local = Mlp::init(d, d, d, rng);
  p.global = Mlp::init(d, d, d, rng);
  p.decide = Mlp::init(2 * d, d, 2, rng);
  return p;
}

void ScsParams::collect(const std::string& prefix, nn::ParamList& out) const {
  local.collect(prefix + ".local", out);
  global.collect(prefix + ".global", out);
  decide.collect(prefix + ".decide", out);
}

Tensor masked_gap(const Tensor& x, const Tensor& m) { return masked_mean_rows(x, m); }

ScsOutput scs_forward(const Tensor& features, const Tensor& prev_mask, const ScsParams& params,
                      double temperature, Rng* rng, bool training) {
  if (!(temperature > 0.0)) throw std::invalid_argument("scs: temperature must be positive");
  const std::size_t n = features.rows();
  if (prev_mask.numel() != n) {
    throw DimensionError("scs: mask of " + std::to_string(prev_mask.numel()) + " entries for " +
                         std::to_string(n) + " rows");
  }
  const Tensor z = params.local.forward(features);
  const Tensor g = masked_gap(params.global.forward(features), prev_mask);
  const Tensor logits = params.decide.forward(concat_cols({z, repeat_rows(g, n)}));
  const Tensor probs = softmax(logits, 1);

  ScsOutput out;
  out.keep_probs = reshape(slice_cols(probs, 0, 1), {n});
  if (training) {
    if (rng == nullptr) throw std::invalid_argument("scs: training mode needs a random generator");
    const Tensor sample = gumbel_softmax(logits, temperature, *rng, true);
    out.mask = mul(reshape(slice_cols(sample, 0, 1), {n}), prev_mask);
  } else {
    auto lv = logits.values();
    auto pv = prev_mask.values();
    std::vector<double> m(n);
    for (std::size_t i = 0; i < n; ++i) m[i] = (lv[2 * i] >= lv[2 * i + 1] ? 1.0 : 0.0) * pv[i];
    out.mask = Tensor({n}, std::move(m));
  }
  return out;
}

std::vector<double> mask_values(const Tensor& mask) { return mask.to_vector(); }

}  // namespace bga

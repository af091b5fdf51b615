#include "bga/nn.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace bga::nn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

void check_width(const Tensor& x, std::size_t d, const char* what) {
  if (x.rank() != 2 || x.shape()[1] != d) {
    throw DimensionError(std::string(what) + ": expected width " + std::to_string(d) + ", got " +
                         shape_str(x.shape()));
  }
}

}  // namespace

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout == 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("dropout requested without a generator");
  return dropout(x, ctx.dropout, *ctx.rng);
}

Linear Linear::init(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias) {
  Linear l{gaussian({d_in, d_out}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng), Tensor{}};
  if (with_bias) l.bias = Tensor::zeros({d_out}, true);
  return l;
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.rank() != 2 || x.shape()[1] != in_features()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(weight.shape()));
  }
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_rowwise(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

LayerNormParams LayerNormParams::init(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

Tensor LayerNormParams::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

void AttentionConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw std::invalid_argument("attention: head count " + std::to_string(heads) +
                                " must divide width " + std::to_string(d));
  }
}

AttentionParams AttentionParams::init(std::size_t d, Rng& rng) {
  auto q = Linear::init(d, d, rng);
  auto k = Linear::init(d, d, rng, false);
  auto v = Linear::init(d, d, rng);
  auto o = Linear::init(d, d, rng);
  return {q, k, v, o};
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

Tensor key_mask(std::span<const double> keep, std::size_t n_queries) {
  std::vector<double> row(keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) row[j] = keep[j] != 0.0 ? 0.0 : kNegInf;
  std::vector<double> m;
  m.reserve(n_queries * row.size());
  for (std::size_t i = 0; i < n_queries; ++i) m.insert(m.end(), row.begin(), row.end());
  return Tensor::matrix(n_queries, keep.size(), std::move(m));
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                            const std::optional<Tensor>& additive_mask,
                            const AttentionParams& params, const AttentionConfig& cfg,
                            AttentionTrace* trace) {
  cfg.validate();
  check_width(q_in, cfg.d, "attention queries");
  check_width(kv_in, cfg.d, "attention keys/values");
  const std::size_t n_q = q_in.shape()[0], n_kv = kv_in.shape()[0];
  if (additive_mask) {
    if (additive_mask->shape() != Shape{n_q, n_kv}) {
      throw DimensionError("attention mask " + shape_str(additive_mask->shape()) + " for " +
                           std::to_string(n_q) + " queries and " + std::to_string(n_kv) + " keys");
    }
    auto mv = additive_mask->values();
    for (std::size_t i = 0; i < n_q; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < n_kv; ++j) {
        const double e = mv[i * n_kv + j];
        if (e != 0.0 && e != kNegInf) throw std::invalid_argument("attention mask entries must be 0 or -inf");
        any = any || e == 0.0;
      }
      if (!any) throw DimensionError("attention mask row " + std::to_string(i) + " removes every key");
    }
  }
  const Tensor mask = additive_mask ? *additive_mask : Tensor::zeros({n_q, n_kv});

  Tensor q = params.query.forward(q_in);
  Tensor k = params.key.forward(kv_in);
  Tensor v = params.value.forward(kv_in);
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  if (trace) trace->weights.clear();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    Tensor qh = cfg.heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = cfg.heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = cfg.heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Tensor weights = softmax_masked_rows(scale(matmul_nt(qh, kh), inv_sqrt), mask);
    if (trace) trace->weights.push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  Tensor joined = cfg.heads == 1 ? heads.front() : concat_cols(heads);
  return params.output.forward(joined);
}

FeedForwardParams FeedForwardParams::init(std::size_t d, Rng& rng) {
  auto up = Linear::init(d, 4 * d, rng);
  auto down = Linear::init(4 * d, d, rng);
  return {up, down};
}

Tensor FeedForwardParams::forward(const Tensor& x, const ForwardContext& ctx) const {
  return down.forward(maybe_dropout(gelu(up.forward(x)), ctx));
}

void FeedForwardParams::collect(const std::string& prefix, ParamList& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

EncoderLayerParams EncoderLayerParams::init(std::size_t d, Rng& rng) {
  auto attention = AttentionParams::init(d, rng);
  auto ffn = FeedForwardParams::init(d, rng);
  return {attention, LayerNormParams::init(d), ffn, LayerNormParams::init(d)};
}

void EncoderLayerParams::collect(const std::string& prefix, ParamList& out) const {
  attention.collect(prefix + ".attention", out);
  norm1.collect(prefix + ".norm1", out);
  ffn.collect(prefix + ".ffn", out);
  norm2.collect(prefix + ".norm2", out);
}

Tensor attend_and_feed(const Tensor& x, const Tensor& kv, const std::optional<Tensor>& mask,
                       const EncoderLayerParams& params, const AttentionConfig& cfg,
                       const ForwardContext& ctx, AttentionTrace* trace) {
  Tensor attended = multi_head_attention(x, kv, mask, params.attention, cfg, trace);
  Tensor a = params.norm1.forward(add(x, maybe_dropout(attended, ctx)));
  return params.norm2.forward(add(a, maybe_dropout(params.ffn.forward(a, ctx), ctx)));
}

Tensor transformer_encoder_layer(const Tensor& x, const EncoderLayerParams& params,
                                 const AttentionConfig& cfg, const ForwardContext& ctx,
                                 const std::optional<Tensor>& mask) {
  return attend_and_feed(x, x, mask, params, cfg, ctx);
}

DecoderBlockParams DecoderBlockParams::init(std::size_t d, Rng& rng) {
  auto self_attention = AttentionParams::init(d, rng);
  auto cross_attention = AttentionParams::init(d, rng);
  auto ffn = FeedForwardParams::init(d, rng);
  return {self_attention, LayerNormParams::init(d), cross_attention, LayerNormParams::init(d),
          ffn, LayerNormParams::init(d)};
}

void DecoderBlockParams::collect(const std::string& prefix, ParamList& out) const {
  self_attention.collect(prefix + ".self_attention", out);
  norm1.collect(prefix + ".norm1", out);
  cross_attention.collect(prefix + ".cross_attention", out);
  norm2.collect(prefix + ".norm2", out);
  ffn.collect(prefix + ".ffn", out);
  norm3.collect(prefix + ".norm3", out);
}

Tensor transformer_decoder_block(const Tensor& queries, const Tensor& memory,
                                 const std::optional<Tensor>& memory_mask,
                                 const DecoderBlockParams& params, const AttentionConfig& cfg,
                                 const ForwardContext& ctx,
                                 const std::optional<Tensor>& query_mask) {
  Tensor s = multi_head_attention(queries, queries, query_mask, params.self_attention, cfg);
  Tensor a = params.norm1.forward(add(queries, maybe_dropout(s, ctx)));
  Tensor c = multi_head_attention(a, memory, memory_mask, params.cross_attention, cfg);
  Tensor b = params.norm2.forward(add(a, maybe_dropout(c, ctx)));
  return params.norm3.forward(add(b, maybe_dropout(params.ffn.forward(b, ctx), ctx)));
}

TokenEmbeddingTable TokenEmbeddingTable::init(std::size_t vocab, std::size_t max_len,
                                              std::size_t d, Rng& rng, std::size_t pad_id,
                                              std::size_t cls_id, std::size_t sep_id) {
  TokenEmbeddingTable table;
  table.embeddings = gaussian({vocab, d}, 1.0, rng);
  table.positions = gaussian({max_len, d}, 0.1, rng);
  table.pad_id = pad_id;
  table.cls_id = cls_id;
  table.sep_id = sep_id;
  table.validate();
  return table;
}

void TokenEmbeddingTable::validate() const {
  const std::size_t v = vocab_size();
  if (cls_id >= v || sep_id >= v || pad_id >= v) {
    throw std::invalid_argument("special token ids must lie inside the vocabulary");
  }
  if (cls_id == sep_id || cls_id == pad_id || sep_id == pad_id) {
    throw std::invalid_argument("special token ids must be distinct");
  }
  if (positions.shape()[1] != embeddings.shape()[1]) {
    throw DimensionError("positional and token embeddings differ in width");
  }
}

void TokenEmbeddingTable::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".embeddings", embeddings);
  out.emplace_back(prefix + ".positions", positions);
}

Tensor embed_tokens(std::span<const std::size_t> ids, const TokenEmbeddingTable& table,
                    std::size_t pad_to) {
  const std::size_t content = ids.size() + 2;
  if (content > table.max_len()) {
    throw std::length_error("sentence of " + std::to_string(ids.size()) +
                            " tokens exceeds the limit of " + std::to_string(table.max_len() - 2));
  }
  if (pad_to > table.max_len()) {
    throw std::length_error("padding length " + std::to_string(pad_to) + " exceeds max length " +
                            std::to_string(table.max_len()));
  }
  const std::size_t n = std::max(content, pad_to);
  std::vector<std::size_t> all;
  all.reserve(n);
  all.push_back(table.cls_id);
  for (auto id : ids) {
    if (id >= table.vocab_size()) {
      throw std::out_of_range("unknown token id " + std::to_string(id) + " (vocabulary of " +
                              std::to_string(table.vocab_size()) + ")");
    }
    all.push_back(id);
  }
  all.push_back(table.sep_id);
  while (all.size() < n) all.push_back(table.pad_id);

  Tensor tokens = gather_rows(table.embeddings, all);
  if (n == 1) return tokens;
  std::vector<std::size_t> pos(n - 1);
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i + 1;
  Tensor rest = add(slice_rows(tokens, 1, n), gather_rows(table.positions, pos));
  return concat_rows({slice_rows(tokens, 0, 1), rest});
}

PatchProjector PatchProjector::init(std::size_t d_raw, std::size_t patches, std::size_t d,
                                    Rng& rng) {
  auto projection = Linear::init(d_raw, d, rng);
  return {projection, gaussian({patches, d}, 0.1, rng)};
}

void PatchProjector::collect(const std::string& prefix, ParamList& out) const {
  projection.collect(prefix + ".projection", out);
  out.emplace_back(prefix + ".positions", positions);
}

Tensor embed_patches(const Tensor& raw, const PatchProjector& proj) {
  if (raw.rank() != 2 || raw.shape()[1] != proj.projection.in_features()) {
    throw DimensionError("patch features " + shape_str(raw.shape()) + " do not fit projector input width " +
                         std::to_string(proj.projection.in_features()));
  }
  if (raw.shape()[0] != proj.positions.shape()[0]) {
    throw DimensionError("expected " + std::to_string(proj.positions.shape()[0]) + " patches, got " +
                         std::to_string(raw.shape()[0]));
  }
  return add(proj.projection.forward(raw), proj.positions);
}

}  // namespace bga::nn

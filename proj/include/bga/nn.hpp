#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bga/ops.hpp"
#include "bga/rng.hpp"
#include "bga/tensor.hpp"

namespace bga::nn {

/// Named parameter handles, in registration order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

std::size_t count_parameters(const ParamList& params);

/// Training-time behaviour shared by every block: dropout and the generator
/// used to sample it.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
};

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx);

struct Linear {
  Tensor weight;  // d_in x d_out
  Tensor bias;    // d_out; undefined for bias-free projections

  /// Weights drawn from N(0, 1/d_in); zero bias.
  static Linear init(std::size_t d_in, std::size_t d_out, Rng& rng, bool with_bias = true);
  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t d);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct AttentionConfig {
  std::size_t d = 0;
  std::size_t heads = 1;

  std::size_t head_dim() const { return d / heads; }
  /// Throws std::invalid_argument unless heads divides d.
  void validate() const;
};

struct AttentionParams {
  // The key projection has no bias: it would add the same q.b to every logit
  // of a row, which the softmax cancels.
  Linear query, key, value, output;

  static AttentionParams init(std::size_t d, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Per-head attention weights (n_q x n_kv) recorded by multi_head_attention.
struct AttentionTrace {
  std::vector<Tensor> weights;
};

/// Builds an n_q x n_kv additive mask that removes every key j with keep[j] == 0.
Tensor key_mask(std::span<const double> keep, std::size_t n_queries);

/// Scaled dot-product attention over h heads of width d/h, concatenated and
/// passed through the output projection. `additive_mask` holds 0 / -inf.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& kv_in,
                            const std::optional<Tensor>& additive_mask,
                            const AttentionParams& params, const AttentionConfig& cfg,
                            AttentionTrace* trace = nullptr);

struct FeedForwardParams {
  Linear up;    // d -> 4d
  Linear down;  // 4d -> d

  static FeedForwardParams init(std::size_t d, Rng& rng);
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct EncoderLayerParams {
  AttentionParams attention;
  LayerNormParams norm1;
  FeedForwardParams ffn;
  LayerNormParams norm2;

  static EncoderLayerParams init(std::size_t d, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Post-norm block where queries come from `x` and keys/values from `kv`:
///   a = LN(x + Attn(x, kv));  out = LN(a + FFN(a)).
Tensor attend_and_feed(const Tensor& x, const Tensor& kv, const std::optional<Tensor>& mask,
                       const EncoderLayerParams& params, const AttentionConfig& cfg,
                       const ForwardContext& ctx = {}, AttentionTrace* trace = nullptr);

Tensor transformer_encoder_layer(const Tensor& x, const EncoderLayerParams& params,
                                 const AttentionConfig& cfg, const ForwardContext& ctx = {},
                                 const std::optional<Tensor>& mask = std::nullopt);

struct DecoderBlockParams {
  AttentionParams self_attention;
  LayerNormParams norm1;
  AttentionParams cross_attention;
  LayerNormParams norm2;
  FeedForwardParams ffn;
  LayerNormParams norm3;

  static DecoderBlockParams init(std::size_t d, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Query self-attention, cross-attention into `memory` under `memory_mask`,
/// then feed-forward; residual + layer norm after each sublayer.
/// `query_mask` optionally removes query rows as self-attention keys.
Tensor transformer_decoder_block(const Tensor& queries, const Tensor& memory,
                                 const std::optional<Tensor>& memory_mask,
                                 const DecoderBlockParams& params, const AttentionConfig& cfg,
                                 const ForwardContext& ctx = {},
                                 const std::optional<Tensor>& query_mask = std::nullopt);

struct TokenEmbeddingTable {
  Tensor embeddings;  // vocab x d
  Tensor positions;   // max_len x d
  std::size_t cls_id = 1;
  std::size_t sep_id = 2;
  std::size_t pad_id = 0;

  static TokenEmbeddingTable init(std::size_t vocab, std::size_t max_len, std::size_t d, Rng& rng,
                                  std::size_t pad_id = 0, std::size_t cls_id = 1,
                                  std::size_t sep_id = 2);
  std::size_t vocab_size() const { return embeddings.shape()[0]; }
  std::size_t max_len() const { return positions.shape()[0]; }
  void validate() const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// [CLS] w_1 ... w_n [SEP] followed by [PAD] rows up to `pad_to`. Row i > 0
/// carries positional embedding i; the [CLS] row is the bare embedding.
Tensor embed_tokens(std::span<const std::size_t> ids, const TokenEmbeddingTable& table,
                    std::size_t pad_to = 0);

struct PatchProjector {
  Linear projection;  // d_raw -> d
  Tensor positions;   // N_v x d

  static PatchProjector init(std::size_t d_raw, std::size_t patches, std::size_t d, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor embed_patches(const Tensor& raw, const PatchProjector& proj);

}  // namespace bga::nn

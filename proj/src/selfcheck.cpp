#include "bga/selfcheck.hpp"

#include <algorithm>
#include <functional>
#include <limits>

#include "bga/crf.hpp"
#include "bga/gradcheck.hpp"
#include "bga/mcg.hpp"
#include "bga/model.hpp"
#include "bga/scs.hpp"

namespace bga {

namespace {

constexpr double kLeafTolerance = 1e-5;
constexpr double kBlockTolerance = 1e-4;
constexpr int kTrials = 3;

Tensor gaussian(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& e : v) e = rng.normal();
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

std::vector<double> weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& e : w) e = rng.normal();
  return w;
}

Tensor distribution(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& e : p) s += (e = rng.uniform() + 0.05);
  for (auto& e : p) e /= s;
  return Tensor::vector(p);
}

struct OpCase {
  const char* name;
  Shape shape;
  std::function<Tensor(const Tensor&, Rng&)> build;
};

std::vector<OpCase> op_cases() {
  const double inf = std::numeric_limits<double>::infinity();
  return {
      {"matmul", {3, 4}, [](const Tensor& x, Rng& r) { return matmul(x, gaussian({4, 2}, r)); }},
      {"matmul_nt", {3, 4}, [](const Tensor& x, Rng& r) { return matmul_nt(x, gaussian({5, 4}, r)); }},
      {"transpose", {2, 5}, [](const Tensor& x, Rng&) { return transpose(x); }},
      {"reshape", {2, 6}, [](const Tensor& x, Rng&) { return reshape(x, {3, 4}); }},
      {"add", {3, 3}, [](const Tensor& x, Rng& r) { return add(x, gaussian({3, 3}, r)); }},
      {"sub", {3, 3}, [](const Tensor& x, Rng& r) { return sub(gaussian({3, 3}, r), x); }},
      {"mul", {3, 3}, [](const Tensor& x, Rng&) { return mul(x, x); }},
      {"scale", {4}, [](const Tensor& x, Rng&) { return scale(x, -1.7); }},
      {"add_rowwise", {4}, [](const Tensor& x, Rng& r) { return add_rowwise(gaussian({3, 4}, r), x); }},
      {"gelu", {10}, [](const Tensor& x, Rng&) { return gelu(x); }},
      {"softmax", {4, 3}, [](const Tensor& x, Rng&) { return softmax(x, 1); }},
      {"softmax_masked_rows", {2, 3},
       [inf](const Tensor& x, Rng&) { return softmax_masked_rows(x, Tensor::matrix({{0, -inf, 0}, {0, 0, -inf}})); }},
      {"layer_norm", {3, 6},
       [](const Tensor& x, Rng& r) { return layer_norm(x, gaussian({6}, r), gaussian({6}, r)); }},
      {"mean", {3, 2}, [](const Tensor& x, Rng&) { return mean(mul(x, x)); }},
      {"kl_divergence", {6},
       [](const Tensor& x, Rng& r) { return kl_divergence(softmax(x, 0), distribution(6, r)); }},
      {"kl_divergence_rows", {3, 4},
       [](const Tensor& x, Rng& r) { return kl_divergence_rows(softmax(x, 1), softmax(gaussian({3, 4}, r), 1)); }},
      {"concat_rows", {2, 3}, [](const Tensor& x, Rng& r) { return concat_rows({gaussian({1, 3}, r), x, x}); }},
      {"concat_cols", {2, 3}, [](const Tensor& x, Rng& r) { return concat_cols({x, gaussian({2, 1}, r)}); }},
      {"slice_rows", {4, 3}, [](const Tensor& x, Rng&) { return slice_rows(x, 1, 3); }},
      {"slice_cols", {4, 3}, [](const Tensor& x, Rng&) { return slice_cols(x, 1, 3); }},
      {"gather_rows", {5, 2},
       [](const Tensor& x, Rng&) {
         std::vector<std::size_t> ids{4, 0, 4, 2};
         return gather_rows(x, ids);
       }},
      {"repeat_rows", {1, 3}, [](const Tensor& x, Rng&) { return repeat_rows(x, 4); }},
      {"mean_rows", {4, 3}, [](const Tensor& x, Rng&) { return mean_rows(x); }},
      {"masked_mean_rows", {4, 3},
       [](const Tensor& x, Rng&) { return masked_mean_rows(x, Tensor::vector({1, 0, 1, 1})); }},
      {"gumbel_softmax", {3, 2}, [](const Tensor& x, Rng& r) { return gumbel_softmax(x, 0.8, r, false); }},
  };
}

double check_op(const OpCase& c, Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < kTrials; ++trial) {
    auto x = gaussian(c.shape, rng);
    const std::uint64_t seed = rng.next_u64();
    Rng probe(seed);
    auto w = weights(c.build(x, probe).numel(), rng);
    auto f = [&](const Tensor& t) {
      Rng local(seed);
      return weighted_sum(c.build(t, local), w);
    };
    worst = std::max(worst, finite_difference_check(f, x, 1e-6));
  }
  return worst;
}

void add_params(const nn::ParamList& list, std::vector<Tensor>& out) {
  for (const auto& [name, t] : list) out.push_back(t);
}

double check_encoder_layer(Rng& rng) {
  nn::AttentionConfig cfg{8, 2};
  auto layer = nn::EncoderLayerParams::init(8, rng);
  auto x = gaussian({4, 8}, rng, true);
  auto w = weights(32, rng);
  nn::ParamList params;
  layer.collect("layer", params);
  std::vector<Tensor> tensors{x};
  add_params(params, tensors);
  return check_parameter_gradients([&] { return weighted_sum(nn::transformer_encoder_layer(x, layer, cfg), w); },
                                   tensors)
      .max_rel_error;
}

double check_generator(Rng& rng) {
  nn::AttentionConfig cfg{8, 2};
  auto block = nn::DecoderBlockParams::init(8, rng);
  auto src = gaussian({5, 8}, rng, true);
  auto q = gaussian({3, 8}, rng, true);
  std::vector<double> m{1, 0, 1, 1, 0};
  auto w = weights(24, rng);
  nn::ParamList params;
  block.collect("block", params);
  std::vector<Tensor> tensors{src, q};
  add_params(params, tensors);
  return check_parameter_gradients([&] { return weighted_sum(generate(block, src, q, m, cfg), w); }, tensors)
      .max_rel_error;
}

double check_sampler(Rng& rng) {
  auto params = ScsParams::init(8, rng);
  auto x = gaussian({5, 8}, rng, true);
  auto prev = Tensor::vector({1, 1, 0, 1, 1});
  auto w = weights(5, rng);
  nn::ParamList list;
  params.collect("scs", list);
  std::vector<Tensor> tensors{x};
  add_params(list, tensors);
  return check_parameter_gradients(
             [&] { return weighted_sum(scs_forward(x, prev, params, 1.0, nullptr, false).keep_probs, w); }, tensors)
      .max_rel_error;
}

double check_crf(Rng& rng) {
  double worst = 0.0;
  for (int trial = 0; trial < kTrials; ++trial) {
    const std::size_t n = 2 + rng.below(4), labels = 2 + rng.below(3);
    auto e = gaussian({n, labels}, rng, true);
    auto p = CrfParams::init(labels);
    for (auto& v : p.transitions.values_mut()) v = rng.normal();
    for (auto& v : p.start_scores.values_mut()) v = rng.normal();
    TagSequence tags(n);
    for (auto& t : tags) t = rng.below(labels);
    auto r = check_parameter_gradients([&] { return crf_nll(e, tags, p); }, {e, p.transitions, p.start_scores}, 1e-5);
    worst = std::max(worst, r.max_rel_error);
  }
  return worst;
}

double check_end_to_end(std::uint64_t seed) {
  SyntheticSchema schema;
  schema.types = {"PER", "LOC"};
  schema.raw_dim = 6;
  schema.patches = 3;
  schema.forms_per_type = 2;
  schema.context_words = 6;
  schema.min_words = 2;
  schema.max_words = 3;
  schema.max_mentions = 1;
  schema.missing_image = 0.25;
  auto corpus = generate_synthetic_corpus(schema, 16, 1, 1, seed);
  auto vocab = Vocab::build(corpus.train);
  LabelSet labels(schema.types);
  auto examples = encode_examples(corpus.train, vocab, labels);

  ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.layers = 2;
  cfg.patches = 3;
  cfg.raw_dim = 6;
  cfg.max_len = 8;
  cfg.seed = seed;
  BgaModel model(cfg, vocab, labels);

  std::vector<const EncodedExample*> batch;
  for (const auto& ex : examples)
    if (ex.has_image && batch.empty()) batch.push_back(&ex);
  for (const auto& ex : examples)
    if (!ex.has_image && batch.size() == 1) batch.push_back(&ex);
  std::vector<Tensor> tensors;
  add_params(model.parameters(), tensors);
  // Evaluation-mode masks are fixed argmax decisions, so the loss is smooth at the probe.
  auto loss = [&] {
    auto fwd = forward_train(model, batch, nullptr, false);
    return overall_loss(fwd.l_mner, fwd.recon, fwd.cycle, 1.0, cfg.layers);
  };
  return check_parameter_gradients(loss, tensors, 1e-6, 6).max_rel_error;
}

}  // namespace

std::vector<GradCheckEntry> run_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckEntry> out;
  for (const auto& c : op_cases()) out.push_back({c.name, check_op(c, rng), kLeafTolerance, true});
  out.push_back({"encoder_layer", check_encoder_layer(rng), kBlockTolerance, false});
  out.push_back({"generator", check_generator(rng), kBlockTolerance, false});
  out.push_back({"context_sampler", check_sampler(rng), kBlockTolerance, false});
  out.push_back({"crf_nll", check_crf(rng), kBlockTolerance, false});
  out.push_back({"end_to_end", check_end_to_end(rng.next_u64()), kBlockTolerance, false});
  return out;
}

}  // namespace bga

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bga/bio.hpp"
#include "bga/crf.hpp"
#include "bga/data.hpp"
#include "bga/extractor.hpp"
#include "bga/mcg.hpp"
#include "bga/nn.hpp"
#include "bga/optim.hpp"

namespace bga {

struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;    // N
  std::size_t patches = 8;   // N_v
  std::size_t raw_dim = 16;  // patch feature width
  std::size_t max_len = 32;  // rows including [CLS] and [SEP]
  double alpha = 0.001;
  double temperature = 1.0;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  /// Baseline: no generated rows in the fusion attention and no generation losses.
  bool text_only = false;
  /// Sampler keep-rate target: layer l (from 0) aims to keep rho^(l+1) of its
  /// rows, penalized by ratio_weight * squared deviation. 0 disables the term.
  double keep_ratio = 0.8;
  double ratio_weight = 1.0;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  nn::AttentionConfig attention() const { return {d, heads}; }
};

class BgaModel {
 public:
  BgaModel(ModelConfig config, Vocab vocab, LabelSet labels);

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const LabelSet& labels() const { return labels_; }

  /// Every trainable tensor with its registry name, in a fixed order.
  nn::ParamList parameters() const;
  /// Parameters of the shared generator only.
  nn::ParamList generator_parameters() const;

  nn::TokenEmbeddingTable tokens;
  nn::PatchProjector patch_projector;
  nn::EncoderLayerParams text_encoder;
  nn::EncoderLayerParams visual_encoder;
  std::vector<BgaLayerParams> layers;
  GeneratorParams generator;
  nn::Linear emission;
  CrfParams crf;

 private:
  ModelConfig config_;
  Vocab vocab_;
  LabelSet labels_;
};

/// Per-sentence results of one forward pass.
struct SentenceOutput {
  Tensor emissions;  // n_words x L
  Tensor nll;
  std::vector<Tensor> recon;  // per layer
  std::vector<Tensor> cycle;
  std::vector<Tensor> masks_t;  // per layer, over [CLS] w_1..w_n [SEP]
  std::vector<Tensor> masks_v;  // per layer; undefined without the visual branch
  Tensor v_hat_last;            // generated visual rows of the last layer
};

struct TrainForward {
  std::vector<SentenceOutput> sentences;
  Tensor l_mner;                // mean NLL
  std::vector<Tensor> recon;    // per layer, mean over image-bearing sentences
  std::vector<Tensor> cycle;
  std::vector<Tensor> ratio;    // per layer keep-rate penalty, mean over sentences
};

/// Runs the model on a batch. `training` selects Gumbel sampling and dropout
/// (rng required) versus argmax masks.
TrainForward forward_train(const BgaModel& model, const std::vector<const EncodedExample*>& batch, Rng* rng,
                           bool training);

/// L_mner + alpha * (1/N) * sum_l (recon_l + cycle_l).
Tensor overall_loss(const Tensor& l_mner, const std::vector<Tensor>& recon, const std::vector<Tensor>& cycle,
                    double alpha, std::size_t layers);

/// overall_loss plus ratio_weight * (1/N) * sum_l ratio_l: the objective train_step minimizes.
Tensor training_objective(const TrainForward& fwd, const ModelConfig& cfg);

struct TrainSettings {
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 0.01;
  double warmup_ratio = 0.01;
};

struct LossRecord {
  double overall = 0.0;
  double mner = 0.0;
  double recon = 0.0;  // (1/N) sum over layers
  double cycle = 0.0;
  double ratio = 0.0;
};

/// One optimizer step on overall_loss. Throws NumericError (parameters left
/// untouched) when the loss is not finite.
LossRecord train_step(BgaModel& model, AdamW& optimizer, const std::vector<const EncodedExample*>& batch, Rng& rng);

AdamW make_optimizer(const BgaModel& model, const TrainSettings& settings, std::size_t total_steps);

/// Image-free inference: the text branch only, argmax masks, Viterbi decoding.
TagSequence infer(const BgaModel& model, const std::vector<std::size_t>& ids);

/// Sampler masks of the inference path (text) and of the evaluation-mode
/// visual branch (patches), per layer.
struct MaskReport {
  std::vector<std::vector<double>> text;
  std::vector<std::vector<double>> visual;
};
MaskReport inspect_masks(const BgaModel& model, const EncodedExample& example);

/// Cosine similarity between the mean-pooled pseudo visual rows generated
/// from the sentence and each candidate image passed through the plain visual layer.
std::vector<double> alignment_similarity(const BgaModel& model, const std::vector<std::size_t>& ids,
                                         const std::vector<Tensor>& candidates);

struct Metrics {
  PrfScore overall;
  std::map<std::string, PrfScore> per_type;
};

Metrics score_predictions(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold,
                          const LabelSet& labels);
Metrics evaluate(const BgaModel& model, const std::vector<EncodedExample>& examples);
/// {"overall": {"p", "r", "f1"}, "per_type": {TYPE: {"p", "r", "f1"}}}
std::string metrics_json(const Metrics& metrics);

struct EpochReport {
  std::size_t epoch = 0;
  LossRecord mean_loss;
  Metrics dev;
};

/// Trains for settings.epochs epochs and restores the parameters with the best
/// dev micro-F1 (first best on ties). Deterministic given the model seed.
std::vector<EpochReport> train(BgaModel& model, const std::vector<EncodedExample>& train_set,
                               const std::vector<EncodedExample>& dev_set, const TrainSettings& settings,
                               const std::function<void(const EpochReport&)>& on_epoch = {});

/// Versioned binary checkpoint: configuration, vocabulary, labels, tensors.
void save_checkpoint(const BgaModel& model, const std::filesystem::path& path);
BgaModel load_checkpoint(const std::filesystem::path& path);

}  // namespace bga

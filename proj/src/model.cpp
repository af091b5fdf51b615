#include "bga/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <algorithm>
#include <stdexcept>

#include "json.hpp"

namespace bga {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr char kMagic[8] = {'B', 'G', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<double> content_mask(std::size_t rows) {
  std::vector<double> c(rows, 1.0);
  c.front() = 0.0;
  c.back() = 0.0;
  return c;
}

/// Sum of tensors divided by the count; scalar 0 for an empty list.
Tensor average(const std::vector<Tensor>& terms) {
  if (terms.empty()) return Tensor::scalar(0.0);
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return scale(total, 1.0 / static_cast<double>(terms.size()));
}

/// (mean of m over the rows where weight is 1 - target)^2.
Tensor keep_penalty(const Tensor& m, const std::vector<double>& rows, double target) {
  double count = 0.0;
  for (double r : rows) count += r;
  Tensor rate = scale(weighted_sum(m, rows), 1.0 / count);
  Tensor gap = sub(rate, Tensor::scalar(target));
  return mul(gap, gap);
}

struct RunOptions {
  nn::ForwardContext ctx;
  SamplerSettings sampler;
  bool use_image = true;
  const TagSequence* tags = nullptr;
};

SentenceOutput run_sentence(const BgaModel& model, const std::vector<std::size_t>& ids, const Tensor& patches,
                            bool has_image, const RunOptions& opt) {
  const auto& cfg = model.config();
  const auto attn = cfg.attention();
  if (ids.empty()) throw std::invalid_argument("empty sentence");

  Tensor text = nn::transformer_encoder_layer(nn::embed_tokens(ids, model.tokens), model.text_encoder, attn, opt.ctx);
  const std::size_t rows = text.rows();
  const bool visual_branch = opt.use_image && has_image && !cfg.text_only;
  Tensor visual;
  if (visual_branch) {
    if (!patches.defined()) throw std::invalid_argument("example marked has_image without patches");
    visual = nn::transformer_encoder_layer(nn::embed_patches(patches, model.patch_projector), model.visual_encoder,
                                           attn, opt.ctx);
  }

  SentenceOutput out;
  BgaLayerInput in{text, visual, Tensor::full({rows}, 1.0), Tensor::full({cfg.patches}, 1.0), content_mask(rows),
                   visual_branch};
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    if (cfg.text_only) {
      in.text = hybrid_extract(in.text, Tensor(), layer.extract_text, attn, opt.ctx);
      out.recon.push_back(Tensor::scalar(0.0));
      out.cycle.push_back(Tensor::scalar(0.0));
      out.masks_t.push_back(Tensor({rows}, in.content_t));
      out.masks_v.emplace_back();
      continue;
    }
    auto res = bga_layer(in, layer, model.generator, attn, opt.ctx, opt.sampler);
    out.recon.push_back(res.generation.recon_loss);
    out.cycle.push_back(res.generation.cycle_loss);
    out.masks_t.push_back(res.mask_t);
    out.masks_v.push_back(res.mask_v);
    if (l + 1 == model.layers.size()) {
      out.v_hat_last = res.generation.v_hat;
    }
    in.text = res.text;
    in.visual = res.visual;
    in.prev_mask_t = res.mask_t;
    if (res.mask_v.defined()) in.prev_mask_v = res.mask_v;
  }

  out.emissions = model.emission.forward(slice_rows(in.text, 1, rows - 1));
  if (opt.tags) out.nll = crf_nll(out.emissions, *opt.tags, model.crf);
  return out;
}

RunOptions evaluation_options() {
  RunOptions opt;
  opt.ctx = {false, 0.0, nullptr};
  return opt;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

json config_to_json(const ModelConfig& c) {
  return json{{"d", c.d},
              {"heads", c.heads},
              {"layers", c.layers},
              {"patches", c.patches},
              {"raw_dim", c.raw_dim},
              {"max_len", c.max_len},
              {"alpha", c.alpha},
              {"temperature", c.temperature},
              {"dropout", c.dropout},
              {"seed", c.seed},
              {"text_only", c.text_only},
              {"keep_ratio", c.keep_ratio},
              {"ratio_weight", c.ratio_weight}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.patches = j.at("patches").get<std::size_t>();
  c.raw_dim = j.at("raw_dim").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.temperature = j.at("temperature").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.text_only = j.at("text_only").get<bool>();
  c.keep_ratio = j.at("keep_ratio").get<double>();
  c.ratio_weight = j.at("ratio_weight").get<double>();
  return c;
}

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint truncated while reading " + what);
  return v;
}

std::string read_bytes(std::istream& is, std::uint64_t n, const std::string& what) {
  if (n > (std::uint64_t{1} << 32)) throw DataError("checkpoint: implausible length for " + what);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("checkpoint truncated while reading " + what);
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  if (d == 0 || heads == 0 || d % heads != 0) {
    throw std::invalid_argument("heads (" + std::to_string(heads) + ") must divide d (" + std::to_string(d) + ")");
  }
  if (layers == 0) throw std::invalid_argument("at least one BGA layer is required");
  if (patches == 0 || raw_dim == 0) throw std::invalid_argument("patch count and width must be positive");
  if (max_len < 3) throw std::invalid_argument("max_len must leave room for [CLS], one word and [SEP]");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite and >= 0");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0)) throw std::invalid_argument("keep_ratio must lie in (0, 1]");
  if (!(ratio_weight >= 0.0) || !std::isfinite(ratio_weight)) {
    throw std::invalid_argument("ratio_weight must be finite and >= 0");
  }
}

BgaModel::BgaModel(ModelConfig config, Vocab vocab, LabelSet labels)
    : config_(std::move(config)), vocab_(std::move(vocab)), labels_(std::move(labels)) {
  config_.validate();
  if (labels_.size() == 0) throw std::invalid_argument("empty label set");
  Rng rng(config_.seed);
  const std::size_t d = config_.d;
  tokens = nn::TokenEmbeddingTable::init(vocab_.size(), config_.max_len, d, rng, Vocab::kPad, Vocab::kCls,
                                         Vocab::kSep);
  patch_projector = nn::PatchProjector::init(config_.raw_dim, config_.patches, d, rng);
  text_encoder = nn::EncoderLayerParams::init(d, rng);
  visual_encoder = nn::EncoderLayerParams::init(d, rng);
  for (std::size_t l = 0; l < config_.layers; ++l) layers.push_back(BgaLayerParams::init(d, rng));
  generator = GeneratorParams::init(d, config_.patches, config_.max_len, rng);
  emission = nn::Linear::init(d, labels_.size(), rng);
  crf = CrfParams::init(labels_.size());
}

nn::ParamList BgaModel::parameters() const {
  nn::ParamList out;
  tokens.collect("tokens", out);
  patch_projector.collect("patches", out);
  text_encoder.collect("text_encoder", out);
  visual_encoder.collect("visual_encoder", out);
  for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect("layer" + std::to_string(l), out);
  generator.collect("generator", out);
  emission.collect("emission", out);
  crf.collect("crf", out);
  return out;
}

nn::ParamList BgaModel::generator_parameters() const {
  nn::ParamList out;
  generator.collect("generator", out);
  return out;
}

TrainForward forward_train(const BgaModel& model, const std::vector<const EncodedExample*>& batch, Rng* rng,
                           bool training) {
  if (batch.empty()) throw std::invalid_argument("forward_train: empty batch");
  if (training && rng == nullptr) throw std::invalid_argument("forward_train: training needs a random generator");
  const auto& cfg = model.config();

  TrainForward out;
  std::vector<Tensor> nlls;
  std::vector<std::vector<Tensor>> recon(cfg.layers), cycle(cfg.layers), ratio(cfg.layers);
  for (const auto* ex : batch) {
    if (ex->tags.size() != ex->ids.size()) {
      throw DimensionError("forward_train: " + std::to_string(ex->tags.size()) + " tags for " +
                           std::to_string(ex->ids.size()) + " tokens");
    }
    RunOptions opt;
    opt.ctx = {training, cfg.dropout, rng};
    opt.sampler = {cfg.temperature, rng};
    opt.tags = &ex->tags;
    auto s = run_sentence(model, ex->ids, ex->patches, ex->has_image, opt);
    nlls.push_back(s.nll);
    if (!cfg.text_only) {
      const std::size_t rows = ex->ids.size() + 2;
      const auto content = content_mask(rows);
      double target = 1.0;
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        target *= cfg.keep_ratio;
        Tensor p = keep_penalty(s.masks_t[l], content, target);
        if (s.masks_v[l].defined()) {
          p = add(p, keep_penalty(s.masks_v[l], std::vector<double>(cfg.patches, 1.0), target));
        }
        ratio[l].push_back(p);
      }
    }
    if (ex->has_image && !cfg.text_only) {
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        recon[l].push_back(s.recon[l]);
        cycle[l].push_back(s.cycle[l]);
      }
    }
    out.sentences.push_back(std::move(s));
  }
  out.l_mner = average(nlls);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    out.recon.push_back(average(recon[l]));
    out.cycle.push_back(average(cycle[l]));
    out.ratio.push_back(average(ratio[l]));
  }
  return out;
}

Tensor overall_loss(const Tensor& l_mner, const std::vector<Tensor>& recon, const std::vector<Tensor>& cycle,
                    double alpha, std::size_t layers) {
  if (layers == 0 || recon.size() != layers || cycle.size() != layers) {
    throw std::invalid_argument("overall_loss: expected " + std::to_string(layers) + " recon and cycle terms, got " +
                                std::to_string(recon.size()) + " and " + std::to_string(cycle.size()));
  }
  if (alpha == 0.0) return l_mner;
  Tensor generation = add(recon[0], cycle[0]);
  for (std::size_t l = 1; l < layers; ++l) generation = add(generation, add(recon[l], cycle[l]));
  return add(l_mner, scale(generation, alpha / static_cast<double>(layers)));
}

Tensor training_objective(const TrainForward& fwd, const ModelConfig& cfg) {
  Tensor loss = overall_loss(fwd.l_mner, fwd.recon, fwd.cycle, cfg.alpha, cfg.layers);
  if (cfg.ratio_weight == 0.0 || cfg.text_only) return loss;
  Tensor penalty = fwd.ratio[0];
  for (std::size_t l = 1; l < cfg.layers; ++l) penalty = add(penalty, fwd.ratio[l]);
  return add(loss, scale(penalty, cfg.ratio_weight / static_cast<double>(cfg.layers)));
}

LossRecord train_step(BgaModel& model, AdamW& optimizer, const std::vector<const EncodedExample*>& batch, Rng& rng) {
  const auto& cfg = model.config();
  LossRecord rec;
  try {
    auto fwd = forward_train(model, batch, &rng, true);
    Tensor loss = training_objective(fwd, cfg);
    rec.overall = loss.item();
    rec.mner = fwd.l_mner.item();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      rec.recon += fwd.recon[l].item() / static_cast<double>(cfg.layers);
      rec.cycle += fwd.cycle[l].item() / static_cast<double>(cfg.layers);
      rec.ratio += fwd.ratio[l].item() / static_cast<double>(cfg.layers);
    }
    if (!std::isfinite(rec.overall)) throw NumericError("loss is " + std::to_string(rec.overall));
    backward(loss);
  } catch (const NumericError& e) {
    optimizer.zero_grad();
    throw NumericError("train_step " + std::to_string(optimizer.steps_taken()) + " aborted (batch of " +
                       std::to_string(batch.size()) + "): " + e.what());
  }
  optimizer.step();
  return rec;
}

AdamW make_optimizer(const BgaModel& model, const TrainSettings& settings, std::size_t total_steps) {
  AdamWConfig cfg;
  cfg.lr = settings.lr;
  cfg.weight_decay = settings.weight_decay;
  cfg.warmup_steps = warmup_steps_for(settings.warmup_ratio, total_steps);
  return AdamW(model.parameters(), cfg);
}

TagSequence infer(const BgaModel& model, const std::vector<std::size_t>& ids) {
  RunOptions opt = evaluation_options();
  opt.use_image = false;
  auto s = run_sentence(model, ids, Tensor(), false, opt);
  return viterbi_decode(s.emissions, model.crf);
}

MaskReport inspect_masks(const BgaModel& model, const EncodedExample& example) {
  auto s = run_sentence(model, example.ids, example.patches, example.has_image, evaluation_options());
  MaskReport report;
  for (std::size_t l = 0; l < s.masks_t.size(); ++l) {
    report.text.push_back(s.masks_t[l].to_vector());
    report.visual.push_back(s.masks_v[l].defined() ? s.masks_v[l].to_vector() : std::vector<double>{});
  }
  return report;
}

std::vector<double> alignment_similarity(const BgaModel& model, const std::vector<std::size_t>& ids,
                                         const std::vector<Tensor>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("alignment_similarity: no candidate images");
  if (model.config().text_only) throw std::invalid_argument("alignment_similarity: model generates no visual rows");
  RunOptions text_opt = evaluation_options();
  text_opt.use_image = false;
  const auto pseudo = mean_rows(run_sentence(model, ids, Tensor(), false, text_opt).v_hat_last).to_vector();

  const auto ctx = evaluation_options().ctx;
  std::vector<double> scores;
  for (const auto& c : candidates) {
    if (c.rank() != 2 || c.rows() != model.config().patches || c.cols() != model.config().raw_dim) {
      throw DimensionError("alignment_similarity: candidate of shape " + shape_str(c.shape()));
    }
    Tensor real = nn::transformer_encoder_layer(nn::embed_patches(c, model.patch_projector), model.visual_encoder,
                                                model.config().attention(), ctx);
    scores.push_back(cosine(pseudo, mean_rows(real).to_vector()));
  }
  return scores;
}

Metrics score_predictions(const std::vector<TagSequence>& pred, const std::vector<TagSequence>& gold,
                          const LabelSet& labels) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("score_predictions: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(gold.size()) + " gold sequences");
  }
  std::vector<SpanSet> p, g;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    p.push_back(bio_spans(pred[i], labels));
    g.push_back(bio_spans(gold[i], labels));
  }
  Metrics m;
  m.overall = span_micro_f1(p, g);
  for (const auto& type : labels.types()) m.per_type[type] = span_micro_f1(p, g, type);
  return m;
}

Metrics evaluate(const BgaModel& model, const std::vector<EncodedExample>& examples) {
  std::vector<TagSequence> pred, gold;
  for (const auto& ex : examples) {
    pred.push_back(infer(model, ex.ids));
    gold.push_back(ex.tags);
  }
  return score_predictions(pred, gold, model.labels());
}

std::string metrics_json(const Metrics& metrics) {
  auto prf = [](const PrfScore& s) { return ordered_json{{"p", s.precision}, {"r", s.recall}, {"f1", s.f1}}; };
  ordered_json j;
  j["overall"] = prf(metrics.overall);
  j["per_type"] = ordered_json::object();
  for (const auto& [type, s] : metrics.per_type) j["per_type"][type] = prf(s);
  return j.dump(2);
}

std::vector<EpochReport> train(BgaModel& model, const std::vector<EncodedExample>& train_set,
                               const std::vector<EncodedExample>& dev_set, const TrainSettings& settings,
                               const std::function<void(const EpochReport&)>& on_epoch) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (settings.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  const std::size_t per_epoch = (train_set.size() + settings.batch_size - 1) / settings.batch_size;
  AdamW optimizer = make_optimizer(model, settings, per_epoch * settings.epochs);
  Rng rng(model.config().seed ^ 0x7261696eULL);
  Rng sampling = rng.split();

  const auto params = model.parameters();
  std::vector<std::vector<double>> best;
  double best_f1 = -1.0;
  std::vector<EpochReport> history;
  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    EpochReport report;
    report.epoch = epoch + 1;
    for (const auto& batch : make_batches(train_set, settings.batch_size, rng.next_u64())) {
      std::vector<const EncodedExample*> items;
      for (auto i : batch.indices) items.push_back(&train_set[i]);
      auto rec = train_step(model, optimizer, items, sampling);
      report.mean_loss.overall += rec.overall / static_cast<double>(per_epoch);
      report.mean_loss.mner += rec.mner / static_cast<double>(per_epoch);
      report.mean_loss.recon += rec.recon / static_cast<double>(per_epoch);
      report.mean_loss.cycle += rec.cycle / static_cast<double>(per_epoch);
      report.mean_loss.ratio += rec.ratio / static_cast<double>(per_epoch);
    }
    report.dev = evaluate(model, dev_set);
    if (report.dev.overall.f1 > best_f1) {
      best_f1 = report.dev.overall.f1;
      best.clear();
      for (const auto& [name, p] : params) best.emplace_back(p.values().begin(), p.values().end());
    }
    if (on_epoch) on_epoch(report);
    history.push_back(std::move(report));
  }
  for (std::size_t i = 0; i < params.size() && !best.empty(); ++i) {
    Tensor target = params[i].second;
    auto dst = target.values_mut();
    std::copy(best[i].begin(), best[i].end(), dst.begin());
  }
  return history;
}

void save_checkpoint(const BgaModel& model, const std::filesystem::path& path) {
  json header{{"config", config_to_json(model.config())},
              {"vocab", model.vocab().tokens()},
              {"labels", model.labels().labels()}};
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint64_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  const auto params = model.parameters();
  write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_pod(os, static_cast<std::uint64_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<std::uint32_t>(t.rank()));
    for (auto dim : t.shape()) write_pod(os, static_cast<std::uint64_t>(dim));
    auto v = t.values();
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

BgaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  json header;
  try {
    header = json::parse(read_bytes(is, read_pod<std::uint64_t>(is, "header length"), "header"));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  }
  BgaModel model(config_from_json(header.at("config")),
                 Vocab::from_tokens(header.at("vocab").get<std::vector<std::string>>()),
                 LabelSet::from_labels(header.at("labels").get<std::vector<std::string>>()));

  const auto params = model.parameters();
  const auto count = read_pod<std::uint64_t>(is, "tensor count");
  if (count != params.size()) {
    throw DataError(path.string() + ": " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (auto [name, t] : params) {
    const auto stored = read_bytes(is, read_pod<std::uint64_t>(is, "name length"), "tensor name");
    if (stored != name) throw DataError(path.string() + ": expected tensor " + name + ", found " + stored);
    const auto rank = read_pod<std::uint32_t>(is, name + " rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(read_pod<std::uint64_t>(is, name + " shape"));
    if (shape != t.shape()) {
      throw DataError(path.string() + ": tensor " + name + " has shape " + shape_str(shape) + ", model expects " +
                      shape_str(t.shape()));
    }
    auto dst = t.values_mut();
    is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!is) throw DataError(path.string() + ": truncated data for " + name);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes");
  return model;
}

}  // namespace bga

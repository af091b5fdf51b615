#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bga/selfcheck.hpp"
#include "json.hpp"

namespace bga::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::vector<Example> load_split(const fs::path& file, const LabelSet* labels = nullptr) {
  if (!fs::exists(file)) throw DataError("missing data file " + file.string());
  if (file.extension() == ".jsonl") return load_jsonl(file);
  return load_conll(file, labels);
}

ordered_json loss_json(const LossRecord& l) {
  return {{"overall", l.overall}, {"mner", l.mner}, {"recon", l.recon}, {"cycle", l.cycle}, {"ratio", l.ratio}};
}

const Example& sample_at(const std::vector<Example>& examples, std::size_t index, const fs::path& file) {
  if (index >= examples.size()) {
    throw std::out_of_range("sample index " + std::to_string(index) + " out of range: " + file.string() + " has " +
                            std::to_string(examples.size()) + " sentences");
  }
  return examples[index];
}

std::string mask_row(const std::vector<double>& m) {
  std::string s;
  for (double v : m) s += v > 0.5 ? "keep " : "drop ";
  if (!s.empty()) s.pop_back();
  return s;
}

}  // namespace

void gen_data(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  auto corpus = generate_synthetic_corpus(cfg.data, cfg.sizes.train, cfg.sizes.dev, cfg.sizes.test, cfg.seed);
  fs::create_directories(out_dir);
  save_jsonl(out_dir / "train.jsonl", corpus.train);
  save_jsonl(out_dir / "dev.jsonl", corpus.dev);
  save_jsonl(out_dir / "test.jsonl", corpus.test);
  write_file(out_dir / "schema.json", schema_manifest(corpus) + "\n");
  log << "wrote " << corpus.train.size() << "/" << corpus.dev.size() << "/" << corpus.test.size()
      << " sentences to " << out_dir.string() << " (text-only ceiling on test "
      << text_only_ceiling(corpus.test, corpus.schema) << ")\n";
}

void train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir, std::ostream& log) {
  LabelSet labels(cfg.data.types);
  auto train_raw = load_split(resolve_split(data_dir, "train"), &labels);
  auto dev_raw = load_split(resolve_split(data_dir, "dev"), &labels);
  Vocab vocab = Vocab::build(train_raw);
  auto train_set = encode_examples(train_raw, vocab, labels);
  auto dev_set = encode_examples(dev_raw, vocab, labels);

  BgaModel model(cfg.model_config(), vocab, labels);
  log << "training on " << train_set.size() << " sentences, " << nn::count_parameters(model.parameters())
      << " parameters\n";
  ordered_json epochs = ordered_json::array();
  auto history = bga::train(model, train_set, dev_set, cfg.train, [&](const EpochReport& r) {
    log << "epoch " << r.epoch << " loss " << r.mean_loss.overall << " mner " << r.mean_loss.mner << " recon "
        << r.mean_loss.recon << " cycle " << r.mean_loss.cycle << " dev f1 " << r.dev.overall.f1 << "\n";
    epochs.push_back({{"epoch", r.epoch},
                      {"loss", loss_json(r.mean_loss)},
                      {"dev", ordered_json::parse(metrics_json(r.dev))}});
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i)
    if (history[i].dev.overall.f1 > history[best].dev.overall.f1) best = i;

  fs::create_directories(out_dir);
  save_checkpoint(model, out_dir / "model.ckpt");
  ordered_json metrics{{"best_epoch", history.empty() ? 0 : history[best].epoch}, {"epochs", epochs}};
  write_file(out_dir / "metrics.json", metrics.dump(2) + "\n");
  write_file(out_dir / "config.ini", format_run_config(cfg));
  log << "saved " << (out_dir / "model.ckpt").string() << " from epoch "
      << (history.empty() ? 0 : history[best].epoch) << "\n";
}

fs::path resolve_split(const fs::path& data, const std::string& split) {
  if (fs::is_directory(data)) return data / (split + ".jsonl");
  return data;
}

BgaModel open_checkpoint(const fs::path& path, const std::optional<RunConfig>& cfg) {
  BgaModel model = load_checkpoint(path);
  if (!cfg) return model;
  const auto want = cfg->model_config();
  const auto& have = model.config();
  auto check = [&](const char* name, std::size_t a, std::size_t b) {
    if (a != b) {
      throw MismatchError("checkpoint " + path.string() + " declares " + name + " = " + std::to_string(a) +
                          ", config says " + std::to_string(b));
    }
  };
  check("d", have.d, want.d);
  check("heads", have.heads, want.heads);
  check("layers", have.layers, want.layers);
  check("patches", have.patches, want.patches);
  check("raw_dim", have.raw_dim, want.raw_dim);
  check("max_len", have.max_len, want.max_len);
  if (model.labels().types() != cfg->data.types) {
    throw MismatchError("checkpoint " + path.string() + " was trained on different entity types");
  }
  return model;
}

std::string eval(const BgaModel& model, const fs::path& split_file) {
  auto examples = load_split(split_file, &model.labels());
  if (examples.empty()) throw DataError(split_file.string() + ": no sentences to evaluate");
  return metrics_json(evaluate(model, encode_examples(examples, model.vocab(), model.labels())));
}

void infer(const BgaModel& model, const fs::path& text_file, std::ostream& out) {
  std::ifstream in(text_file);
  if (!in) throw DataError("cannot open " + text_file.string());
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    for (std::string t; ss >> t;) tokens.push_back(t);
    if (tokens.empty()) continue;
    auto labels = model.labels().decode(bga::infer(model, model.vocab().encode(tokens)));
    if (!first) out << "\n";
    first = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) out << tokens[i] << "\t" << labels[i] << "\n";
  }
}

void inspect_masks(const BgaModel& model, const fs::path& split_file, std::size_t index, std::ostream& out) {
  auto examples = load_split(split_file, &model.labels());
  const auto& ex = sample_at(examples, index, split_file);
  auto report = bga::inspect_masks(model, encode_example(ex, model.vocab(), model.labels()));
  std::vector<std::string> rows{"[CLS]"};
  rows.insert(rows.end(), ex.tokens.begin(), ex.tokens.end());
  rows.push_back("[SEP]");
  out << "sample " << index << (ex.has_image ? "" : " (no image)") << "\n";
  for (std::size_t l = 0; l < report.text.size(); ++l) {
    out << "layer " << l + 1 << " text:";
    for (std::size_t i = 0; i < rows.size(); ++i) out << " " << rows[i] << "=" << (report.text[l][i] > 0.5 ? 1 : 0);
    out << "\n";
    if (!report.visual[l].empty()) out << "layer " << l + 1 << " patches: " << mask_row(report.visual[l]) << "\n";
  }
}

void align_sim(const BgaModel& model, const fs::path& split_file, std::size_t index, std::size_t k,
               std::uint64_t seed, std::ostream& out) {
  auto examples = load_split(split_file, &model.labels());
  const auto& ex = sample_at(examples, index, split_file);
  if (!ex.has_image) throw std::invalid_argument("sample " + std::to_string(index) + " has no image");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < examples.size(); ++i)
    if (i != index && examples[i].has_image) pool.push_back(i);
  if (pool.size() < k) {
    throw std::invalid_argument("only " + std::to_string(pool.size()) + " other images for " + std::to_string(k) +
                                " distractors");
  }
  Rng rng(seed);
  rng.shuffle(pool);
  pool.resize(k);

  std::vector<std::size_t> sources{index};
  sources.insert(sources.end(), pool.begin(), pool.end());
  std::vector<Tensor> candidates;
  for (auto i : sources) candidates.push_back(encode_example(examples[i], model.vocab(), model.labels()).patches);
  auto scores = alignment_similarity(model, model.vocab().encode(ex.tokens), candidates);

  out << "candidate\tsample\tcosine\n";
  for (std::size_t c = 0; c < scores.size(); ++c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", scores[c]);
    out << (c == 0 ? "paired" : "distractor") << "\t" << sources[c] << "\t" << buf << "\n";
  }
  const bool wins = std::all_of(scores.begin() + 1, scores.end(), [&](double s) { return scores[0] > s; });
  out << "paired image ranks first: " << (wins ? "yes" : "no") << "\n";
}

bool gradcheck(std::uint64_t seed, std::ostream& out) {
  auto entries = run_gradient_suite(seed);
  double leaf_max = 0.0, all_max = 0.0;
  bool ok = true;
  for (const auto& e : entries) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-22s %.3e (tol %.0e) %s", e.name.c_str(), e.max_rel_error, e.tolerance,
                  e.passed() ? "ok" : "FAIL");
    out << buf << "\n";
    ok = ok && e.passed();
    all_max = std::max(all_max, e.max_rel_error);
    if (e.leaf_op) leaf_max = std::max(leaf_max, e.max_rel_error);
  }
  char buf[120];
  std::snprintf(buf, sizeof(buf), "%s max rel error %.3e (leaf ops %.3e)", ok ? "PASS" : "FAIL", all_max, leaf_max);
  out << buf << "\n";
  return ok;
}

}  // namespace bga::cli

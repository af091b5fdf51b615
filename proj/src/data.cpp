#include "bga/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace bga {

using nlohmann::json;

void SyntheticSchema::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synthetic schema: " + msg); };
  if (types.empty()) fail("no entity types");
  if (std::set<std::string>(types.begin(), types.end()).size() != types.size()) fail("duplicate entity types");
  if (types.size() >= raw_dim) fail("raw_dim must exceed the number of types");
  if (max_mentions == 0) fail("max_mentions must be at least 1");
  if (patches < max_mentions) fail("patches must be at least max_mentions");
  if (forms_per_type == 0) fail("forms_per_type must be at least 1");
  if (!(ambiguity >= 0.0 && ambiguity <= 1.0)) fail("ambiguity must lie in [0, 1]");
  if (!(missing_image >= 0.0 && missing_image < 1.0)) fail("missing_image must lie in [0, 1)");
  if (!(two_token_forms >= 0.0 && two_token_forms <= 1.0)) fail("two_token_forms must lie in [0, 1]");
  if (!(patch_noise >= 0.0)) fail("patch_noise must be non-negative");
  if (context_words == 0) fail("context_words must be at least 1");
  if (min_words == 0 || max_words < min_words) fail("sentence length range is empty");
  if (max_words < 2 * max_mentions) fail("max_words must fit max_mentions two-token mentions");
  const std::size_t total = types.size() * forms_per_type;
  const auto ambiguous = static_cast<std::size_t>(std::llround(ambiguity * static_cast<double>(total)));
  if (ambiguous > 0 && types.size() < 2) fail("ambiguous forms need at least two types");
  if (missing_image > 0.0 && total - ambiguous < types.size()) {
    fail("image-missing sentences need an unambiguous form for every type");
  }
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  for (auto& e : v) e /= n;
}

// Random orthonormal basis of R^d by Gram-Schmidt on Gaussian vectors.
std::vector<std::vector<double>> orthonormal_basis(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < d) {
    std::vector<double> v(d);
    for (auto& e : v) e = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) {
        const double c = dot(v, b);
        for (std::size_t i = 0; i < d; ++i) v[i] -= c * b[i];
      }
    if (std::sqrt(dot(v, v)) < 1e-6) continue;
    normalize(v);
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace

SchemaInstance instantiate_schema(const SyntheticSchema& schema, Rng& rng) {
  schema.validate();
  SchemaInstance inst;
  inst.schema = schema;
  const std::size_t T = schema.types.size();
  auto basis = orthonormal_basis(schema.raw_dim, rng);
  inst.archetypes.assign(basis.begin(), basis.begin() + static_cast<std::ptrdiff_t>(T));
  inst.distractor_basis.assign(basis.begin() + static_cast<std::ptrdiff_t>(T), basis.end());

  const std::size_t total = T * schema.forms_per_type;
  const auto ambiguous = static_cast<std::size_t>(std::llround(schema.ambiguity * static_cast<double>(total)));
  const std::size_t unambiguous = total - ambiguous;
  inst.forms_of_type.assign(T, {});
  for (std::size_t f = 0; f < total; ++f) {
    SurfaceForm form;
    const std::string stem = "ent" + std::to_string(f);
    form.tokens.push_back(stem);
    if (rng.uniform() < schema.two_token_forms) form.tokens.push_back(stem + "x");
    if (f < unambiguous) {
      form.types = {f % T};
    } else {
      const std::size_t j = f - unambiguous;
      form.types = {j % T, (j + 1) % T};
      std::sort(form.types.begin(), form.types.end());
    }
    for (auto t : form.types) inst.forms_of_type[t].push_back(f);
    inst.forms.push_back(std::move(form));
  }
  for (std::size_t w = 0; w < schema.context_words; ++w) inst.context.push_back("w" + std::to_string(w));
  return inst;
}

namespace {

struct Mention {
  std::size_t type;
  std::size_t form;
};

Example sample_example(const SchemaInstance& inst, Rng& rng, double& min_cos) {
  const auto& s = inst.schema;
  const std::size_t T = s.types.size();
  Example ex;
  ex.has_image = !(rng.uniform() < s.missing_image);

  const std::size_t k = 1 + rng.below(s.max_mentions);
  std::vector<Mention> mentions;
  std::size_t mention_tokens = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t t = rng.below(T);
    std::vector<std::size_t> pool;
    for (auto f : inst.forms_of_type[t])
      if (ex.has_image || inst.forms[f].types.size() == 1) pool.push_back(f);
    const std::size_t f = pool[rng.below(pool.size())];
    mentions.push_back({t, f});
    mention_tokens += inst.forms[f].tokens.size();
  }
  const std::size_t lo = std::max(s.min_words, mention_tokens);
  const std::size_t words = lo + rng.below(s.max_words - lo + 1);

  // Item order: mention indices and context slots (-1), shuffled together.
  std::vector<long> items;
  for (std::size_t i = 0; i < k; ++i) items.push_back(static_cast<long>(i));
  for (std::size_t i = 0; i < words - mention_tokens; ++i) items.push_back(-1);
  rng.shuffle(items);
  for (long it : items) {
    if (it < 0) {
      ex.tokens.push_back(inst.context[rng.below(inst.context.size())]);
      ex.tags.push_back("O");
      continue;
    }
    const auto& m = mentions[static_cast<std::size_t>(it)];
    const auto& form = inst.forms[m.form];
    for (std::size_t j = 0; j < form.tokens.size(); ++j) {
      ex.tokens.push_back(form.tokens[j]);
      ex.tags.push_back((j == 0 ? "B-" : "I-") + s.types[m.type]);
    }
  }

  if (ex.has_image) {
    const double noise = s.patch_noise / std::sqrt(static_cast<double>(s.raw_dim));
    std::vector<std::size_t> slots(s.patches);
    std::iota(slots.begin(), slots.end(), 0);
    rng.shuffle(slots);
    ex.patches.assign(s.patches, std::vector<double>(s.raw_dim, 0.0));
    for (std::size_t p = 0; p < s.patches; ++p) {
      auto& row = ex.patches[slots[p]];
      if (p < k) {
        row = inst.archetypes[mentions[p].type];
      } else {
        for (const auto& b : inst.distractor_basis) {
          const double c = rng.normal();
          for (std::size_t i = 0; i < s.raw_dim; ++i) row[i] += c * b[i];
        }
        normalize(row);
      }
      for (auto& e : row) e += noise * rng.normal();
    }
    for (const auto& m : mentions) {
      double best = -1.0;
      for (const auto& row : ex.patches) best = std::max(best, cosine(row, inst.archetypes[m.type]));
      min_cos = std::min(min_cos, best);
    }
  }
  return ex;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticSchema& schema, std::size_t n_train, std::size_t n_dev,
                                          std::size_t n_test, std::uint64_t seed) {
  if (n_train == 0 || n_dev == 0 || n_test == 0) throw std::invalid_argument("synthetic corpus: split sizes must be positive");
  Rng rng(seed);
  Rng schema_rng = rng.split();
  SyntheticCorpus corpus;
  corpus.schema = instantiate_schema(schema, schema_rng);
  auto fill = [&](std::vector<Example>& out, std::size_t n) {
    Rng split_rng = rng.split();
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_example(corpus.schema, split_rng, corpus.min_gold_cosine));
  };
  fill(corpus.train, n_train);
  fill(corpus.dev, n_dev);
  fill(corpus.test, n_test);
  return corpus;
}

namespace {

// Locates surface forms in a token sequence: (start, form index) pairs.
std::vector<std::pair<std::size_t, std::size_t>> find_forms(const std::vector<std::string>& tokens,
                                                            const SchemaInstance& schema) {
  std::map<std::string, std::size_t> first;
  for (std::size_t f = 0; f < schema.forms.size(); ++f) first.emplace(schema.forms[f].tokens.front(), f);
  std::vector<std::pair<std::size_t, std::size_t>> found;
  for (std::size_t i = 0; i < tokens.size();) {
    auto it = first.find(tokens[i]);
    if (it == first.end()) {
      ++i;
      continue;
    }
    found.emplace_back(i, it->second);
    i += schema.forms[it->second].tokens.size();
  }
  return found;
}

}  // namespace

double text_only_ceiling(const std::vector<Example>& examples, const SchemaInstance& schema) {
  double expected_tp = 0.0;
  std::size_t mentions = 0;
  for (const auto& ex : examples) {
    for (const auto& [start, form] : find_forms(ex.tokens, schema)) {
      expected_tp += 1.0 / static_cast<double>(schema.forms[form].types.size());
      ++mentions;
    }
  }
  return mentions == 0 ? 1.0 : expected_tp / static_cast<double>(mentions);
}

std::vector<std::vector<std::string>> text_only_oracle_tags(const std::vector<Example>& train,
                                                            const std::vector<Example>& examples,
                                                            const SchemaInstance& schema) {
  const std::size_t T = schema.schema.types.size();
  std::vector<std::vector<std::size_t>> counts(schema.forms.size(), std::vector<std::size_t>(T, 0));
  std::map<std::string, std::size_t> type_index;
  for (std::size_t t = 0; t < T; ++t) type_index[schema.schema.types[t]] = t;
  for (const auto& ex : train) {
    for (const auto& [start, form] : find_forms(ex.tokens, schema)) {
      const std::string& tag = ex.tags[start];
      if (tag.size() > 2) ++counts[form][type_index.at(tag.substr(2))];
    }
  }
  std::vector<std::vector<std::string>> out;
  for (const auto& ex : examples) {
    std::vector<std::string> tags(ex.tokens.size(), "O");
    for (const auto& [start, form] : find_forms(ex.tokens, schema)) {
      std::size_t best = schema.forms[form].types.front();
      for (auto t : schema.forms[form].types)
        if (counts[form][t] > counts[form][best]) best = t;
      const auto& type = schema.schema.types[best];
      for (std::size_t j = 0; j < schema.forms[form].tokens.size(); ++j) tags[start + j] = (j == 0 ? "B-" : "I-") + type;
    }
    out.push_back(std::move(tags));
  }
  return out;
}

std::map<std::string, double> type_proportions(const std::vector<Example>& examples) {
  std::map<std::string, double> counts;
  double total = 0.0;
  for (const auto& ex : examples) {
    for (const auto& span : bio_spans(ex.tags)) {
      counts[span.type] += 1.0;
      total += 1.0;
    }
  }
  if (total > 0.0)
    for (auto& [type, c] : counts) c /= total;
  return counts;
}

std::string schema_manifest(const SyntheticCorpus& corpus) {
  const auto& inst = corpus.schema;
  const auto& s = inst.schema;
  json j;
  j["types"] = s.types;
  j["raw_dim"] = s.raw_dim;
  j["patches"] = s.patches;
  j["ambiguity"] = s.ambiguity;
  j["missing_image"] = s.missing_image;
  j["patch_noise"] = s.patch_noise;
  j["archetypes"] = inst.archetypes;
  json forms = json::array();
  for (const auto& f : inst.forms) {
    json types = json::array();
    for (auto t : f.types) types.push_back(s.types[t]);
    forms.push_back({{"tokens", f.tokens}, {"types", types}});
  }
  j["forms"] = forms;
  j["min_gold_cosine"] = corpus.min_gold_cosine;
  j["sizes"] = {{"train", corpus.train.size()}, {"dev", corpus.dev.size()}, {"test", corpus.test.size()}};
  j["text_only_ceiling"] = text_only_ceiling(corpus.test, inst);
  return j.dump(2);
}

void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[32];
  for (const auto& ex : examples) {
    out << "{\"tokens\": " << json(ex.tokens).dump() << ", \"tags\": " << json(ex.tags).dump() << ", \"patches\": ";
    if (!ex.has_image) {
      out << "null";
    } else {
      out << '[';
      for (std::size_t r = 0; r < ex.patches.size(); ++r) {
        out << (r ? ", [" : "[");
        for (std::size_t c = 0; c < ex.patches[r].size(); ++c) {
          std::snprintf(buf, sizeof buf, "%.17g", ex.patches[r][c]);
          out << (c ? ", " : "") << buf;
        }
        out << ']';
      }
      out << ']';
    }
    out << ", \"has_image\": " << (ex.has_image ? "true" : "false") << "}\n";
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<Example> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const json j = json::parse(line);
      Example ex;
      ex.tokens = j.at("tokens").get<std::vector<std::string>>();
      ex.tags = j.at("tags").get<std::vector<std::string>>();
      ex.has_image = j.at("has_image").get<bool>();
      const auto& p = j.at("patches");
      if (!p.is_null()) ex.patches = p.get<std::vector<std::vector<double>>>();
      if (ex.tokens.size() != ex.tags.size()) throw DataError(where + "tokens and tags differ in length");
      if (ex.has_image == ex.patches.empty()) throw DataError(where + "has_image disagrees with patches");
      for (const auto& row : ex.patches)
        if (row.empty() || row.size() != ex.patches.front().size()) throw DataError(where + "ragged patch rows");
      if (auto bad = first_illegal_bio(ex.tags)) {
        throw DataError(where + "illegal BIO tag " + ex.tags[*bad] + " at token " + std::to_string(*bad));
      }
      examples.push_back(std::move(ex));
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(where + e.what());
    }
  }
  return examples;
}

std::vector<Example> load_conll(const std::filesystem::path& path, const LabelSet* labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<Example> examples;
  Example current;
  std::vector<std::size_t> lines;
  auto finish = [&]() {
    if (current.tokens.empty()) return;
    if (auto bad = first_illegal_bio(current.tags)) {
      throw DataError(path.string() + ":" + std::to_string(lines[*bad]) + ": illegal BIO tag " + current.tags[*bad] +
                      " (I- must continue an entity of the same type)");
    }
    examples.push_back(std::move(current));
    current = Example{};
    lines.clear();
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) {
      finish();
      continue;
    }
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos || tab == 0 ||
        tab + 1 == line.size()) {
      throw DataError(where + "expected \"token<TAB>label\"");
    }
    std::string token = line.substr(0, tab), label = line.substr(tab + 1);
    const bool shaped = label == "O" || (label.size() > 2 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-');
    if (!shaped || (labels != nullptr && labels->labels().end() ==
                                             std::find(labels->labels().begin(), labels->labels().end(), label))) {
      throw DataError(where + "unknown label " + label);
    }
    current.tokens.push_back(std::move(token));
    current.tags.push_back(std::move(label));
    lines.push_back(line_no);
  }
  finish();
  return examples;
}

Vocab::Vocab() : tokens_{"[PAD]", "[CLS]", "[SEP]", "[UNK]"} {
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], i);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  static const std::vector<std::string> specials{"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw std::invalid_argument("vocab: must start with [PAD] [CLS] [SEP] [UNK]");
  }
  Vocab v;
  v.tokens_ = tokens;
  v.ids_.clear();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!v.ids_.emplace(tokens[i], i).second) throw std::invalid_argument("vocab: duplicate token " + tokens[i]);
  }
  return v;
}

Vocab Vocab::build(const std::vector<Example>& examples) {
  std::set<std::string> seen;
  for (const auto& ex : examples) seen.insert(ex.tokens.begin(), ex.tokens.end());
  std::vector<std::string> tokens{"[PAD]", "[CLS]", "[SEP]", "[UNK]"};
  for (const auto& t : seen)
    if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
  return from_tokens(tokens);
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<std::size_t> Vocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

EncodedExample encode_example(const Example& example, const Vocab& vocab, const LabelSet& labels) {
  EncodedExample out;
  out.ids = vocab.encode(example.tokens);
  out.tags = labels.encode(example.tags);
  out.has_image = example.has_image;
  if (example.has_image) {
    const std::size_t rows = example.patches.size(), cols = example.patches.front().size();
    std::vector<double> flat;
    flat.reserve(rows * cols);
    for (const auto& r : example.patches) flat.insert(flat.end(), r.begin(), r.end());
    out.patches = Tensor({rows, cols}, std::move(flat));
  }
  return out;
}

std::vector<EncodedExample> encode_examples(const std::vector<Example>& examples, const Vocab& vocab,
                                            const LabelSet& labels) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(encode_example(ex, vocab, labels));
  return out;
}

std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(order);
  }
  std::vector<Batch> batches;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    Batch b;
    const std::size_t end = std::min(order.size(), begin + batch_size);
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
    for (auto i : b.indices) {
      b.lengths.push_back(examples[i].ids.size());
      b.width = std::max(b.width, examples[i].ids.size());
    }
    b.ids.assign(b.indices.size() * b.width, Vocab::kPad);
    b.tags.assign(b.indices.size() * b.width, kIgnoreTag);
    for (std::size_t r = 0; r < b.indices.size(); ++r) {
      const auto& ex = examples[b.indices[r]];
      std::copy(ex.ids.begin(), ex.ids.end(), b.ids.begin() + static_cast<std::ptrdiff_t>(r * b.width));
      std::copy(ex.tags.begin(), ex.tags.end(), b.tags.begin() + static_cast<std::ptrdiff_t>(r * b.width));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<std::size_t> unpadded_ids(const Batch& batch, std::size_t b) {
  auto begin = batch.ids.begin() + static_cast<std::ptrdiff_t>(b * batch.width);
  return {begin, begin + static_cast<std::ptrdiff_t>(batch.lengths.at(b))};
}

TagSequence unpadded_tags(const Batch& batch, std::size_t b) {
  auto begin = batch.tags.begin() + static_cast<std::ptrdiff_t>(b * batch.width);
  return {begin, begin + static_cast<std::ptrdiff_t>(batch.lengths.at(b))};
}

}  // namespace bga

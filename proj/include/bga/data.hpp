#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bga/bio.hpp"
#include "bga/rng.hpp"
#include "bga/tensor.hpp"

namespace bga {

/// Malformed or illegal input data; the message carries file and line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One sentence with its gold labels and, optionally, its image patches.
struct Example {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
  std::vector<std::vector<double>> patches;  // N_v rows of d_raw; empty when has_image is false
  bool has_image = false;
};

/// Parameters of the synthetic paired corpus.
struct SyntheticSchema {
  std::vector<std::string> types{"PER", "LOC", "ORG", "MISC"};
  std::size_t raw_dim = 16;
  std::size_t patches = 8;           // N_v; mentions take one patch each, distractors fill the rest
  std::size_t forms_per_type = 12;   // surface forms in total = types * forms_per_type
  double ambiguity = 0.5;            // rho: fraction of forms legal under two types
  double two_token_forms = 0.3;      // probability that a form spans two tokens
  std::size_t context_words = 60;
  std::size_t min_words = 5;
  std::size_t max_words = 12;
  std::size_t max_mentions = 3;
  double patch_noise = 0.3;          // sigma
  double missing_image = 0.1;        // mu

  /// Throws std::invalid_argument on an inconsistent schema.
  void validate() const;
};

/// A surface form and the entity types it may carry.
struct SurfaceForm {
  std::vector<std::string> tokens;
  std::vector<std::size_t> types;
};

/// The realized schema: archetype directions and lexicon, fixed by the seed.
struct SchemaInstance {
  SyntheticSchema schema;
  std::vector<std::vector<double>> archetypes;  // one unit vector per type
  std::vector<std::vector<double>> distractor_basis;  // orthonormal complement of the archetypes
  std::vector<SurfaceForm> forms;
  std::vector<std::string> context;
  /// Forms legal under each type (indices into `forms`).
  std::vector<std::vector<std::size_t>> forms_of_type;
};

SchemaInstance instantiate_schema(const SyntheticSchema& schema, Rng& rng);

struct SyntheticCorpus {
  SchemaInstance schema;
  std::vector<Example> train, dev, test;
  /// Smallest, over image-bearing sentences and their mentions, of the largest
  /// cosine between a patch and the mention's archetype.
  double min_gold_cosine = 1.0;
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticSchema& schema, std::size_t n_train, std::size_t n_dev,
                                          std::size_t n_test, std::uint64_t seed);

/// Expected micro-F1 of the best image-blind tagger: every mention is located
/// exactly and typed correctly with probability 1/k for a form legal under k types.
double text_only_ceiling(const std::vector<Example>& examples, const SchemaInstance& schema);

/// Image-blind reference tagger: each form gets the lowest-index type among the
/// most frequent gold types for that form in `train`.
std::vector<std::vector<std::string>> text_only_oracle_tags(const std::vector<Example>& train,
                                                            const std::vector<Example>& examples,
                                                            const SchemaInstance& schema);

/// Gold entity types carried by examples, as fractions of all mentions.
std::map<std::string, double> type_proportions(const std::vector<Example>& examples);

/// JSON description of the realized schema (types, archetypes, lexicon,
/// min_gold_cosine) written next to a generated corpus.
std::string schema_manifest(const SyntheticCorpus& corpus);

/// JSON-lines persistence; patch values are written with 17 significant digits.
void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples);
std::vector<Example> load_jsonl(const std::filesystem::path& path);

/// Tab-separated "token<TAB>label" lines, blank line between sentences.
/// Gold BIO must be legal; with a label set, labels must belong to it.
std::vector<Example> load_conll(const std::filesystem::path& path, const LabelSet* labels = nullptr);

class Vocab {
 public:
  static constexpr std::size_t kPad = 0, kCls = 1, kSep = 2, kUnk = 3;

  Vocab();
  /// Specials followed by the distinct tokens of `examples` in sorted order.
  static Vocab build(const std::vector<Example>& examples);
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;  // kUnk when absent
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> ids_;
};

/// Model-ready example: word ids, label indices, patches as an N_v x d_raw tensor.
struct EncodedExample {
  std::vector<std::size_t> ids;
  TagSequence tags;
  Tensor patches;  // undefined when has_image is false
  bool has_image = false;
};

EncodedExample encode_example(const Example& example, const Vocab& vocab, const LabelSet& labels);
std::vector<EncodedExample> encode_examples(const std::vector<Example>& examples, const Vocab& vocab,
                                            const LabelSet& labels);

inline constexpr std::size_t kIgnoreTag = static_cast<std::size_t>(-1);

/// A padded batch. Row b of `ids`/`tags` holds example `indices[b]` padded to
/// `width` with Vocab::kPad / kIgnoreTag.
struct Batch {
  std::vector<std::size_t> indices;
  std::vector<std::size_t> lengths;
  std::size_t width = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> tags;
};

/// Splits examples into batches of `batch_size` (last one smaller). With a
/// seed the order is a deterministic shuffle.
std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// Drops the padding of row b.
std::vector<std::size_t> unpadded_ids(const Batch& batch, std::size_t b);
TagSequence unpadded_tags(const Batch& batch, std::size_t b);

}  // namespace bga

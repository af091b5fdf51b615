#pragma once

#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "bga/crf.hpp"

namespace bga {

/// BIO label inventory. Index 0 is always "O"; each type X contributes
/// "B-X" then "I-X" in the order the types were given.
class LabelSet {
 public:
  LabelSet() : LabelSet(std::vector<std::string>{}) {}
  explicit LabelSet(std::vector<std::string> types);

  /// Rebuilds a label set from its full label list (as written to checkpoints).
  static LabelSet from_labels(const std::vector<std::string>& labels);

  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& types() const { return types_; }

  /// Throws std::invalid_argument for an unknown label string.
  std::size_t index(const std::string& label) const;
  const std::string& label(std::size_t index) const;

  TagSequence encode(std::span<const std::string> labels) const;
  std::vector<std::string> decode(const TagSequence& tags) const;

 private:
  std::vector<std::string> types_;
  std::vector<std::string> labels_;
  std::map<std::string, std::size_t> index_;
};

struct Span {
  std::size_t start;
  std::size_t end;  // inclusive
  std::string type;
  auto operator<=>(const Span&) const = default;
};
using SpanSet = std::set<Span>;

/// Maximal entity spans. A stray I-X (after O, or after a different type)
/// opens a new span as if it were B-X. Throws std::invalid_argument on a
/// label that is not O, B-*, or I-*.
SpanSet bio_spans(std::span<const std::string> labels);
SpanSet bio_spans(const TagSequence& tags, const LabelSet& labels);

/// Strict check used for gold data: returns the position of the first I-X
/// that does not continue an X entity, or nullopt if the sequence is legal.
std::optional<std::size_t> first_illegal_bio(std::span<const std::string> labels);

struct PrfScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

/// Exact-match span scores pooled over the corpus. Both sides empty corpus-wide
/// gives (1, 1, 1); a zero denominator otherwise gives 0.
PrfScore span_micro_f1(const std::vector<SpanSet>& pred, const std::vector<SpanSet>& gold);

/// Same score restricted to spans of one type.
PrfScore span_micro_f1(const std::vector<SpanSet>& pred, const std::vector<SpanSet>& gold,
                       const std::string& type);

}  // namespace bga

#include "bga/bio.hpp"

#include <stdexcept>

namespace bga {

namespace {

struct Parsed {
  char prefix;  // 'O', 'B' or 'I'
  std::string type;
};

Parsed parse(const std::string& label) {
  if (label == "O") return {'O', {}};
  if (label.size() > 2 && (label[0] == 'B' || label[0] == 'I') && label[1] == '-') {
    return {label[0], label.substr(2)};
  }
  throw std::invalid_argument("unknown BIO label '" + label + "'");
}

}  // namespace

LabelSet::LabelSet(std::vector<std::string> types) : types_(std::move(types)) {
  labels_.push_back("O");
  for (const auto& t : types_) {
    if (t.empty()) throw std::invalid_argument("label set: empty entity type");
    labels_.push_back("B-" + t);
    labels_.push_back("I-" + t);
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!index_.emplace(labels_[i], i).second) {
      throw std::invalid_argument("label set: duplicate label " + labels_[i]);
    }
  }
}

LabelSet LabelSet::from_labels(const std::vector<std::string>& labels) {
  std::vector<std::string> types;
  for (std::size_t i = 1; i < labels.size(); i += 2) types.push_back(parse(labels[i]).type);
  LabelSet set(types);
  if (set.labels() != labels) throw std::invalid_argument("label set: labels are not in canonical BIO order");
  return set;
}

std::size_t LabelSet::index(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) throw std::invalid_argument("unknown label '" + label + "'");
  return it->second;
}

const std::string& LabelSet::label(std::size_t i) const {
  if (i >= labels_.size()) throw std::out_of_range("label index " + std::to_string(i) + " out of range");
  return labels_[i];
}

TagSequence LabelSet::encode(std::span<const std::string> labels) const {
  TagSequence out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(index(l));
  return out;
}

std::vector<std::string> LabelSet::decode(const TagSequence& tags) const {
  std::vector<std::string> out;
  out.reserve(tags.size());
  for (auto t : tags) out.push_back(label(t));
  return out;
}

SpanSet bio_spans(std::span<const std::string> labels) {
  SpanSet spans;
  std::optional<Span> open;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Parsed p = parse(labels[i]);
    const bool continues = p.prefix == 'I' && open && open->type == p.type;
    if (continues) {
      open->end = i;
      continue;
    }
    if (open) spans.insert(*open);
    open.reset();
    if (p.prefix != 'O') open = Span{i, i, p.type};
  }
  if (open) spans.insert(*open);
  return spans;
}

SpanSet bio_spans(const TagSequence& tags, const LabelSet& labels) {
  const auto strings = labels.decode(tags);
  return bio_spans(strings);
}

std::optional<std::size_t> first_illegal_bio(std::span<const std::string> labels) {
  std::string current;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Parsed p = parse(labels[i]);
    if (p.prefix == 'I' && p.type != current) return i;
    current = p.prefix == 'O' ? std::string{} : p.type;
  }
  return std::nullopt;
}

namespace {

PrfScore score(std::size_t tp, std::size_t predicted, std::size_t gold) {
  PrfScore s{0.0, 0.0, 0.0, tp, predicted, gold};
  if (predicted == 0 && gold == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  if (predicted > 0) s.precision = static_cast<double>(tp) / static_cast<double>(predicted);
  if (gold > 0) s.recall = static_cast<double>(tp) / static_cast<double>(gold);
  // Harmonic mean of P and R, written so the value takes a single rounding.
  if (tp > 0) s.f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + gold);
  return s;
}

template <class Keep>
PrfScore pooled(const std::vector<SpanSet>& pred, const std::vector<SpanSet>& gold, Keep keep) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("span_micro_f1: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(gold.size()) + " gold sentences");
  }
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (const auto& s : pred[i]) {
      if (!keep(s)) continue;
      ++np;
      if (gold[i].count(s)) ++tp;
    }
    for (const auto& s : gold[i]) ng += keep(s) ? 1 : 0;
  }
  return score(tp, np, ng);
}

}  // namespace

PrfScore span_micro_f1(const std::vector<SpanSet>& pred, const std::vector<SpanSet>& gold) {
  return pooled(pred, gold, [](const Span&) { return true; });
}

PrfScore span_micro_f1(const std::vector<SpanSet>& pred, const std::vector<SpanSet>& gold,
                       const std::string& type) {
  return pooled(pred, gold, [&](const Span& s) { return s.type == type; });
}

}  // namespace bga

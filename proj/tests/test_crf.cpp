#include <algorithm>
#include <cmath>
#include <numeric>

#include "bga/bio.hpp"
#include "bga/crf.hpp"
#include "bga/gradcheck.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bga;
using bga::testing::random_tensor;

namespace {

CrfParams random_crf(std::size_t L, Rng& rng) {
  CrfParams p = CrfParams::init(L);
  p.transitions = random_tensor({L, L}, rng, 1.0, true);
  p.start_scores = random_tensor({L}, rng, 1.0, true);
  return p;
}

TagSequence random_tags(std::size_t n, std::size_t L, Rng& rng) {
  TagSequence t(n);
  for (auto& e : t) e = rng.below(L);
  return t;
}

// Independent probability of one sequence: exp(score) / sum over all sequences,
// summed directly in linear space (the instances are small and scores O(1)).
double enumerated_probability(const Tensor& e, const TagSequence& tags, const CrfParams& p) {
  const std::size_t n = e.rows(), L = p.labels();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= L;
  double z = 0.0;
  TagSequence t(n);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = n; i-- > 0;) {
      t[i] = c % L;
      c /= L;
    }
    z += std::exp(path_score(e, t, p));
  }
  return std::exp(path_score(e, tags, p)) / z;
}

SpanSet spans(std::initializer_list<Span> s) { return SpanSet(s); }

}  // namespace

TEST_CASE("crf_log_partition examples") {
  SUBCASE("n=1 is a log-sum-exp of the emissions") {
    auto p = CrfParams::init(2);
    auto e = Tensor::matrix({{0.3, -1.7}});
    CHECK(std::abs(crf_log_partition(e, p).item() - std::log(std::exp(0.3) + std::exp(-1.7))) <= 1e-15);
    CHECK(std::abs(brute_force_log_partition(e, p) - std::log(std::exp(0.3) + std::exp(-1.7))) <= 1e-15);
  }
  SUBCASE("all-zero scores count sequences") {
    auto p = CrfParams::init(4);
    CHECK(std::abs(crf_log_partition(Tensor::zeros({3, 4}), p).item() - 3 * std::log(4.0)) <= 1e-14);
  }
  SUBCASE("shape errors") {
    auto p = CrfParams::init(3);
    CHECK_THROWS_AS(crf_log_partition(Tensor::zeros({2, 4}), p), DimensionError);
    CHECK_THROWS_AS(CrfParams::init(0), std::invalid_argument);
  }
}

TEST_CASE("brute force oracle agreement on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6), L = 1 + rng.below(5);
    auto p = random_crf(L, rng);
    auto e = random_tensor({n, L}, rng, 2.0);
    const double log_z = crf_log_partition(e, p).item();
    CHECK(std::abs(log_z - brute_force_log_partition(e, p)) <= 1e-10);

    auto best = brute_force_best(e, p);
    auto decoded = viterbi_decode(e, p);
    CHECK(std::abs(path_score(e, decoded, p) - best.score) <= 1e-10);
    CHECK(log_z >= best.score - 1e-12);

    auto tags = random_tags(n, L, rng);
    const double nll = crf_nll(e, tags, p).item();
    CHECK(nll >= 0.0);
    CHECK(std::abs(nll + std::log(enumerated_probability(e, tags, p))) <= 1e-10);
  }
}

TEST_CASE("brute force limits") {
  auto p = CrfParams::init(10);
  CHECK_THROWS_AS(brute_force_log_partition(Tensor::zeros({7, 10}), p), std::length_error);
  CHECK_NOTHROW(brute_force_log_partition(Tensor::zeros({6, 10}), p));
}

TEST_CASE("crf_nll examples") {
  SUBCASE("single label is certain") {
    Rng rng(12);
    auto p = random_crf(1, rng);
    auto e = random_tensor({4, 1}, rng);
    CHECK(std::abs(crf_nll(e, TagSequence(4, 0), p).item()) <= 1e-12);
  }
  SUBCASE("n=1 reduces to softmax cross entropy") {
    auto p = CrfParams::init(2);
    const double a = 1.25, b = -0.5;
    auto e = Tensor::matrix({{a, b}});
    CHECK(std::abs(crf_nll(e, {0}, p).item() - (-a + std::log(std::exp(a) + std::exp(b)))) <= 1e-15);
  }
  SUBCASE("dominant sequence has near-zero loss") {
    auto p = CrfParams::init(3);
    auto e = Tensor::matrix({{60, 0, 0}, {0, 60, 0}, {0, 0, 60}});
    CHECK(crf_nll(e, {0, 1, 2}, p).item() <= 1e-9);
  }
  SUBCASE("tag errors") {
    auto p = CrfParams::init(3);
    CHECK_THROWS_AS(crf_nll(Tensor::zeros({2, 3}), {0, 3}, p), std::out_of_range);
    CHECK_THROWS_AS(crf_nll(Tensor::zeros({2, 3}), {0}, p), DimensionError);
  }
}

TEST_CASE("viterbi examples") {
  SUBCASE("ties resolve to label 0") {
    auto p = CrfParams::init(4);
    CHECK(viterbi_decode(Tensor::zeros({5, 4}), p) == TagSequence(5, 0));
  }
  SUBCASE("diagonal transitions with a dominant start keep one label") {
    auto p = CrfParams::init(3);
    p.transitions = Tensor::matrix({{5, -5, -5}, {-5, 5, -5}, {-5, -5, 5}});
    Rng rng(13);
    auto e = random_tensor({6, 3}, rng, 0.5);
    auto v = e.to_vector();
    v[2] += 20.0;
    CHECK(viterbi_decode(Tensor({6, 3}, v), p) == TagSequence(6, 2));
  }
}

TEST_CASE("forward algorithm gradients match finite differences") {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(5), L = 1 + rng.below(4);
    auto p = random_crf(L, rng);
    auto e = random_tensor({n, L}, rng, 1.0, true);
    auto tags = random_tags(n, L, rng);
    auto r1 = check_parameter_gradients([&] { return crf_log_partition(e, p); }, {e, p.transitions, p.start_scores}, 1e-5);
    CHECK(r1.max_rel_error <= 1e-6);
    auto r2 = check_parameter_gradients([&] { return crf_nll(e, tags, p); }, {e, p.transitions, p.start_scores}, 1e-5);
    CHECK(r2.max_rel_error <= 1e-6);
  }
}

TEST_CASE("label set") {
  LabelSet set({"PER", "LOC"});
  CHECK(set.labels() == std::vector<std::string>{"O", "B-PER", "I-PER", "B-LOC", "I-LOC"});
  CHECK(set.index("I-LOC") == 4);
  CHECK_THROWS_AS(set.index("B-ORG"), std::invalid_argument);
  CHECK(LabelSet::from_labels(set.labels()).types() == set.types());
  CHECK_THROWS_AS(LabelSet::from_labels({"O", "I-PER", "B-PER"}), std::invalid_argument);
}

TEST_CASE("bio_spans") {
  using V = std::vector<std::string>;
  CHECK(bio_spans(V{"B-PER", "I-PER", "O"}) == spans({{0, 1, "PER"}}));
  CHECK(bio_spans(V{"O", "I-LOC"}) == spans({{1, 1, "LOC"}}));
  CHECK(bio_spans(V{"O", "O", "O"}).empty());
  CHECK(bio_spans(V{"B-PER", "I-LOC", "I-LOC", "B-LOC"}) == spans({{0, 0, "PER"}, {1, 2, "LOC"}, {3, 3, "LOC"}}));
  CHECK(bio_spans(V{}).empty());
  CHECK_THROWS_AS(bio_spans(V{"O", "X-PER"}), std::invalid_argument);

  CHECK(first_illegal_bio(V{"B-PER", "I-PER", "O"}) == std::nullopt);
  CHECK(first_illegal_bio(V{"O", "I-LOC"}) == 1u);
  CHECK(first_illegal_bio(V{"B-PER", "I-LOC"}) == 1u);

  LabelSet set({"PER", "LOC"});
  CHECK(bio_spans(TagSequence{1, 2, 0, 4}, set) == spans({{0, 1, "PER"}, {3, 3, "LOC"}}));
}

TEST_CASE("legal BIO round-trips through spans") {
  Rng rng(15);
  const std::vector<std::string> types{"A", "B", "C"};
  for (int trial = 0; trial < 200; ++trial) {
    // Build a legal sequence from random spans, then read the spans back.
    const std::size_t n = 1 + rng.below(12);
    std::vector<std::string> labels(n, "O");
    SpanSet expected;
    std::size_t i = 0;
    while (i < n) {
      if (rng.uniform() < 0.4) {
        const std::size_t len = 1 + rng.below(std::min<std::size_t>(3, n - i));
        const auto& t = types[rng.below(3)];
        labels[i] = "B-" + t;
        for (std::size_t k = 1; k < len; ++k) labels[i + k] = "I-" + t;
        expected.insert({i, i + len - 1, t});
        i += len;
      } else {
        ++i;
      }
    }
    CHECK(first_illegal_bio(labels) == std::nullopt);
    CHECK(bio_spans(labels) == expected);
  }
}

TEST_CASE("span_micro_f1") {
  const SpanSet a = spans({{0, 1, "PER"}, {3, 3, "LOC"}});
  SUBCASE("perfect prediction") {
    auto s = span_micro_f1({a}, {a});
    CHECK(s.precision == 1.0);
    CHECK(s.recall == 1.0);
    CHECK(s.f1 == 1.0);
  }
  SUBCASE("one of two correct") {
    auto s = span_micro_f1({spans({{0, 1, "PER"}, {3, 4, "LOC"}})}, {a});
    CHECK(s.precision == 0.5);
    CHECK(s.recall == 0.5);
    CHECK(s.f1 == 0.5);
  }
  SUBCASE("empty prediction") {
    auto s = span_micro_f1({SpanSet{}}, {a});
    CHECK(s.precision == 0.0);
    CHECK(s.recall == 0.0);
    CHECK(s.f1 == 0.0);
  }
  SUBCASE("empty on both sides") {
    auto s = span_micro_f1({SpanSet{}, SpanSet{}}, {SpanSet{}, SpanSet{}});
    CHECK(s.f1 == 1.0);
  }
  SUBCASE("type restricted score") {
    auto s = span_micro_f1({spans({{0, 1, "PER"}, {3, 4, "LOC"}})}, {a}, "PER");
    CHECK(s.f1 == 1.0);
    CHECK(span_micro_f1({spans({{0, 1, "PER"}, {3, 4, "LOC"}})}, {a}, "LOC").f1 == 0.0);
  }
  SUBCASE("length mismatch") { CHECK_THROWS_AS(span_micro_f1({a}, {}), std::invalid_argument); }
  SUBCASE("hand-counted corpus") {
    // gold 6 spans, predicted 5, 3 exact matches: P=3/5, R=3/6, F1=6/11.
    std::vector<SpanSet> gold{spans({{0, 0, "PER"}, {2, 3, "LOC"}}), spans({{1, 1, "ORG"}}), SpanSet{},
                              spans({{0, 2, "MISC"}, {4, 4, "PER"}}), spans({{0, 0, "LOC"}})};
    std::vector<SpanSet> pred{spans({{0, 0, "PER"}, {2, 2, "LOC"}}), spans({{1, 1, "ORG"}}), spans({{0, 0, "PER"}}),
                              spans({{0, 2, "MISC"}}), SpanSet{}};
    auto s = span_micro_f1(pred, gold);
    CHECK(s.true_positives == 3);
    CHECK(s.predicted == 5);
    CHECK(s.gold == 6);
    CHECK(s.precision == 3.0 / 5.0);
    CHECK(s.recall == 3.0 / 6.0);
    CHECK(std::abs(s.f1 - 6.0 / 11.0) <= 1e-15);
    SUBCASE("order does not matter") {
      std::vector<std::size_t> perm{3, 0, 4, 2, 1};
      std::vector<SpanSet> g2, p2;
      for (auto i : perm) {
        g2.push_back(gold[i]);
        p2.push_back(pred[i]);
      }
      auto s2 = span_micro_f1(p2, g2);
      CHECK(s2.f1 == s.f1);
      CHECK(s2.precision == s.precision);
    }
  }
}

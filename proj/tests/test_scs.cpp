#include <cmath>

#include "bga/scs.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bga;
using bga::testing::random_tensor;

namespace {

Tensor random_binary(std::size_t n, Rng& rng, double p_one = 0.6) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.uniform() < p_one ? 1.0 : 0.0;
  return Tensor({n}, v);
}

}  // namespace

TEST_CASE("masked_gap") {
  auto x = Tensor::matrix({{1, 2}, {3, 5}, {8, -1}});
  SUBCASE("all ones is the row mean") {
    auto g = masked_gap(x, Tensor::full({3}, 1.0));
    CHECK(g.shape() == Shape{1, 2});
    CHECK(g.at(0, 0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(g.at(0, 1) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("single survivor") {
    auto g = masked_gap(x, Tensor::vector({0, 1, 0}));
    CHECK(g.to_vector() == std::vector<double>{3, 5});
  }
  SUBCASE("nothing kept") { CHECK(masked_gap(x, Tensor::zeros({3})).to_vector() == std::vector<double>{0, 0}); }
  SUBCASE("length mismatch") { CHECK_THROWS_AS(masked_gap(x, Tensor::zeros({2})), DimensionError); }
}

TEST_CASE("scs_forward") {
  Rng rng(21);
  const std::size_t d = 8;
  auto params = ScsParams::init(d, rng);

  SUBCASE("empty previous mask stays empty") {
    auto x = random_tensor({5, d}, rng);
    for (bool training : {true, false}) {
      Rng r(3);
      auto out = scs_forward(x, Tensor::zeros({5}), params, 1.0, &r, training);
      CHECK(out.mask.to_vector() == std::vector<double>(5, 0.0));
    }
  }
  SUBCASE("nesting and probability range over random configurations") {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 1 + rng.below(9);
      auto x = random_tensor({n, d}, rng, 2.0);
      auto prev = random_binary(n, rng);
      auto out = scs_forward(x, prev, params, 0.5 + rng.uniform(), &rng, trial % 2 == 0);
      REQUIRE(out.mask.shape() == Shape{n});
      for (std::size_t i = 0; i < n; ++i) {
        const double m = out.mask.at(i);
        CHECK((m == 0.0 || m == 1.0));
        CHECK(m <= prev.at(i));
        CHECK(out.keep_probs.at(i) >= 0.0);
        CHECK(out.keep_probs.at(i) <= 1.0);
      }
    }
  }
  SUBCASE("keep and drop probabilities sum to one") {
    auto x = random_tensor({6, d}, rng);
    auto prev = Tensor::full({6}, 1.0);
    auto out = scs_forward(x, prev, params, 1.0, nullptr, false);
    // Recompute the drop channel independently from the decision logits.
    auto z = params.local.forward(x);
    auto g = masked_gap(params.global.forward(x), prev);
    auto logits = params.decide.forward(concat_cols({z, repeat_rows(g, 6)}));
    for (std::size_t i = 0; i < 6; ++i) {
      const double a = logits.at(i, 0), b = logits.at(i, 1);
      const double drop = 1.0 / (1.0 + std::exp(a - b));
      CHECK(std::abs(out.keep_probs.at(i) + drop - 1.0) <= 1e-12);
    }
  }
  SUBCASE("same seed gives the same training mask") {
    auto x = random_tensor({7, d}, rng);
    auto prev = Tensor::full({7}, 1.0);
    Rng a(99), b(99);
    CHECK(scs_forward(x, prev, params, 1.0, &a, true).mask.to_vector() ==
          scs_forward(x, prev, params, 1.0, &b, true).mask.to_vector());
  }
  SUBCASE("evaluation mask ignores the generator state") {
    auto x = random_tensor({7, d}, rng);
    auto prev = Tensor::full({7}, 1.0);
    Rng a(1), b(2);
    CHECK(scs_forward(x, prev, params, 1.0, &a, false).mask.to_vector() ==
          scs_forward(x, prev, params, 1.0, &b, false).mask.to_vector());
  }
  SUBCASE("errors") {
    auto x = random_tensor({3, d}, rng);
    CHECK_THROWS_AS(scs_forward(x, Tensor::full({3}, 1.0), params, 0.0, &rng, true), std::invalid_argument);
    CHECK_THROWS_AS(scs_forward(x, Tensor::full({4}, 1.0), params, 1.0, &rng, true), DimensionError);
  }
  SUBCASE("straight-through gradient reaches the decision network") {
    auto x = random_tensor({6, d}, rng);
    auto w = bga::testing::random_weights(6, rng);
    auto out = scs_forward(x, Tensor::full({6}, 1.0), params, 1.0, &rng, true);
    auto loss = weighted_sum(out.mask, w);
    backward(loss);
    REQUIRE(params.decide.out.weight.has_grad());
    double norm = 0.0;
    for (double g : params.decide.out.weight.grad()) norm += g * g;
    CHECK(norm > 0.0);
    params.decide.out.weight.zero_grad();
  }
}

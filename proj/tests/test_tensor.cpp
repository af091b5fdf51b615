#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "bga/gradcheck.hpp"
#include "bga/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bga;
using bga::testing::random_tensor;
using bga::testing::random_weights;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    auto a = Tensor::matrix({{1.5, -2.0}, {0.25, 7.0}});
    auto c = matmul(Tensor::matrix({{1, 0}, {0, 1}}), a);
    CHECK(c.to_vector() == a.to_vector());
  }
  SUBCASE("hand product") {
    auto c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.at(0, 0) == 17.0);
    CHECK(c.at(1, 0) == 39.0);
  }
  SUBCASE("inner extent mismatch names both shapes") {
    Rng rng(1);
    auto a = random_tensor({2, 3}, rng);
    auto b = random_tensor({2, 3}, rng);
    try {
      matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("and [2x3]") != std::string::npos);
    }
  }
}

TEST_CASE("softmax") {
  auto y = softmax(Tensor::vector({0, 0}), 0);
  CHECK(y.at(0) == 0.5);
  CHECK(y.at(1) == 0.5);

  y = softmax(Tensor::vector({1, 0}), 0);
  const double e = std::exp(1.0);
  CHECK(y.at(0) == doctest::Approx(e / (e + 1)).epsilon(1e-14));
  CHECK(y.at(1) == doctest::Approx(1 / (e + 1)).epsilon(1e-14));
  CHECK(y.at(0) == doctest::Approx(0.7311).epsilon(1e-4));

  y = softmax(Tensor::vector({0, kNegInf, 0}), 0);
  CHECK(y.at(0) == 0.5);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(2) == 0.5);

  CHECK_THROWS_AS(softmax(Tensor::vector({kNegInf, kNegInf}), 0), DimensionError);
  CHECK_THROWS_AS(softmax(Tensor::vector({1, 2}), 1), DimensionError);

  SUBCASE("sums to one along either axis") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      auto x = random_tensor({3, 5}, rng, 10.0);
      for (std::size_t axis : {0u, 1u}) {
        auto s = softmax(x, axis);
        const std::size_t outer = axis == 0 ? 5 : 3, len = axis == 0 ? 3 : 5;
        for (std::size_t o = 0; o < outer; ++o) {
          double total = 0.0;
          for (std::size_t i = 0; i < len; ++i) total += axis == 0 ? s.at(i, o) : s.at(o, i);
          CHECK(std::abs(total - 1.0) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("kl_divergence") {
  CHECK(kl_divergence(Tensor::vector({0.5, 0.5}), Tensor::vector({0.5, 0.5})).item() == 0.0);
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  auto kl = kl_divergence(Tensor::vector({0.5, 0.5}), Tensor::vector({0.25, 0.75})).item();
  CHECK(kl == doctest::Approx(expected).epsilon(1e-14));
  CHECK(kl == doctest::Approx(0.14384).epsilon(1e-4));
  CHECK(kl_divergence(Tensor::vector({1.0}), Tensor::vector({1.0})).item() == 0.0);

  CHECK_THROWS_AS(kl_divergence(Tensor::vector({0.5, 0.5}), Tensor::vector({1.0})), DimensionError);
  CHECK_THROWS_AS(kl_divergence(Tensor::vector({0.5, 0.6}), Tensor::vector({0.5, 0.5})),
                  std::invalid_argument);

  SUBCASE("self divergence vanishes and divergence is non-negative") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng.below(12);
      auto p = Tensor::vector(bga::testing::probabilities(n, rng));
      auto q = Tensor::vector(bga::testing::probabilities(n, rng));
      CHECK(kl_divergence(p, p).item() <= 1e-12);
      CHECK(kl_divergence(p, q).item() >= -1e-12);
    }
  }
  SUBCASE("zero entries use the clamping floor") {
    auto v = kl_divergence(Tensor::vector({1.0, 0.0}), Tensor::vector({0.0, 1.0})).item();
    CHECK(v == doctest::Approx(-std::log(kProbabilityFloor)).epsilon(1e-12));
  }
}

TEST_CASE("backward") {
  Rng rng(3);
  SUBCASE("sum gives ones") {
    auto x = random_tensor({2, 3}, rng, 1.0, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("sum of squares") {
    auto x = Tensor::vector({1, 2, 3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.to_vector() == std::vector<double>{1, 2, 3});
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
  }
  SUBCASE("non-scalar loss") {
    auto x = random_tensor({2, 2}, rng, 1.0, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), GraphError);
  }
  SUBCASE("detached loss") {
    auto x = random_tensor({2, 2}, rng);
    CHECK_THROWS_AS(backward(sum(x)), GraphError);
  }
  SUBCASE("repeated calls accumulate into leaves") {
    auto x = Tensor::vector({1, 2, 3}, true);
    auto loss = sum(mul(x, x));
    backward(loss);
    backward(loss);
    CHECK(x.grad()[2] == 12.0);
    x.zero_grad();
    CHECK_FALSE(x.has_grad());
  }
  SUBCASE("linearity over summed losses") {
    for (int trial = 0; trial < 10; ++trial) {
      auto x = random_tensor({3, 4}, rng, 1.0, true);
      auto w = random_tensor({4, 2}, rng);
      auto wa = random_weights(6, rng);
      auto wb = random_weights(9, rng);
      auto loss_a = [&] { return weighted_sum(gelu(matmul(x, w)), wa); };
      auto loss_b = [&] { return weighted_sum(softmax_masked_rows(matmul_nt(x, x), Tensor::zeros({3, 3})), wb); };
      backward(loss_a());
      auto ga = std::vector<double>(x.grad().begin(), x.grad().end());
      x.zero_grad();
      backward(loss_b());
      auto gb = std::vector<double>(x.grad().begin(), x.grad().end());
      x.zero_grad();
      backward(add(loss_a(), loss_b()));
      for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::abs(x.grad()[i] - (ga[i] + gb[i])) <= 1e-12);
    }
  }
}

TEST_CASE("finite_difference_check") {
  Rng rng(5);
  SUBCASE("linear function is exact") {
    auto x = random_tensor({4, 3}, rng);
    CHECK(finite_difference_check([](const Tensor& t) { return sum(t); }, x, 1e-4) <= 1e-10);
  }
  SUBCASE("kl of softmax") {
    auto q = Tensor::vector(bga::testing::probabilities(8, rng));
    auto x = random_tensor({8}, rng);
    auto err = finite_difference_check(
        [&](const Tensor& t) { return kl_divergence(softmax(t, 0), q); }, x, 1e-6);
    CHECK(err <= 1e-5);
  }
  SUBCASE("non-finite probe") {
    auto x = Tensor::vector({0.0, kNegInf, 1.0});
    CHECK_THROWS_AS(
        finite_difference_check([](const Tensor& t) { return element(softmax(t, 0), 0); }, x, 1e-6),
        NumericError);
  }
  SUBCASE("eps range") {
    auto x = random_tensor({2}, rng);
    CHECK_THROWS_AS(finite_difference_check([](const Tensor& t) { return sum(t); }, x, 1e-2),
                    std::invalid_argument);
  }
}

namespace {

struct OpCase {
  const char* name;
  Shape shape;
  std::function<Tensor(const Tensor&, Rng&)> build;
};

}  // namespace

TEST_CASE("every differentiable op passes the finite-difference oracle") {
  Rng rng(2024);
  // Each op is wrapped into a generic scalar via a fixed random projection.
  const std::vector<OpCase> cases = {
      {"matmul/left", {3, 4}, [](const Tensor& x, Rng& r) { return matmul(x, random_tensor({4, 2}, r)); }},
      {"matmul/right", {4, 2}, [](const Tensor& x, Rng& r) { return matmul(random_tensor({3, 4}, r), x); }},
      {"matmul_nt", {3, 4}, [](const Tensor& x, Rng& r) { return matmul_nt(x, random_tensor({5, 4}, r)); }},
      {"matmul_nt/self", {3, 4}, [](const Tensor& x, Rng&) { return matmul_nt(x, x); }},
      {"transpose", {2, 5}, [](const Tensor& x, Rng&) { return transpose(x); }},
      {"reshape", {2, 6}, [](const Tensor& x, Rng&) { return reshape(x, {3, 4}); }},
      {"add", {3, 3}, [](const Tensor& x, Rng& r) { return add(x, random_tensor({3, 3}, r)); }},
      {"sub", {3, 3}, [](const Tensor& x, Rng& r) { return sub(random_tensor({3, 3}, r), x); }},
      {"mul", {3, 3}, [](const Tensor& x, Rng&) { return mul(x, x); }},
      {"scale", {4}, [](const Tensor& x, Rng&) { return scale(x, -1.7); }},
      {"add_rowwise", {4}, [](const Tensor& x, Rng& r) { return add_rowwise(random_tensor({3, 4}, r), x); }},
      {"gelu", {10}, [](const Tensor& x, Rng&) { return gelu(x); }},
      {"softmax/axis0", {4, 3}, [](const Tensor& x, Rng&) { return softmax(x, 0); }},
      {"softmax/axis1", {4, 3}, [](const Tensor& x, Rng&) { return softmax(x, 1); }},
      {"softmax_masked_rows", {2, 3}, [](const Tensor& x, Rng&) {
         return softmax_masked_rows(x, Tensor::matrix({{0, kNegInf, 0}, {0, 0, kNegInf}}));
       }},
      {"layer_norm/input", {3, 6}, [](const Tensor& x, Rng& r) {
         return layer_norm(x, random_tensor({6}, r), random_tensor({6}, r));
       }},
      {"layer_norm/gain", {6}, [](const Tensor& x, Rng& r) {
         return layer_norm(random_tensor({3, 6}, r), x, random_tensor({6}, r));
       }},
      {"mean", {3, 2}, [](const Tensor& x, Rng&) { return mean(mul(x, x)); }},
      {"kl_divergence/p", {6}, [](const Tensor& x, Rng& r) {
         return kl_divergence(softmax(x, 0), Tensor::vector(bga::testing::probabilities(6, r)));
       }},
      {"kl_divergence/q", {6}, [](const Tensor& x, Rng& r) {
         return kl_divergence(Tensor::vector(bga::testing::probabilities(6, r)), softmax(x, 0));
       }},
      {"kl_divergence_rows", {3, 4}, [](const Tensor& x, Rng& r) {
         return kl_divergence_rows(softmax(x, 1), softmax(random_tensor({3, 4}, r), 1));
       }},
      {"concat_rows", {2, 3}, [](const Tensor& x, Rng& r) { return concat_rows({random_tensor({1, 3}, r), x, x}); }},
      {"concat_cols", {2, 3}, [](const Tensor& x, Rng& r) { return concat_cols({x, random_tensor({2, 1}, r), x}); }},
      {"slice_rows", {4, 3}, [](const Tensor& x, Rng&) { return slice_rows(x, 1, 3); }},
      {"slice_cols", {4, 3}, [](const Tensor& x, Rng&) { return slice_cols(x, 1, 3); }},
      {"gather_rows", {5, 2}, [](const Tensor& x, Rng&) {
         std::vector<std::size_t> ids{4, 0, 4, 2};
         return gather_rows(x, ids);
       }},
      {"repeat_rows", {1, 3}, [](const Tensor& x, Rng&) { return repeat_rows(x, 4); }},
      {"mean_rows", {4, 3}, [](const Tensor& x, Rng&) { return mean_rows(x); }},
      {"masked_mean_rows/x", {4, 3}, [](const Tensor& x, Rng&) {
         return masked_mean_rows(x, Tensor::vector({1, 0, 1, 1}));
       }},
      {"masked_mean_rows/m", {4}, [](const Tensor& m, Rng& r) {
         // Mask values away from the max(count, 1) kink.
         return masked_mean_rows(random_tensor({4, 3}, r), add(m, Tensor::full({4}, 2.0)));
       }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 10; ++trial) {
      auto x = random_tensor(c.shape, rng);
      const std::uint64_t seed = rng.next_u64();
      Rng probe(seed);
      const auto out_numel = c.build(x, probe).numel();
      auto w = random_weights(out_numel, rng);
      auto f = [&](const Tensor& t) {
        Rng local(seed);
        return weighted_sum(c.build(t, local), w);
      };
      CHECK(finite_difference_check(f, x, 1e-6) <= 1e-5);
    }
  }
}

TEST_CASE("gumbel_softmax") {
  Rng rng(9);
  SUBCASE("hard rows are one-hot") {
    for (int trial = 0; trial < 20; ++trial) {
      auto logits = random_tensor({7, 2}, rng, 3.0);
      auto y = gumbel_softmax(logits, 1.0, rng, true);
      for (std::size_t i = 0; i < 7; ++i) {
        const double a = y.at(i, 0), b = y.at(i, 1);
        CHECK(((a == 1.0 && b == 0.0) || (a == 0.0 && b == 1.0)));
        CHECK(a + b == 1.0);
      }
    }
  }
  SUBCASE("dominant keep logit is always selected") {
    auto logits = Tensor::matrix({{50.0, -50.0}});
    int kept = 0;
    for (int draw = 0; draw < 10000; ++draw) kept += gumbel_softmax(logits, 1.0, rng, true).at(0, 0) == 1.0;
    CHECK(kept == 10000);
  }
  SUBCASE("same seed, same output") {
    auto logits = random_tensor({5, 2}, rng);
    Rng a(42), b(42);
    CHECK(gumbel_softmax(logits, 1.0, a, false).to_vector() == gumbel_softmax(logits, 1.0, b, false).to_vector());
    CHECK(gumbel_softmax(logits, 0.5, a, true).to_vector() == gumbel_softmax(logits, 0.5, b, true).to_vector());
  }
  SUBCASE("temperature must be positive") {
    auto logits = random_tensor({2, 2}, rng);
    CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, rng, true), std::invalid_argument);
    CHECK_THROWS_AS(gumbel_softmax(logits, -1.0, rng, false), std::invalid_argument);
  }
  SUBCASE("straight-through gradient equals the soft-sample gradient") {
    auto logits = random_tensor({4, 2}, rng, 1.0, true);
    auto w = random_weights(8, rng);
    Rng a(77), b(77);
    backward(weighted_sum(gumbel_softmax(logits, 0.7, a, true), w));
    auto hard_grad = std::vector<double>(logits.grad().begin(), logits.grad().end());
    logits.zero_grad();
    backward(weighted_sum(gumbel_softmax(logits, 0.7, b, false), w));
    for (std::size_t i = 0; i < hard_grad.size(); ++i) CHECK(hard_grad[i] == logits.grad()[i]);
  }
  SUBCASE("soft sample passes the finite-difference oracle under a fixed seed") {
    auto x = random_tensor({3, 2}, rng);
    auto w = random_weights(6, rng);
    auto f = [&](const Tensor& t) {
      Rng local(5);
      return weighted_sum(gumbel_softmax(t, 0.8, local, false), w);
    };
    CHECK(finite_difference_check(f, x, 1e-6) <= 1e-5);
  }
}

TEST_CASE("op outputs must be finite") {
  auto big = Tensor::vector({1e200});
  CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("tensor construction") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), DimensionError);
  auto t = Tensor::zeros({2, 3});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK_THROWS_AS(t.item(), DimensionError);
}

#include <cmath>

#include "bga/extractor.hpp"
#include "bga/gradcheck.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace bga;
using bga::testing::random_tensor;
using bga::testing::random_weights;

namespace {

std::vector<double> content_mask(std::size_t n) {
  std::vector<double> c(n, 1.0);
  c.front() = 0.0;
  c.back() = 0.0;
  return c;
}

}  // namespace

TEST_CASE("hybrid_extract") {
  Rng rng(41);
  nn::AttentionConfig cfg{8, 2};
  auto params = ExtractorParams::init(8, rng);

  SUBCASE("no generated rows is the plain encoder layer") {
    auto x = random_tensor({5, 8}, rng);
    CHECK(hybrid_extract(x, Tensor(), params, cfg).to_vector() == nn::transformer_encoder_layer(x, params, cfg).to_vector());
  }
  SUBCASE("identical generated row splits attention evenly") {
    nn::AttentionConfig one{8, 1};
    auto x = random_tensor({1, 8}, rng);
    nn::AttentionTrace trace;
    hybrid_extract(x, x, params, one, {}, &trace);
    REQUIRE(trace.weights.size() == 1);
    CHECK(std::abs(trace.weights[0].at(0, 0) - 0.5) <= 1e-15);
    CHECK(std::abs(trace.weights[0].at(0, 1) - 0.5) <= 1e-15);
  }
  SUBCASE("shape contract") {
    for (std::size_t np : {1u, 4u, 9u}) {
      CHECK(hybrid_extract(random_tensor({np, 8}, rng), Tensor(), params, cfg).shape() == Shape{np, 8});
      CHECK(hybrid_extract(random_tensor({np, 8}, rng), random_tensor({4, 8}, rng), params, cfg).shape() == Shape{np, 8});
    }
    CHECK_THROWS_AS(hybrid_extract(random_tensor({2, 8}, rng), random_tensor({2, 6}, rng), params, cfg), DimensionError);
  }
}

TEST_CASE("bga_layer") {
  Rng rng(42);
  nn::AttentionConfig cfg{8, 2};
  auto layer = BgaLayerParams::init(8, rng);
  auto gen = GeneratorParams::init(8, 3, 8, rng);

  SUBCASE("text-only evaluation leaves the visual branch unset") {
    BgaLayerInput in{random_tensor({5, 8}, rng), Tensor(), Tensor::full({5}, 1.0), Tensor(), content_mask(5), false};
    auto out = bga_layer(in, layer, gen, cfg, {}, {});
    CHECK(out.text.shape() == Shape{5, 8});
    CHECK_FALSE(out.visual.defined());
    CHECK(out.generation.recon_loss.item() == 0.0);
    CHECK(out.generation.cycle_loss.item() == 0.0);
    CHECK(out.mask_t.at(0) == 0.0);
    CHECK(out.mask_t.at(4) == 0.0);
  }
  SUBCASE("three stacked layers keep shapes and nest masks") {
    std::vector<BgaLayerParams> layers;
    for (int i = 0; i < 3; ++i) layers.push_back(BgaLayerParams::init(8, rng));
    BgaLayerInput in{random_tensor({6, 8}, rng), random_tensor({3, 8}, rng), Tensor::full({6}, 1.0),
                     Tensor::full({3}, 1.0), content_mask(6), true};
    Rng sample(5);
    for (const auto& l : layers) {
      auto out = bga_layer(in, l, gen, cfg, {true, 0.0, &sample}, {1.0, &sample});
      CHECK(out.text.shape() == Shape{6, 8});
      CHECK(out.visual.shape() == Shape{3, 8});
      for (std::size_t i = 0; i < 6; ++i) CHECK(out.mask_t.at(i) <= in.prev_mask_t.at(i));
      for (std::size_t i = 0; i < 3; ++i) CHECK(out.mask_v.at(i) <= in.prev_mask_v.at(i));
      in.text = out.text;
      in.visual = out.visual;
      in.prev_mask_t = out.mask_t;
      in.prev_mask_v = out.mask_v;
    }
  }
  SUBCASE("text output does not read the image") {
    auto t = random_tensor({5, 8}, rng);
    BgaLayerInput a{t, random_tensor({3, 8}, rng), Tensor::full({5}, 1.0), Tensor::full({3}, 1.0), content_mask(5), true};
    BgaLayerInput b = a;
    b.visual = random_tensor({3, 8}, rng);
    CHECK(bga_layer(a, layer, gen, cfg, {}, {}).text.to_vector() == bga_layer(b, layer, gen, cfg, {}, {}).text.to_vector());
  }
  SUBCASE("finite-difference oracle through one layer") {
    auto t = random_tensor({4, 8}, rng, 1.0, true);
    auto v = random_tensor({3, 8}, rng, 1.0, true);
    auto wt = random_weights(32, rng);
    auto wv = random_weights(24, rng);
    nn::ParamList params;
    layer.collect("layer", params);
    gen.collect("gen", params);
    std::vector<Tensor> tensors{t, v};
    for (const auto& [name, p] : params) tensors.push_back(p);
    std::vector<double> content{0, 1, 1, 0};
    auto loss = [&] {
      BgaLayerInput in{t, v, Tensor::full({4}, 1.0), Tensor::full({3}, 1.0), content, true};
      auto out = bga_layer(in, layer, gen, cfg, {}, {});
      return add(add(weighted_sum(out.text, wt), weighted_sum(out.visual, wv)),
                 add(out.generation.recon_loss, out.generation.cycle_loss));
    };
    // Evaluation-mode masks are fixed argmax decisions, so the loss is smooth at the probe.
    auto r = check_parameter_gradients(loss, tensors);
    CHECK(r.max_rel_error <= 1e-4);
  }
}

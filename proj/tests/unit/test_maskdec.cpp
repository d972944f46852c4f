#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "apseg/errors.hpp"
#include "apseg/maskdec.hpp"
#include "oracles.hpp"

using namespace apseg;
using T2 = Tensor<double>;

namespace {

struct Fixture {
  DecoderConfig cfg;
  ParameterSet<double> ps;
  MaskDecoder<double> dec;

  Fixture(std::size_t in, std::size_t width, std::uint64_t seed = 4) {
    cfg.in_channels = in;
    cfg.width = width;
    Rng rng(seed);
    dec = MaskDecoder<double>(ps, "decoder", cfg, rng);
  }
};

}  // namespace

TEST_CASE("logits are four times the feature resolution") {
  Rng rng(1);
  for (auto [in, width, h, w] : {std::array<std::size_t, 4>{5, 24, 3, 4}, {24, 24, 2, 2}, {32, 32, 5, 1}}) {
    Fixture fx(in, width);
    Bindings<double> b(false);
    auto logits = fx.dec.decode(b, testing::random_constant(rng, {4, width}),
                                testing::random_constant(rng, {width, h, w}),
                                testing::random_constant(rng, {in, h, w}));
    CHECK(logits.shape() == Shape{4 * h, 4 * w});
    CHECK(all_finite(logits.data()));
  }
}

TEST_CASE("a projection is added only when the channel counts differ") {
  CHECK(Fixture(5, 24).ps.find("decoder.proj.weight") != nullptr);
  CHECK(Fixture(24, 24).ps.find("decoder.proj.weight") == nullptr);
}

TEST_CASE("zero prompts and a zero image give constant logits") {
  Fixture fx(5, 24);
  Bindings<double> b(false);
  auto logits = fx.dec.decode(b, T2::zeros({2, 24}), T2::zeros({24, 3, 3}), T2::zeros({5, 3, 3}));
  const auto [lo, hi] = std::minmax_element(logits.data().begin(), logits.data().end());
  CHECK(*hi - *lo <= 1e-12);
}

TEST_CASE("the dense embedding changes the mask") {
  Fixture fx(5, 24);
  Rng rng(2);
  auto sparse = testing::random_constant(rng, {2, 24});
  auto query = testing::random_constant(rng, {5, 3, 3});
  Bindings<double> b(false);
  auto a = fx.dec.decode(b, sparse, T2::zeros({24, 3, 3}), query);
  auto c = fx.dec.decode(b, sparse, testing::random_constant(rng, {24, 3, 3}), query);
  double diff = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a.at(i) - c.at(i)));
  CHECK(diff > 1e-3);
}

TEST_CASE("sparse token order does not matter") {
  Fixture fx(5, 24);
  Rng rng(3);
  auto sparse = testing::random_constant(rng, {4, 24});
  auto dense = testing::random_constant(rng, {24, 2, 3});
  auto query = testing::random_constant(rng, {5, 2, 3});
  const std::vector<std::uint32_t> perm{2, 0, 3, 1};
  Bindings<double> b(false);
  auto a = fx.dec.decode(b, sparse, dense, query);
  auto p = fx.dec.decode(b, gather_rows(sparse, std::span<const std::uint32_t>(perm)), dense, query);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.at(i) - p.at(i)) <= 1e-12);
}

TEST_CASE("every decoder parameter receives gradient") {
  Fixture fx(5, 24);
  Rng rng(4);
  auto sparse = testing::random_constant(rng, {2, 24});
  auto dense = testing::random_constant(rng, {24, 3, 3});
  auto query = testing::random_constant(rng, {5, 3, 3});
  Bindings<double> b(true);
  backward(testing::project(fx.dec.decode(b, sparse, dense, query)));
  b.flush_gradients();
  for (std::size_t i = 0; i < fx.ps.size(); ++i) {
    INFO(fx.ps[i].name);
    REQUIRE(fx.ps[i].has_grad());
    double norm = 0;
    for (auto g : fx.ps[i].grad) norm += g * g;
    CHECK(norm > 0.0);
  }

  std::vector<Parameter<double>*> all;
  for (std::size_t i = 0; i < fx.ps.size(); ++i) all.push_back(&fx.ps[i]);
  auto stats = testing::check_parameters(
      "decoder", all,
      [&](Bindings<double>& bb) { return testing::project(fx.dec.decode(bb, sparse, dense, query)); },
      all.size(), rng);
  CHECK(stats.max_rel <= testing::kFdTolerance);
}

TEST_CASE("shape mismatches are dimension errors") {
  Fixture fx(5, 24);
  Bindings<double> b(false);
  CHECK_THROWS_AS(fx.dec.decode(b, T2::zeros({2, 24}), T2::zeros({24, 3, 3}), T2::zeros({6, 3, 3})),
                  DimensionError);
  CHECK_THROWS_AS(fx.dec.decode(b, T2::zeros({2, 24}), T2::zeros({24, 2, 3}), T2::zeros({5, 3, 3})),
                  DimensionError);
  CHECK_THROWS_AS(fx.dec.decode(b, T2::zeros({2, 32}), T2::zeros({24, 3, 3}), T2::zeros({5, 3, 3})),
                  DimensionError);
}

TEST_CASE("decoder width must be a multiple of eight and at least twenty-four") {
  DecoderConfig c;
  c.width = 12;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.width = 8;  // one channel after the last upscale
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.width = 16;  // two channels normalise to a sign
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.width = 24;
  CHECK_NOTHROW(c.validate());
  CHECK(c.resolved_attention_dim() == 12);
  CHECK(c.resolved_ffn_dim() == 48);
}

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "apseg/checkpoint.hpp"
#include "apseg/config.hpp"
#include "apseg/errors.hpp"
#include "apseg/feature_file.hpp"
#include "apseg/trainer.hpp"
#include "oracles.hpp"

using namespace apseg;
namespace fs = std::filesystem;

namespace {

// Tiny world: 32×32 images, 8×8 features with the tiny model's channel counts.
struct World {
  EncoderConfig enc_cfg{6, 5, 0xBEEF};
  ToyEncoder<float> encoder{enc_cfg};
  Dataset data = generate_dataset(source_domain(), {0, 1, 2}, 6, 32, 3);
  FeatureBank<float> bank{encoder, data};
};

World& world() {
  static World w;
  return w;
}

std::vector<std::uint8_t> checkpoint_bytes(const ApsegModel<float>& m, std::uint64_t step) {
  return encode_checkpoint(m.parameters(), CheckpointMeta{0x1234, 1, step});
}

TrainConfig small_train(std::size_t batch = 2) {
  TrainConfig t;
  t.batch = batch;
  t.steps = 10;
  t.seed = 4;
  return t;
}

}  // namespace

TEST_CASE("dice examples") {
  // Hard 0/1 probabilities: |p| = |g| = 100 with 50 shared pixels.
  std::vector<double> p(400, 0.0), g(400, 0.0);
  for (int i = 0; i < 100; ++i) p[i] = 1.0;
  for (int i = 50; i < 150; ++i) g[i] = 1.0;
  auto half = soft_dice(Tensor<double>::constant({400}, p), std::span<const double>(g), 1.0);
  CHECK(half.item() == doctest::Approx(1.0 - 101.0 / 201.0).epsilon(1e-14));
  CHECK(half.item() == doctest::Approx(0.4975).epsilon(1e-4));

  // Saturated logits on a 32×32 mask.
  ImageSample gt;
  gt.height = gt.width = 32;
  gt.mask.assign(1024, 0);
  for (std::size_t i = 0; i < 1024; ++i) gt.mask[i] = (i % 32) < 12;
  std::vector<double> match(1024), miss(1024);
  for (std::size_t i = 0; i < 1024; ++i) {
    match[i] = gt.mask[i] ? 40.0 : -40.0;
    miss[i] = -match[i];
  }
  CHECK(dice_loss(Tensor<double>::constant({32, 32}, match), gt).item() <= 1e-3);
  const double fg = 12 * 32, bg = 1024 - fg;
  CHECK(dice_loss(Tensor<double>::constant({32, 32}, miss), gt).item() ==
        doctest::Approx(1.0 - 1.0 / (fg + bg + 1.0)).epsilon(1e-9));

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    auto l = dice_loss(testing::random_constant(rng, {8, 8}, 3.0), gt).item();
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
  }
}

TEST_CASE("dice loss resizes logits to the mask") {
  ImageSample gt;
  gt.height = gt.width = 16;
  gt.mask.assign(256, 1);
  auto l = dice_loss(Tensor<double>::full({4, 4}, 30.0), gt);
  CHECK(l.item() <= 1e-6);
  gt.mask.clear();
  CHECK_THROWS_AS(dice_loss(Tensor<double>::full({4, 4}, 0.0), gt), DimensionError);
}

TEST_CASE("training config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.lr = 0;
  CHECK_NOTHROW(t.validate());
  t.lr = -1e-3;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t.lr = std::nan("");
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.batch = 0;
  CHECK_THROWS(t.validate());
}

TEST_CASE("a zero learning rate changes no parameter") {
  auto& w = world();
  ApsegModel<float> model(testing::tiny_model_config());
  const auto before = model.parameters().checksum();
  Bindings<float> b(true);
  Rng rng(2);
  auto ep = sample_episode(w.data, 1, rng);
  backward(dice_loss(model.forward(b, make_input(w.bank, ep)).logits, w.data.samples[ep.query]));
  b.flush_gradients();
  auto params = model.trainable();
  for (auto* p : params)
    if (!p->has_grad()) p->grad.assign(p->numel(), 0.0f);
  AdamConfig zero;
  zero.lr = 0.0;
  adam_step<float>(params, zero);
  CHECK(model.parameters().checksum() == before);
}

TEST_CASE("training leaves the encoder untouched and reports the mean loss") {
  auto& w = world();
  ApsegModel<float> model(testing::tiny_model_config());
  const auto enc_before = w.encoder.checksum();
  const auto params_before = model.parameters().checksum();
  Trainer<float> trainer(model, w.data, w.bank, small_train(3));

  // Losses of the first batch, computed before the update.
  double expect = 0;
  for (std::size_t e = 0; e < 3; ++e) {
    Rng rng(mix_seed(mix_seed(4, 0), e));
    auto ep = sample_episode(w.data, 1, rng);
    Bindings<float> b(false);
    expect += dice_loss(model.forward(b, make_input(w.bank, ep)).logits, w.data.samples[ep.query]).item() / 3;
  }
  const double got = trainer.step();
  CHECK(got == doctest::Approx(expect).epsilon(1e-6));
  for (int i = 0; i < 3; ++i) trainer.step();
  CHECK(trainer.steps_done() == 4);
  CHECK(w.encoder.checksum() == enc_before);
  CHECK(model.parameters().checksum() != params_before);
}

TEST_CASE("loss falls on one repeated episode") {
  auto& w = world();
  ApsegModel<float> model(testing::tiny_model_config());
  Trainer<float> trainer(model, w.data, w.bank, small_train(1));
  Rng rng(3);
  const auto ep = sample_episode(w.data, 1, rng);
  trainer.set_episode_source([ep](std::uint64_t, std::size_t) { return ep; });
  double first = 0, last = 0;
  for (int s = 0; s < 50; ++s) {
    last = trainer.step();
    if (s == 0) first = last;
  }
  Bindings<float> b(false);
  const double final_loss =
      dice_loss(model.forward(b, make_input(w.bank, ep)).logits, w.data.samples[ep.query]).item();
  INFO("first " << first << " last " << last << " after " << final_loss);
  CHECK(final_loss < 0.8 * first);
}

TEST_CASE("a diverging run raises a numeric error") {
  auto& w = world();
  ApsegModel<float> model(testing::tiny_model_config());
  auto cfg = small_train(1);
  cfg.lr = 1e30;
  Trainer<float> trainer(model, w.data, w.bank, cfg);
  bool raised = false;
  for (int s = 0; s < 5 && !raised; ++s) {
    try {
      trainer.step();
    } catch (const NumericError&) {
      raised = true;
    }
  }
  CHECK(raised);
}

TEST_CASE("checkpoints round-trip exactly") {
  auto& w = world();
  ApsegModel<float> model(testing::tiny_model_config());
  Trainer<float> trainer(model, w.data, w.bank, small_train());
  trainer.step();
  trainer.step();
  const auto bytes = encode_checkpoint(model.parameters(), CheckpointMeta{0xABCDEF, 4, 2});
  auto ck = decode_checkpoint(bytes);
  CHECK(ck.meta.config_hash == 0xABCDEF);
  CHECK(ck.meta.seed == 4);
  CHECK(ck.meta.step == 2);

  auto cfg = testing::tiny_model_config();
  cfg.seed = 99;  // different initial values
  ApsegModel<float> fresh(cfg);
  auto meta = restore_checkpoint(ck, fresh.parameters(), 0xABCDEF);
  CHECK(meta.step == 2);
  const auto& a = model.parameters();
  const auto& b = fresh.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(a[i].value == b[i].value);
    CHECK(a[i].m == b[i].m);
    CHECK(a[i].v == b[i].v);
    CHECK(a[i].step == b[i].step);
  }
  CHECK(encode_checkpoint(fresh.parameters(), CheckpointMeta{0xABCDEF, 4, 2}) == bytes);
}

TEST_CASE("damaged or mismatched checkpoints are refused") {
  ApsegModel<float> model(testing::tiny_model_config());
  const auto bytes = checkpoint_bytes(model, 0);
  CHECK_THROWS_AS(restore_checkpoint(decode_checkpoint(bytes), model.parameters(), 0x1235), ConfigHashMismatch);

  auto magic = bytes;
  magic[1] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
  auto version = bytes;
  version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(version), FormatError);
  auto cut = bytes;
  cut.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);
  auto extra = bytes;
  extra.push_back(1);
  CHECK_THROWS_AS(decode_checkpoint(extra), FormatError);

  // A model of another variant has different parameter names.
  ApsegModel<float> other(testing::tiny_model_config(false, true));
  CHECK_THROWS_AS(restore_checkpoint(decode_checkpoint(bytes), other.parameters(), 0x1234), FormatError);
}

TEST_CASE("resuming reproduces uninterrupted training bit for bit") {
  auto& w = world();
  const auto dir = fs::temp_directory_path() / "apseg_test_trainer";
  fs::create_directories(dir);

  ApsegModel<float> straight(testing::tiny_model_config());
  Trainer<float> t1(straight, w.data, w.bank, small_train());
  for (int s = 0; s < 10; ++s) t1.step();

  ApsegModel<float> first(testing::tiny_model_config());
  Trainer<float> t2(first, w.data, w.bank, small_train());
  for (int s = 0; s < 5; ++s) t2.step();
  save_checkpoint(dir / "half.apck", first.parameters(), CheckpointMeta{7, 4, 5});

  ApsegModel<float> resumed(testing::tiny_model_config());
  const auto meta = load_checkpoint(dir / "half.apck", resumed.parameters(), 7);
  Trainer<float> t3(resumed, w.data, w.bank, small_train());
  t3.set_steps_done(meta.step);
  for (int s = 0; s < 5; ++s) t3.step();

  CHECK(resumed.parameters().checksum() == straight.parameters().checksum());
  CHECK(checkpoint_bytes(resumed, 10) == checkpoint_bytes(straight, 10));
}

TEST_CASE("identical seeds give identical checkpoints") {
  auto& w = world();
  std::vector<std::uint8_t> runs[2];
  for (auto& bytes : runs) {
    ApsegModel<float> m(testing::tiny_model_config());
    Trainer<float> t(m, w.data, w.bank, small_train());
    for (int s = 0; s < 3; ++s) t.step();
    bytes = checkpoint_bytes(m, 3);
  }
  CHECK(runs[0] == runs[1]);
}

TEST_CASE("the full-size trainable budget stays under two million") {
  // The decoder here is trained too, so the budget is looser than the prompt-side count alone.
  auto cfg = paper_config();
  cfg.resolve();
  CHECK(cfg.model.mpg.reduce_channels == 64);
  ApsegModel<float> model(cfg.model);
  const auto count = model.parameters().scalar_count();
  MESSAGE("full-size trainable parameters: " << count);
  CHECK(count < 2000000);
  CHECK(count > 100000);
}

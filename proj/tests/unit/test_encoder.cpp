#include <doctest.h>

#include <filesystem>

#include "apseg/config.hpp"
#include "apseg/errors.hpp"
#include "apseg/feature_file.hpp"
#include "oracles.hpp"

using namespace apseg;
namespace fs = std::filesystem;

namespace {

ImageSample blank_image(std::size_t h, std::size_t w, float v = 0.0f) {
  ImageSample img;
  img.height = h;
  img.width = w;
  img.pixels.assign(3 * h * w, v);
  return img;
}

ImageSample noise_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  auto img = blank_image(h, w);
  Rng rng(seed);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
  return img;
}

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "apseg_test_encoder";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("default encoder shapes on a 64x64 image") {
  ToyEncoder<float> enc(EncoderConfig{});
  auto f = enc.extract(noise_image(64, 64, 1));
  CHECK(f.level(0).shape() == Shape{48, 16, 16});
  CHECK(f.level(1).shape() == Shape{48, 16, 16});
  CHECK(f.level(2).shape() == Shape{32, 16, 16});
  CHECK_NOTHROW(f.validate());
}

TEST_CASE("extraction is deterministic") {
  ToyEncoder<double> enc(EncoderConfig{});
  auto zero1 = enc.extract(blank_image(32, 32));
  auto zero2 = enc.extract(blank_image(32, 32));
  for (int l = 0; l < 3; ++l) CHECK(same_values(zero1.level(l), zero2.level(l)));

  ToyEncoder<double> twin(EncoderConfig{});
  auto img = noise_image(32, 48, 2);
  auto a = enc.extract(img), b = twin.extract(img);
  for (int l = 0; l < 3; ++l) CHECK(same_values(a.level(l), b.level(l)));
  CHECK(enc.checksum() == twin.checksum());

  EncoderConfig other;
  other.seed = 1234;
  CHECK(ToyEncoder<double>(other).checksum() != enc.checksum());
}

TEST_CASE("features never require gradients") {
  ToyEncoder<float> enc(EncoderConfig{});
  auto f = enc.extract(noise_image(32, 32, 3));
  for (int l = 0; l < 3; ++l) CHECK_FALSE(f.level(l).requires_grad());
}

TEST_CASE("image sides must be multiples of the stride") {
  ToyEncoder<float> enc(EncoderConfig{});
  CHECK_THROWS_AS(enc.extract(blank_image(30, 32)), DimensionError);
  CHECK_THROWS_AS(enc.extract(blank_image(32, 33)), DimensionError);
}

TEST_CASE("mask downsampling samples pixel centres") {
  // 4×4 mask with the right half set, reduced to 2×2.
  std::vector<std::uint8_t> m{0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 1};
  CHECK(downsample_mask(m, 4, 4, 2, 2) == std::vector<std::uint8_t>{0, 1, 0, 1});
  // Single set pixel at (1,1): centre sample floor(0.5·4/2)=1 hits it.
  std::vector<std::uint8_t> dot(16, 0);
  dot[5] = 1;
  CHECK(downsample_mask(dot, 4, 4, 2, 2) == std::vector<std::uint8_t>{1, 0, 0, 0});
  CHECK_THROWS_AS(downsample_mask(m, 4, 3, 2, 2), DimensionError);
}

TEST_CASE("feature files round-trip") {
  Rng rng(4);
  MultiLevelFeatures<float> f;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t c = l < 2 ? 6 : 4;
    std::vector<float> v(c * 5 * 7);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    f.levels[l] = Tensor<float>::constant({c, 5, 7}, std::move(v));
  }
  auto path = temp_file("roundtrip.apfe");
  save_features(path, "img-0042", f);
  FeatureFileHeader hdr;
  auto g = load_features<float>(path, &hdr);
  CHECK(hdr.version == 1);
  CHECK(hdr.image_id == "img-0042");
  REQUIRE(hdr.levels.size() == 3);
  CHECK(hdr.levels[2].level_id == 3);
  CHECK(hdr.levels[2].channels == 4);
  for (int l = 0; l < 3; ++l) CHECK(same_values(f.level(l), g.level(l)));
  CHECK(g.source == FeatureSource::Imported);

  // Saving what was loaded reproduces the file byte for byte.
  auto again = temp_file("roundtrip2.apfe");
  save_features(again, "img-0042", g);
  CHECK(read_file_bytes(path) == read_file_bytes(again));
}

TEST_CASE("corrupted feature files are format errors") {
  MultiLevelFeatures<float> f;
  for (std::size_t l = 0; l < 3; ++l) f.levels[l] = Tensor<float>::full({2, 2, 2}, 1.0f);
  const auto bytes = encode_features("x", f);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_features<float>(bad_magic), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_features<float>(bad_version), FormatError);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_features<float>(truncated), FormatError);

  auto padded = bytes;
  padded.push_back(0);
  CHECK_THROWS_AS(decode_features<float>(padded), FormatError);

  CHECK_THROWS_AS(decode_features<float>({}), FormatError);
}

TEST_CASE("paper-scale feature files carry 768 and 256 channels at 64x64") {
  // A 1024×1024 input through a ViT-B style encoder yields 64×64 maps with
  // 768-channel intermediate taps and a 256-channel neck output.
  const auto cfg = paper_config();
  CHECK(cfg.encoder.mid_channels == 768);
  CHECK(cfg.encoder.high_channels == 256);
  MultiLevelFeatures<float> f;
  f.levels[0] = Tensor<float>::full({768, 64, 64}, 0.25f);
  f.levels[1] = Tensor<float>::full({768, 64, 64}, -0.5f);
  f.levels[2] = Tensor<float>::full({256, 64, 64}, 1.0f);
  FeatureFileHeader hdr;
  auto g = decode_features<float>(encode_features("paper", f), &hdr);
  CHECK(g.level(0).shape() == Shape{768, 64, 64});
  CHECK(g.level(1).shape() == Shape{768, 64, 64});
  CHECK(g.level(2).shape() == Shape{256, 64, 64});
  CHECK(hdr.levels[0].checksum != 0);
}

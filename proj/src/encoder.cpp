#include "apseg/encoder.hpp"

#include <cmath>

#include "apseg/errors.hpp"
#include "apseg/kernels.hpp"
#include "apseg/optim.hpp"
#include "apseg/random.hpp"

namespace apseg {

template <typename T>
void MultiLevelFeatures<T>::validate() const {
  for (const auto& l : levels)
    if (!l.defined() || l.rank() != 3) throw DimensionError("feature level is not c×h×w");
  const auto& f3 = levels[2];
  for (int i = 0; i < 2; ++i)
    if (levels[i].dim(1) != f3.dim(1) || levels[i].dim(2) != f3.dim(2))
      throw DimensionError("mid-level map " + shape_str(levels[i].shape()) +
                           " does not share the spatial size of " + shape_str(f3.shape()));
  if (levels[0].dim(0) != levels[1].dim(0))
    throw DimensionError("f1 and f2 channel counts differ");
}

namespace {

template <typename T>
std::vector<T> he_normal(std::size_t fan_in, std::size_t count, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> w(count);
  for (auto& x : w) x = static_cast<T>(rng.normal(0.0, sd));
  return w;
}

template <typename T>
std::vector<T> small_bias(std::size_t count, Rng& rng) {
  std::vector<T> b(count);
  for (auto& x : b) x = static_cast<T>(rng.uniform(-0.1, 0.1));
  return b;
}

// 3×3, zero padding 1, stride 1 im2col of a c×h×w map → (c·9)×(h·w).
template <typename T>
std::vector<T> im2col3x3(const std::vector<T>& x, std::size_t c, std::size_t h, std::size_t w) {
  std::vector<T> col(c * 9 * h * w, T(0));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t row = ch * 9 + static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
        T* dst = col.data() + row * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + dx;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            dst[y * w + xx] = x[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
          }
        }
      }
  return col;
}

template <typename T>
std::vector<T> dense(const std::vector<T>& w, const std::vector<T>& b, const std::vector<T>& col,
                     std::size_t cout, std::size_t cin, std::size_t hw, bool rectify) {
  std::vector<T> out(cout * hw);
  for (std::size_t c = 0; c < cout; ++c)
    for (std::size_t p = 0; p < hw; ++p) out[c * hw + p] = b[c];
  kernels::gemm(false, false, cout, hw, cin, w.data(), col.data(), out.data(), true);
  if (rectify)
    for (auto& v : out) v = v > T(0) ? v : T(0);
  return out;
}

constexpr std::size_t kPatchFeatures = 3 * ToyEncoder<float>::kStride * ToyEncoder<float>::kStride;

}  // namespace

template <typename T>
ToyEncoder<T>::ToyEncoder(const EncoderConfig& cfg) : cfg_(cfg) {
  Rng rng(mix_seed(cfg.seed, 0xE4C0DE));
  const std::size_t cm = cfg.mid_channels, ch = cfg.high_channels;
  w1_ = he_normal<T>(kPatchFeatures, cm * kPatchFeatures, rng);
  b1_ = small_bias<T>(cm, rng);
  w2_ = he_normal<T>(cm * 9, cm * cm * 9, rng);
  b2_ = small_bias<T>(cm, rng);
  w3_ = he_normal<T>(cm * 9, ch * cm * 9, rng);
  b3_ = small_bias<T>(ch, rng);
}

template <typename T>
MultiLevelFeatures<T> ToyEncoder<T>::extract(const ImageSample& img) const {
  if (img.height % kStride != 0 || img.width % kStride != 0 || img.height == 0 || img.width == 0)
    throw DimensionError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is not divisible by the encoder stride " + std::to_string(kStride));
  if (img.pixels.size() != 3 * img.height * img.width)
    throw DimensionError("image pixel buffer does not hold 3×H×W values");
  const std::size_t h = img.height / kStride, w = img.width / kStride, hw = h * w;
  const std::size_t cm = cfg_.mid_channels, ch = cfg_.high_channels;

  // Patch embedding: each stride×stride×3 patch becomes one column.
  std::vector<T> patches(kPatchFeatures * hw);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t py = 0; py < kStride; ++py)
      for (std::size_t px = 0; px < kStride; ++px) {
        const std::size_t row = (c * kStride + py) * kStride + px;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            patches[row * hw + y * w + x] = static_cast<T>(
                img.pixels[(c * img.height + y * kStride + py) * img.width + x * kStride + px]);
      }
  auto f1 = dense(w1_, b1_, patches, cm, kPatchFeatures, hw, true);
  auto f2 = dense(w2_, b2_, im2col3x3(f1, cm, h, w), cm, cm * 9, hw, true);
  auto f3 = dense(w3_, b3_, im2col3x3(f2, cm, h, w), ch, cm * 9, hw, false);

  MultiLevelFeatures<T> out;
  out.levels[0] = Tensor<T>::constant({cm, h, w}, std::move(f1));
  out.levels[1] = Tensor<T>::constant({cm, h, w}, std::move(f2));
  out.levels[2] = Tensor<T>::constant({ch, h, w}, std::move(f3));
  out.source = FeatureSource::Toy;
  return out;
}

template <typename T>
std::uint64_t ToyEncoder<T>::checksum() const {
  std::uint64_t hsh = 1469598103934665603ULL;
  for (const auto* v : {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_})
    hsh = fnv1a(v->data(), v->size() * sizeof(T), hsh);
  return hsh;
}

std::vector<std::uint8_t> downsample_mask(std::span<const std::uint8_t> mask, std::size_t height,
                                          std::size_t width, std::size_t out_h, std::size_t out_w) {
  if (mask.size() != height * width) throw DimensionError("mask size does not match H×W");
  if (out_h == 0 || out_w == 0) throw DimensionError("zero-size mask target");
  std::vector<std::uint8_t> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = ((2 * y + 1) * height) / (2 * out_h);
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = ((2 * x + 1) * width) / (2 * out_w);
      out[y * out_w + x] = mask[sy * width + sx] ? 1 : 0;
    }
  }
  return out;
}

template struct MultiLevelFeatures<float>;
template struct MultiLevelFeatures<double>;
template class ToyEncoder<float>;
template class ToyEncoder<double>;

}  // namespace apseg

#pragma once

// Frozen multi-level feature extraction.
//
// The toy encoder stands in for a frozen foundation image encoder: a
// stride-4 patch embedding followed by two 3×3 convolution stages, all at the
// same spatial resolution. f1 and f2 are the intermediate (mid-level) taps,
// f3 the final (high-level) output. Weights are drawn once from a named seed
// and never trained.

#include <array>
#include <cstdint>
#include <vector>

#include "apseg/tensor.hpp"

namespace apseg {

struct ImageSample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;        // 3×H×W, values in [0,1]
  std::vector<std::uint8_t> mask;   // H×W in {0,1}; empty for an unlabeled query
  int class_id = -1;
  int domain_id = 0;
};

enum class FeatureSource { Toy, Imported };

template <typename T>
struct MultiLevelFeatures {
  std::array<Tensor<T>, 3> levels;  // f1, f2 (mid), f3 (high); each c×h×w
  FeatureSource source = FeatureSource::Toy;

  const Tensor<T>& level(int l) const { return levels.at(static_cast<std::size_t>(l)); }
  std::size_t height() const { return levels[0].dim(1); }
  std::size_t width() const { return levels[0].dim(2); }

  /// f1, f2 share the spatial size of f3 and f1/f2 share a channel count.
  void validate() const;
};

struct EncoderConfig {
  std::size_t mid_channels = 48;
  std::size_t high_channels = 32;
  std::uint64_t seed = 0xA95E6ULL;
};

template <typename T>
class ToyEncoder {
 public:
  static constexpr std::size_t kStride = 4;

  explicit ToyEncoder(const EncoderConfig& cfg);

  /// Throws DimensionError unless both image sides are multiples of kStride.
  MultiLevelFeatures<T> extract(const ImageSample& img) const;

  const EncoderConfig& config() const { return cfg_; }
  /// FNV-1a over all weights; constant for the encoder's lifetime.
  std::uint64_t checksum() const;

 private:
  EncoderConfig cfg_;
  std::vector<T> w1_, b1_, w2_, b2_, w3_, b3_;
};

/// Nearest-neighbour downsampling of an H×W binary mask to h×w, sampling
/// source pixel floor((i + 0.5)·H/h).
std::vector<std::uint8_t> downsample_mask(std::span<const std::uint8_t> mask, std::size_t height,
                                          std::size_t width, std::size_t out_h, std::size_t out_w);

}  // namespace apseg

#pragma once

// Prompt-conditioned mask decoder. Small and trainable, but with the
// interface of a foundation-model decoder: sparse tokens, a dense embedding
// added to the image embedding, two-way attention, 4× upscaling and a
// hypernetwork dot product producing mask logits. Each upscaling stage
// normalises channels per location before its ReLU; with only c_o/8 output
// channels a plain conv + ReLU stage dies easily and freezes training.

#include <string>
#include <vector>

#include "apseg/layers.hpp"

namespace apseg {

struct DecoderConfig {
  std::size_t in_channels = 32;  // channels of the high-level query map
  std::size_t width = 32;        // c_o
  std::size_t attention_dim = 0; // 0: width / 2
  std::size_t ffn_dim = 0;       // 0: 2 · width
  std::size_t blocks = 2;

  std::size_t resolved_attention_dim() const { return attention_dim ? attention_dim : width / 2; }
  std::size_t resolved_ffn_dim() const { return ffn_dim ? ffn_dim : 2 * width; }
  void validate() const;
};

template <typename T>
class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(ParameterSet<T>& ps, const std::string& name, const DecoderConfig& cfg, Rng& rng);

  /// sparse[k×c_o], dense[c_o×h×w], query_high[c_in×h×w] → logits 4h×4w.
  Tensor<T> decode(Bindings<T>& b, const Tensor<T>& sparse, const Tensor<T>& dense,
                   const Tensor<T>& query_high) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  bool project_ = false;
  Conv1x1<T> proj_;
  Parameter<T>* mask_token_ = nullptr;
  std::vector<TwoWayBlock<T>> blocks_;
  Conv1x1<T> up1_, up2_;
  LayerNorm<T> up1_norm_, up2_norm_;
  Mlp<T> hyper_;
};

}  // namespace apseg

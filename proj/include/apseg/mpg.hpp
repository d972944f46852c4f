#pragma once

// Meta prompt generator: turns transformed support and query features into
// sparse (k×c_o) and dense (c_o×h×w) prompt embeddings.
//
// Sparse path: the mid-level features are reduced to c_r channels, the
// support prototype is expanded into k tokens, refined by transformer
// decoder blocks attending to the query map, lifted to c_o and passed
// through E + sin(E).
// Dense path: prototype tile, reduced query map and prior mask are fused,
// enhanced by a pooling pyramid and projected to c_o.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "apseg/layers.hpp"

namespace apseg {

struct MpgConfig {
  std::size_t mid_channels = 48;
  std::size_t high_channels = 32;
  std::size_t reduce_channels = 16;
  std::size_t out_channels = 32;
  std::size_t sparse_count = 4;
  std::size_t decoder_layers = 2;
  std::vector<std::size_t> pyramid{16, 8, 4, 2};
  /// Off: no sparse tokens, and the dense path ends in a 1-channel mask head.
  bool sparse_path = true;

  void validate() const;
};

template <typename T>
struct PromptEmbeddings {
  Tensor<T> sparse;  // k×c_o; undefined without the sparse path
  Tensor<T> dense;   // c_o×h×w, or 1×h×w mask logits without the sparse path
};

template <typename T>
struct PriorMask {
  Tensor<T> values;         // 1×h×w in [0,1]
  bool degenerate = false;  // no support foreground, or a constant similarity map
};

/// Sine/cosine encoding of n flattened positions: row p holds
/// sin(p/10000^(2i/d)) in column 2i and cos of the same in column 2i+1.
template <typename T>
Tensor<T> sine_positional_encoding(std::size_t n, std::size_t d);

/// c×h×w map as hw×c tokens, and back.
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& map);
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::size_t h, std::size_t w);

/// Max cosine similarity of every query location against the support
/// foreground locations of all shots, min-max normalised over the query.
template <typename T>
PriorMask<T> prior_mask(const std::vector<Tensor<T>>& support_high,
                        const std::vector<std::vector<std::uint8_t>>& support_masks,
                        const Tensor<T>& query_high);

template <typename T>
struct MpgOutput {
  PromptEmbeddings<T> prompts;
  Tensor<T> reduced_query;  // c_r×h×w
  Tensor<T> prototype;      // c_r
  PriorMask<T> prior;
};

template <typename T>
class MetaPromptGenerator {
 public:
  MetaPromptGenerator() = default;
  MetaPromptGenerator(ParameterSet<T>& ps, const std::string& name, const MpgConfig& cfg, Rng& rng);

  /// Concatenate f̂₁, f̂₂ on channels, conv1x1 + ReLU to c_r.
  Tensor<T> reduce(Bindings<T>& b, const Tensor<T>& f1, const Tensor<T>& f2) const;
  /// Prototype [c_r] → k×c_r tokens.
  Tensor<T> augment(Bindings<T>& b, const Tensor<T>& prototype) const;
  /// k×c_r tokens attending to the query map → k×c_o sparse embeddings.
  Tensor<T> sparse_path(Bindings<T>& b, const Tensor<T>& e_aug, const Tensor<T>& query) const;
  /// Enhanced c_r×h×w map before the final projection.
  Tensor<T> dense_features(Bindings<T>& b, const Tensor<T>& prototype, const Tensor<T>& query,
                           const Tensor<T>& prior) const;
  Tensor<T> dense_path(Bindings<T>& b, const Tensor<T>& prototype, const Tensor<T>& query,
                       const Tensor<T>& prior) const;

  /// Full generator. `support` and `query` hold the (transformed) three
  /// levels; masks are at feature resolution, one per shot.
  MpgOutput<T> generate(Bindings<T>& b, const std::vector<std::array<Tensor<T>, 3>>& support,
                        const std::vector<std::vector<std::uint8_t>>& support_masks,
                        const std::array<Tensor<T>, 3>& query) const;

  const MpgConfig& config() const { return cfg_; }

 private:
  MpgConfig cfg_;
  Conv1x1<T> reduce_;
  Linear<T> augment_;
  Parameter<T>* token_pos_ = nullptr;
  std::vector<DecoderBlock<T>> blocks_;
  Mlp<T> lift_;
  Conv1x1<T> fuse_;
  std::vector<Conv1x1<T>> branches_;
  Conv1x1<T> merge_;
  Conv1x1<T> head_;
};

}  // namespace apseg

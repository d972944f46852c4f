#pragma once

// The full segmentation model: anchor transformation, prompt generation and
// mask decoding, with the ablation switches used by the experiments.
//
//   baseline  no anchor transformation, dense path with a 1-channel head
//   mpg       prompt generator + decoder on untransformed features
//   full      anchor transformation + prompt generator + decoder

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apseg/dpat.hpp"
#include "apseg/maskdec.hpp"
#include "apseg/mpg.hpp"

namespace apseg {

struct ModelConfig {
  bool use_dpat = true;
  bool use_mpg = true;
  dpat::PseudoMode pseudo = dpat::PseudoMode::Ccs;
  MpgConfig mpg;
  DecoderConfig decoder;
  std::uint64_t seed = 7;

  /// Copies shared extents (channel counts, widths, sparse switch) into the
  /// sub-configs and validates them.
  void resolve();
  std::string variant_name() const;
};

template <typename T>
struct EpisodeInput {
  std::vector<const MultiLevelFeatures<T>*> support;
  std::vector<std::vector<std::uint8_t>> support_masks;  // at feature resolution
  const MultiLevelFeatures<T>* query = nullptr;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // 4h×4w with the decoder, h×w for the baseline head
  std::optional<dpat::TransformOutput<T>> transform;
  MpgOutput<T> mpg;
};

template <typename T>
class ApsegModel {
 public:
  explicit ApsegModel(ModelConfig cfg);
  ApsegModel(const ApsegModel&) = delete;
  ApsegModel& operator=(const ApsegModel&) = delete;

  ForwardResult<T> forward(Bindings<T>& b, const EpisodeInput<T>& input) const;

  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  std::vector<Parameter<T>*> trainable();
  const ModelConfig& config() const { return cfg_; }

 private:
  ForwardResult<T> run(Bindings<T>& b, const EpisodeInput<T>& input, dpat::PseudoMode mode,
                       const std::array<dpat::PrototypeMatrix<T>, 3>* pseudo) const;

  ModelConfig cfg_;
  ParameterSet<T> params_;
  dpat::AnchorLayer<T> anchor_mid_, anchor_high_;
  MetaPromptGenerator<T> mpg_;
  MaskDecoder<T> decoder_;
};

/// Support masks for an episode at feature resolution.
std::vector<std::uint8_t> feature_mask(const ImageSample& sample, std::size_t h, std::size_t w);

}  // namespace apseg

#pragma once

// Episodic evaluation: several runs of sampled episodes, each run with its
// own seed, scored by mIoU.

#include <functional>
#include <string>
#include <vector>

#include "apseg/dataset.hpp"
#include "apseg/metrics.hpp"
#include "apseg/model.hpp"

namespace apseg {

/// Frozen features and feature-resolution masks for every sample of a
/// dataset, computed once.
template <typename T>
class FeatureBank {
 public:
  FeatureBank(const ToyEncoder<T>& encoder, const Dataset& data);
  FeatureBank(std::vector<MultiLevelFeatures<T>> features, const Dataset& data);

  const MultiLevelFeatures<T>& features(std::size_t sample) const { return features_.at(sample); }
  const std::vector<std::uint8_t>& mask(std::size_t sample) const { return masks_.at(sample); }
  std::size_t size() const { return features_.size(); }

 private:
  void build_masks(const Dataset& data);
  std::vector<MultiLevelFeatures<T>> features_;
  std::vector<std::vector<std::uint8_t>> masks_;
};

template <typename T>
EpisodeInput<T> make_input(const FeatureBank<T>& bank, const Episode& ep);

/// Logits resized to the ground-truth resolution.
template <typename T>
Tensor<T> logits_to_image(const Tensor<T>& logits, std::size_t height, std::size_t width);

/// Binary query prediction: sigmoid of the resized logits above 0.5.
template <typename T>
std::vector<std::uint8_t> predict_mask(const ApsegModel<T>& model, const FeatureBank<T>& bank,
                                       const Dataset& data, const Episode& ep);

struct EvalConfig {
  std::size_t runs = 5;
  std::size_t episodes = 200;
  std::size_t shots = 1;
  std::uint64_t seed = 2024;
  Aggregation aggregation = Aggregation::PerClass;
};

struct RunResult {
  std::uint64_t seed = 0;
  double miou = 0;
  std::size_t episodes = 0;
  std::map<int, IouCounts> per_class;
};

struct EvalReport {
  std::vector<RunResult> runs;
  double mean = 0;
  double stddev = 0;  // population standard deviation over runs
  Aggregation aggregation = Aggregation::PerClass;
  std::size_t shots = 1;
  std::string domain;
  std::string model;
  std::uint64_t config_hash = 0;
  std::uint64_t train_seed = 0;
};

std::uint64_t run_seed(std::uint64_t base, std::size_t run);

using MaskPredictor = std::function<std::vector<std::uint8_t>(const Episode&)>;

/// Episodes are sampled serially from the run seed, predicted (possibly in
/// parallel) and accumulated in episode order.
EvalReport evaluate(const Dataset& data, const EvalConfig& cfg, const MaskPredictor& predict);

/// Per-episode callback for renders; called serially in episode order.
using EpisodeObserver =
    std::function<void(std::size_t run, std::size_t index, const Episode&, const std::vector<std::uint8_t>&)>;
EvalReport evaluate(const Dataset& data, const EvalConfig& cfg, const MaskPredictor& predict,
                    const EpisodeObserver& observe);

std::string format_report(const EvalReport& report);
std::string format_report_kv(const EvalReport& report);

}  // namespace apseg

#pragma once

// Episodic training with the soft Dice loss and Adam.

#include <functional>
#include <string>

#include "apseg/evaluate.hpp"

namespace apseg {

inline constexpr double kDiceSmooth = 1.0;

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 4;
  std::size_t steps = 2000;
  std::size_t shots = 1;
  std::uint64_t seed = 1;
  std::size_t log_every = 100;

  void validate() const;
};

/// Soft Dice between sigmoid(logits resized to the mask) and a binary mask.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const ImageSample& gt, T smooth = T(kDiceSmooth));

/// Supplies episode `index` of batch `step`.
using EpisodeSource = std::function<Episode(std::uint64_t step, std::size_t index)>;

template <typename T>
class Trainer {
 public:
  Trainer(ApsegModel<T>& model, const Dataset& data, const FeatureBank<T>& bank, TrainConfig cfg);

  /// One optimisation step over `batch` episodes; returns the mean loss.
  /// A non-finite value anywhere raises NumericError after a diagnostic
  /// dump to the log.
  double step();
  std::uint64_t steps_done() const { return step_; }
  void set_steps_done(std::uint64_t s) { step_ = s; }
  void set_episode_source(EpisodeSource source) { source_ = std::move(source); }
  const TrainConfig& config() const { return cfg_; }

 private:
  ApsegModel<T>& model_;
  const Dataset& data_;
  const FeatureBank<T>& bank_;
  TrainConfig cfg_;
  EpisodeSource source_;
  std::uint64_t step_ = 0;
};

}  // namespace apseg

#include "apseg/metrics.hpp"

#include "apseg/errors.hpp"

namespace apseg {

IouCounts iou_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size())
    throw DimensionError("iou: prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                         std::to_string(gt.size()));
  IouCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.intersection += p && g;
    c.union_ += p || g;
  }
  return c;
}

double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  const auto c = iou_counts(pred, gt);
  return c.union_ == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(c.union_);
}

const char* aggregation_name(Aggregation a) {
  return a == Aggregation::PerClass ? "per-class" : "per-episode";
}

void MiouAccumulator::add(int class_id, std::span<const std::uint8_t> pred,
                          std::span<const std::uint8_t> gt) {
  add(class_id, iou_counts(pred, gt));
}

void MiouAccumulator::add(int class_id, const IouCounts& counts) {
  classes_[class_id] += counts;
  episode_iou_sum_ += counts.union_ == 0 ? 1.0
                                         : static_cast<double>(counts.intersection) /
                                               static_cast<double>(counts.union_);
  ++episodes_;
}

double MiouAccumulator::miou() const {
  if (episodes_ == 0) return 0.0;
  if (mode_ == Aggregation::PerEpisode) return episode_iou_sum_ / static_cast<double>(episodes_);
  double total = 0;
  for (const auto& [id, c] : classes_)
    total += c.union_ == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(c.union_);
  return total / static_cast<double>(classes_.size());
}

}  // namespace apseg

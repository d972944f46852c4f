#pragma once

#include <cstdint>
#include <map>
#include <span>

namespace apseg {

struct IouCounts {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;

  IouCounts& operator+=(const IouCounts& o) {
    intersection += o.intersection;
    union_ += o.union_;
    return *this;
  }
};

IouCounts iou_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// |pred ∩ gt| / |pred ∪ gt|, 1 when both are empty.
double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

enum class Aggregation {
  PerClass,    // per-class ΣI/ΣU, then mean over classes
  PerEpisode,  // mean of per-episode IoU
};

const char* aggregation_name(Aggregation a);

class MiouAccumulator {
 public:
  explicit MiouAccumulator(Aggregation mode = Aggregation::PerClass) : mode_(mode) {}

  void add(int class_id, std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
  void add(int class_id, const IouCounts& counts);
  double miou() const;
  const std::map<int, IouCounts>& per_class() const { return classes_; }
  std::size_t episodes() const { return episodes_; }

 private:
  Aggregation mode_;
  std::map<int, IouCounts> classes_;
  double episode_iou_sum_ = 0;
  std::size_t episodes_ = 0;
};

}  // namespace apseg

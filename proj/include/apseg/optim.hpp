#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "apseg/tensor.hpp"

namespace apseg {

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass reaches it
  std::vector<T> m;     // Adam first moment
  std::vector<T> v;     // Adam second moment
  std::uint64_t step = 0;

  std::size_t numel() const { return value.size(); }
  bool has_grad() const { return !grad.empty(); }
};

/// Owns a model's parameters in registration order. That order is the
/// serialization and gradient-merge order.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Shape shape, std::vector<T> init);
  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const;
  void zero_grad();
  /// FNV-1a over names and values.
  std::uint64_t checksum() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

/// Maps parameters to graph leaves for one forward pass. With tracking off,
/// parameters enter the graph as constants. One Bindings per episode.
template <typename T>
class Bindings {
 public:
  explicit Bindings(bool track_grad) : track_(track_grad) {}

  Tensor<T> operator()(Parameter<T>& p);
  bool tracking() const { return track_; }

  /// Adds leaf gradients (times `weight`) into Parameter::grad. Not thread
  /// safe against other Bindings of the same parameters: call serially.
  void flush_gradients(T weight = T(1));

 private:
  bool track_;
  std::vector<std::pair<Parameter<T>*, Tensor<T>>> bound_;
  std::unordered_map<const Parameter<T>*, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update on every listed parameter, then clears
/// their gradients. A parameter without a gradient is a ContractError.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg);

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace apseg

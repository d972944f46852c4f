#pragma once

// Synthetic cross-domain few-shot benchmark: eight parametric shape classes
// rendered under a domain specification (palette, texture, noise, blur,
// inversion), plus the episode sampler.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "apseg/encoder.hpp"
#include "apseg/random.hpp"

namespace apseg {

inline constexpr int kNumShapeClasses = 8;
/// circle, triangle, square, cross, ring, star, ellipse, l-shape.
const char* shape_name(int class_id);

/// True when the unit-radius shape of the class covers local point (u, v).
bool shape_contains(int class_id, double u, double v);

struct DomainSpec {
  std::string name = "source";
  int id = 0;
  bool invert = false;
  double noise_sigma = 0.03;
  double texture_frequency = 0.08;  // cycles per pixel
  int blur_radius = 0;
  std::uint64_t palette_seed = 11;

  void validate() const;
};

DomainSpec source_domain();
DomainSpec target_domain();

struct Dataset {
  DomainSpec domain;
  std::vector<int> classes;
  std::vector<ImageSample> samples;
  std::array<std::vector<std::size_t>, kNumShapeClasses> by_class;

  const std::vector<std::size_t>& of_class(int class_id) const;
};

/// Deterministic images and exact masks for `per_class` samples of every
/// listed class. `image_size` must be a multiple of 4 and at least 32.
Dataset generate_dataset(const DomainSpec& domain, const std::vector<int>& classes,
                         std::size_t per_class, std::size_t image_size, std::uint64_t seed);

/// ContractError unless the two class sets share no id.
void require_disjoint(const std::vector<int>& train, const std::vector<int>& test);

/// K supports and one query of one class, as indices into Dataset::samples.
struct Episode {
  std::vector<std::size_t> support;
  std::size_t query = 0;
  int class_id = -1;
  int domain_id = 0;
};

/// Class drawn uniformly from the dataset's classes, then K+1 distinct
/// samples. SamplingError if the class has fewer than K+1 samples.
Episode sample_episode(const Dataset& data, std::size_t shots, Rng& rng);
Episode sample_episode(const Dataset& data, int class_id, std::size_t shots, Rng& rng);

}  // namespace apseg

#pragma once

// Run configuration: INI-style `key = value` lines grouped in sections
// [encoder] [dpat] [mpg] [decoder] [data] [train] [eval]. An optional
// top-level `preset = desk|paper` line picks the defaults the rest of the
// file overrides. Unknown sections and keys are rejected.

#include <filesystem>
#include <string>
#include <vector>

#include "apseg/dataset.hpp"
#include "apseg/evaluate.hpp"
#include "apseg/model.hpp"
#include "apseg/trainer.hpp"

namespace apseg {

struct DataConfig {
  std::size_t image_size = 64;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 40;
  std::vector<int> train_classes{0, 1, 2, 3, 4, 5};
  std::vector<int> test_classes{6, 7};
  std::uint64_t seed = 17;
  DomainSpec source = source_domain();
  DomainSpec target = target_domain();
};

struct RunConfig {
  std::string preset = "desk";
  EncoderConfig encoder;
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  EvalConfig eval;

  /// Copies encoder channel counts into the model and validates everything.
  void resolve();
};

RunConfig desk_config();
RunConfig paper_config();
RunConfig preset_config(const std::string& name);

/// Throws ConfigError naming the offending line or key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Sets one `section.key` from its text form.
void set_config_value(RunConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value);

/// Canonical text with every key; parse_config(config_to_text(c)) == c.
std::string config_to_text(const RunConfig& cfg);

/// FNV-1a over the canonical text of the architecture sections (encoder,
/// dpat, mpg, decoder). Training and evaluation settings do not enter it,
/// so a checkpoint stays usable under different eval settings.
std::uint64_t architecture_hash(const RunConfig& cfg);

std::string hex64(std::uint64_t v);

}  // namespace apseg

#pragma once

// Library side of the command-line tool: shared datasets and feature banks,
// training and evaluation drivers, ablation runners, and the CLI entry.

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apseg/checkpoint.hpp"
#include "apseg/config.hpp"

namespace apseg {

/// Exit codes of the `apseg` tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitHashMismatch = 4,
  kExitFormat = 5,
};

/// Datasets and frozen features for one data + encoder configuration,
/// generated on first use.
class Workspace {
 public:
  explicit Workspace(const RunConfig& cfg);

  const ToyEncoder<float>& encoder() const { return encoder_; }
  const Dataset& train_data();
  const FeatureBank<float>& train_bank();
  /// Held-out classes rendered in the "source" or "target" domain.
  const Dataset& eval_data(const std::string& domain);
  const FeatureBank<float>& eval_bank(const std::string& domain);

 private:
  struct Split {
    std::unique_ptr<Dataset> data;
    std::unique_ptr<FeatureBank<float>> bank;
  };
  Split& split(const std::string& name);

  DataConfig data_;
  ToyEncoder<float> encoder_;
  Split train_, eval_source_, eval_target_;
};

struct TrainLogEntry {
  std::uint64_t step = 0;
  double loss = 0;
};

/// Trains from `start_step` up to cfg.train.steps. Progress lines go to
/// `progress` every log_every steps when it is non-null.
std::vector<TrainLogEntry> train_model(ApsegModel<float>& model, Workspace& ws, const RunConfig& cfg,
                                       std::uint64_t start_step, std::ostream* progress);

EvalReport evaluate_model(const ApsegModel<float>& model, Workspace& ws, const RunConfig& cfg,
                          const std::string& domain, std::uint64_t train_seed);

enum class AblationAxis { Components, Channels, SparseCount, CcsMode };

AblationAxis parse_axis(const std::string& name);
const char* axis_name(AblationAxis axis);

struct AblationVariant {
  std::string label;
  RunConfig cfg;
};
std::vector<AblationVariant> ablation_variants(const RunConfig& base, AblationAxis axis);

struct AblationRow {
  std::string label;
  std::string variant;
  std::size_t parameters = 0;
  double final_loss = 0;
  EvalReport report;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::Components;
  std::uint64_t train_seed = 0;
  std::uint64_t eval_seed = 0;
  std::vector<AblationRow> rows;
};

/// Trains and evaluates every variant of the axis with the same training
/// and evaluation seeds.
AblationTable run_ablation(const RunConfig& base, AblationAxis axis, Workspace& ws, std::ostream* progress);
std::string format_ablation(const AblationTable& table);

/// Human-readable summary of a `.apfe` or `.apck` file.
std::string inspect_file(const std::filesystem::path& path);

/// Full command-line entry; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace apseg

#include "apseg/commands.hpp"

#include <CLI11.hpp>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/feature_file.hpp"
#include "apseg/imageio.hpp"
#include "apseg/log.hpp"

namespace apseg {

Workspace::Workspace(const RunConfig& cfg) : data_(cfg.data), encoder_(cfg.encoder) {
  require_disjoint(data_.train_classes, data_.test_classes);
}

Workspace::Split& Workspace::split(const std::string& name) {
  Split* s = nullptr;
  if (name == "train") s = &train_;
  else if (name == "source") s = &eval_source_;
  else if (name == "target") s = &eval_target_;
  else throw ConfigError("unknown domain '" + name + "' (expected source or target)");
  if (!s->data) {
    if (name == "train")
      s->data = std::make_unique<Dataset>(generate_dataset(data_.source, data_.train_classes, data_.train_per_class,
                                                           data_.image_size, data_.seed));
    else
      s->data = std::make_unique<Dataset>(generate_dataset(name == "source" ? data_.source : data_.target,
                                                           data_.test_classes, data_.test_per_class,
                                                           data_.image_size, mix_seed(data_.seed, 0x7E57)));
    s->bank = std::make_unique<FeatureBank<float>>(encoder_, *s->data);
  }
  return *s;
}

const Dataset& Workspace::train_data() { return *split("train").data; }
const FeatureBank<float>& Workspace::train_bank() { return *split("train").bank; }
const Dataset& Workspace::eval_data(const std::string& domain) { return *split(domain).data; }
const FeatureBank<float>& Workspace::eval_bank(const std::string& domain) { return *split(domain).bank; }

std::vector<TrainLogEntry> train_model(ApsegModel<float>& model, Workspace& ws, const RunConfig& cfg,
                                       std::uint64_t start_step, std::ostream* progress) {
  Trainer<float> trainer(model, ws.train_data(), ws.train_bank(), cfg.train);
  trainer.set_steps_done(start_step);
  std::vector<TrainLogEntry> log;
  double window = 0;
  std::size_t in_window = 0;
  while (trainer.steps_done() < cfg.train.steps) {
    const auto step = trainer.steps_done();
    const double loss = trainer.step();
    log.push_back({step, loss});
    window += loss;
    ++in_window;
    if (progress && cfg.train.log_every && (step + 1) % cfg.train.log_every == 0) {
      *progress << "step " << step + 1 << "/" << cfg.train.steps << "  dice " << std::fixed
                << std::setprecision(4) << window / static_cast<double>(in_window) << std::defaultfloat << "\n";
      progress->flush();
      window = 0;
      in_window = 0;
    }
  }
  return log;
}

EvalReport evaluate_model(const ApsegModel<float>& model, Workspace& ws, const RunConfig& cfg,
                          const std::string& domain, std::uint64_t train_seed) {
  const auto& data = ws.eval_data(domain);
  const auto& bank = ws.eval_bank(domain);
  auto report = evaluate(data, cfg.eval, [&](const Episode& ep) { return predict_mask(model, bank, data, ep); });
  report.model = model.config().variant_name();
  report.config_hash = architecture_hash(cfg);
  report.train_seed = train_seed;
  return report;
}

AblationAxis parse_axis(const std::string& name) {
  if (name == "components") return AblationAxis::Components;
  if (name == "channels") return AblationAxis::Channels;
  if (name == "sparse-count") return AblationAxis::SparseCount;
  if (name == "ccs-mode") return AblationAxis::CcsMode;
  throw ConfigError("unknown ablation axis '" + name + "'");
}

const char* axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Components: return "components";
    case AblationAxis::Channels: return "channels";
    case AblationAxis::SparseCount: return "sparse-count";
    case AblationAxis::CcsMode: return "ccs-mode";
  }
  return "components";
}

std::vector<AblationVariant> ablation_variants(const RunConfig& base, AblationAxis axis) {
  std::vector<AblationVariant> out;
  auto with = [&](const std::string& label, auto edit) {
    RunConfig c = base;
    edit(c);
    c.resolve();
    out.push_back({label, c});
  };
  switch (axis) {
    case AblationAxis::Components:
      with("Baseline", [](RunConfig& c) { c.model.use_dpat = false, c.model.use_mpg = false; });
      with("Baseline + MPG", [](RunConfig& c) { c.model.use_dpat = false, c.model.use_mpg = true; });
      with("Baseline + MPG + DPAT", [](RunConfig& c) { c.model.use_dpat = true, c.model.use_mpg = true; });
      break;
    case AblationAxis::Channels:
      for (std::size_t cr : {16, 32, 64})
        with(std::to_string(cr), [cr](RunConfig& c) { c.model.mpg.reduce_channels = cr; });
      break;
    case AblationAxis::SparseCount:
      for (std::size_t k : {1, 4, 8})
        with(std::to_string(k), [k](RunConfig& c) { c.model.mpg.sparse_count = k; });
      break;
    case AblationAxis::CcsMode:
      with("w/o CCS", [](RunConfig& c) { c.model.use_dpat = true, c.model.pseudo = dpat::PseudoMode::None; });
      with("w/ CCS", [](RunConfig& c) { c.model.use_dpat = true, c.model.pseudo = dpat::PseudoMode::Ccs; });
      with("w/ PM-MAP", [](RunConfig& c) { c.model.use_dpat = true, c.model.pseudo = dpat::PseudoMode::PmMap; });
      break;
  }
  return out;
}

AblationTable run_ablation(const RunConfig& base, AblationAxis axis, Workspace& ws, std::ostream* progress) {
  AblationTable table;
  table.axis = axis;
  table.train_seed = base.train.seed;
  table.eval_seed = base.eval.seed;
  for (auto& v : ablation_variants(base, axis)) {
    if (progress) *progress << "== " << axis_name(axis) << ": " << v.label << "\n";
    ApsegModel<float> model(v.cfg.model);
    auto log = train_model(model, ws, v.cfg, 0, progress);
    AblationRow row;
    row.label = v.label;
    row.variant = model.config().variant_name();
    row.parameters = model.parameters().scalar_count();
    row.final_loss = log.empty() ? 0.0 : log.back().loss;
    row.report = evaluate_model(model, ws, v.cfg, "target", v.cfg.train.seed);
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_ablation(const AblationTable& table) {
  const char* head = "Method";
  switch (table.axis) {
    case AblationAxis::Components: head = "Method"; break;
    case AblationAxis::Channels: head = "Channels (c_r)"; break;
    case AblationAxis::SparseCount: head = "Sparse embeddings (k)"; break;
    case AblationAxis::CcsMode: head = "Pseudo prototypes"; break;
  }
  std::ostringstream os;
  os << "# ablation axis=" << axis_name(table.axis) << " train_seed=" << table.train_seed
     << " eval_seed=" << table.eval_seed << "\n";
  os << std::left << std::setw(24) << head << std::setw(14) << "variant" << std::setw(12) << "params"
     << std::setw(12) << "final_dice";
  const std::size_t runs = table.rows.empty() ? 0 : table.rows.front().report.runs.size();
  for (std::size_t r = 0; r < runs; ++r) os << std::setw(9) << ("run" + std::to_string(r));
  os << std::setw(10) << "mIoU" << "std\n";
  os << std::fixed;
  for (const auto& row : table.rows) {
    os << std::setw(24) << row.label << std::setw(14) << row.variant << std::setw(12) << row.parameters
       << std::setw(12) << std::setprecision(4) << row.final_loss << std::setprecision(2);
    for (const auto& run : row.report.runs) os << std::setw(9) << 100.0 * run.miou;
    os << std::setw(10) << 100.0 * row.report.mean << 100.0 * row.report.stddev << "\n";
  }
  return os.str();
}

std::string inspect_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::ostringstream os;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kFeatureMagic, 4) == 0) {
    FeatureFileHeader header;
    auto feats = decode_features<float>(bytes, &header);
    os << "feature file " << path.string() << "\n";
    os << "  version   " << header.version << "\n";
    os << "  image_id  " << header.image_id << "\n";
    os << "  levels    " << header.levels.size() << "\n";
    for (const auto& l : header.levels)
      os << "  level " << l.level_id << "  " << l.channels << "x" << l.height << "x" << l.width << "  checksum "
         << hex64(l.checksum) << "\n";
    os << "  file hash " << hex64(fnv1a(bytes.data(), bytes.size())) << "\n";
    return os.str();
  }
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0) {
    const auto ck = decode_checkpoint(bytes);
    std::size_t total = 0;
    os << "checkpoint " << path.string() << "\n";
    os << "  version     " << kCheckpointVersion << "\n";
    os << "  config_hash " << hex64(ck.meta.config_hash) << "\n";
    os << "  seed        " << ck.meta.seed << "\n";
    os << "  step        " << ck.meta.step << "\n";
    os << "  file hash   " << hex64(fnv1a(bytes.data(), bytes.size())) << "\n";
    os << "  " << std::left << std::setw(40) << "parameter" << std::setw(16) << "shape" << "count\n";
    for (const auto& e : ck.entries) {
      const std::size_t n = shape_numel(e.shape);
      total += n;
      os << "  " << std::setw(40) << e.name << std::setw(16) << shape_str(e.shape) << n << "\n";
    }
    os << "  total parameters " << total << " in " << ck.entries.size() << " tensors\n";
    return os.str();
  }
  throw FormatError(path.string() + ": not a feature file or checkpoint");
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> episodes;
  std::optional<std::size_t> shots;
  std::string aggregation;
  bool verbose = false;
  bool quiet = false;
};

RunConfig load_with_overrides(const CommonOptions& o) {
  RunConfig cfg = o.config.empty() ? desk_config() : load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.steps) cfg.train.steps = *o.steps;
  if (o.runs) cfg.eval.runs = *o.runs;
  if (o.episodes) cfg.eval.episodes = *o.episodes;
  if (o.shots) cfg.eval.shots = *o.shots;
  if (!o.aggregation.empty()) set_config_value(cfg, "eval", "aggregation", o.aggregation);
  cfg.resolve();
  return cfg;
}

int cmd_train(const CommonOptions& o, const std::string& out_dir, const std::string& resume) {
  const RunConfig cfg = load_with_overrides(o);
  const auto hash = architecture_hash(cfg);
  std::filesystem::create_directories(out_dir);
  ApsegModel<float> model(cfg.model);
  std::uint64_t start = 0;
  if (!resume.empty()) {
    const auto meta = load_checkpoint(resume, model.parameters(), hash);
    if (meta.seed != cfg.train.seed)
      log_warn("resuming a checkpoint trained with seed " + std::to_string(meta.seed) + " under seed " +
               std::to_string(cfg.train.seed));
    start = meta.step;
  }
  Workspace ws(cfg);
  auto log = train_model(model, ws, cfg, start, o.quiet ? nullptr : &std::cerr);

  const std::filesystem::path dir(out_dir);
  save_checkpoint(dir / "model.apck", model.parameters(), {hash, cfg.train.seed, cfg.train.steps});
  std::ostringstream lt;
  lt << "# config_hash=" << hex64(hash) << " seed=" << cfg.train.seed << " model=" << cfg.model.variant_name()
     << " start_step=" << start << "\n";
  lt << "step loss\n" << std::setprecision(9);
  for (const auto& e : log) lt << e.step << " " << e.loss << "\n";
  write_text(dir / "train_log.txt", lt.str());
  write_text(dir / "config.cfg", config_to_text(cfg));
  const auto ck_hash = file_hash(dir / "model.apck");
  std::cout << "checkpoint " << (dir / "model.apck").string() << "\n";
  std::cout << "checkpoint_hash " << hex64(ck_hash) << "\n";
  std::cout << "config_hash " << hex64(hash) << "\n";
  std::cout << "parameters " << model.parameters().scalar_count() << "\n";
  if (!log.empty()) std::cout << "final_loss " << log.back().loss << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& domain,
             const std::string& out_dir, std::size_t render, bool oracle) {
  const RunConfig cfg = load_with_overrides(o);
  Workspace ws(cfg);
  const auto& data = ws.eval_data(domain);
  EvalReport report;
  std::unique_ptr<ApsegModel<float>> model;
  std::uint64_t train_seed = 0;
  if (!oracle) {
    if (checkpoint.empty()) throw ConfigError("eval needs --checkpoint (or --oracle)");
    model = std::make_unique<ApsegModel<float>>(cfg.model);
    train_seed = load_checkpoint(checkpoint, model->parameters(), architecture_hash(cfg)).seed;
  }
  const std::filesystem::path dir(out_dir);
  if (!out_dir.empty()) std::filesystem::create_directories(dir);
  if (render > 0 && out_dir.empty()) throw ConfigError("--render needs --out");

  MaskPredictor predict;
  if (oracle) {
    predict = [&](const Episode& ep) { return data.samples.at(ep.query).mask; };
  } else {
    const auto& bank = ws.eval_bank(domain);
    predict = [&, m = model.get()](const Episode& ep) { return predict_mask(*m, bank, data, ep); };
  }
  EpisodeObserver observe = [&](std::size_t run, std::size_t index, const Episode& ep,
                                const std::vector<std::uint8_t>& pred) {
    if (run != 0 || index >= render) return;
    const auto& q = data.samples.at(ep.query);
    const std::string stem = "episode" + std::to_string(index) + "_" + shape_name(ep.class_id);
    write_overlay_ppm(dir / (stem + "_overlay.ppm"), q, pred);
    write_mask_pgm(dir / (stem + "_pred.pgm"), q.height, q.width, pred);
    write_mask_pgm(dir / (stem + "_gt.pgm"), q.height, q.width, q.mask);
    for (std::size_t s = 0; s < ep.support.size(); ++s)
      write_overlay_ppm(dir / (stem + "_support" + std::to_string(s) + ".ppm"), data.samples.at(ep.support[s]), {});
  };
  report = evaluate(data, cfg.eval, predict, observe);
  report.model = oracle ? "oracle" : cfg.model.variant_name();
  report.config_hash = architecture_hash(cfg);
  report.train_seed = train_seed;
  const auto text = format_report(report);
  std::cout << text;
  if (!out_dir.empty()) {
    write_text(dir / "report.txt", text);
    write_text(dir / "report.kv", format_report_kv(report));
  }
  return kExitOk;
}

int cmd_ablate(const CommonOptions& o, const std::string& axis_text, const std::string& out_dir) {
  const RunConfig cfg = load_with_overrides(o);
  std::vector<AblationAxis> axes;
  if (axis_text == "all")
    axes = {AblationAxis::Components, AblationAxis::Channels, AblationAxis::SparseCount, AblationAxis::CcsMode};
  else
    axes = {parse_axis(axis_text)};
  Workspace ws(cfg);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  for (auto axis : axes) {
    const auto table = run_ablation(cfg, axis, ws, o.quiet ? nullptr : &std::cerr);
    const auto text = format_ablation(table);
    std::cout << text << "\n";
    if (!out_dir.empty())
      write_text(std::filesystem::path(out_dir) / (std::string("ablation_") + axis_name(axis) + ".txt"), text);
  }
  return kExitOk;
}

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config, "Run configuration file");
  app->add_option("--seed", o.seed, "Training seed (overrides [train] seed)");
  app->add_option("--runs", o.runs, "Evaluation runs");
  app->add_option("--episodes", o.episodes, "Episodes per evaluation run");
  app->add_option("--shots", o.shots, "Support shots at evaluation");
  app->add_option("--aggregation", o.aggregation, "per-class or per-episode mIoU");
  app->add_flag("-v,--verbose", o.verbose, "Log informational messages");
  app->add_flag("-q,--quiet", o.quiet, "No progress output");
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Cross-domain few-shot segmentation with anchor-transformed prototypes and generated prompts"};
  app.require_subcommand(1);
  CommonOptions o;
  std::string out_dir, resume, checkpoint, domain = "target", axis, file;
  std::size_t render = 0;
  bool oracle = false;

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train, o);
  train->add_option("--steps", o.steps, "Total training steps (overrides [train] steps)");
  train->add_option("-o,--out", out_dir, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out classes");
  add_common(eval, o);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate");
  eval->add_option("--domain", domain, "source or target")->check(CLI::IsMember({"source", "target"}));
  eval->add_option("-o,--out", out_dir, "Directory for report.txt, report.kv and renders");
  eval->add_option("--render", render, "Write renders for the first N episodes of run 0");
  eval->add_flag("--oracle", oracle, "Score the ground-truth predictor (harness self-check)");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate the variants of an ablation axis");
  add_common(ablate, o);
  ablate->add_option("--steps", o.steps, "Training steps per variant");
  ablate->add_option("--axis", axis, "components, channels, sparse-count, ccs-mode or all")->required();
  ablate->add_option("-o,--out", out_dir, "Directory for the ablation tables");

  auto* inspect = app.add_subcommand("inspect", "Summarise a feature file or checkpoint");
  inspect->add_option("file", file, "A .apfe or .apck file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  set_log_level(o.verbose ? LogLevel::Info : LogLevel::Warn);

  try {
    if (*train) return cmd_train(o, out_dir, resume);
    if (*eval) return cmd_eval(o, checkpoint, domain, out_dir, render, oracle);
    if (*ablate) return cmd_ablate(o, axis, out_dir);
    if (*inspect) {
      std::cout << inspect_file(file);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigHashMismatch& e) {
    std::cerr << "config hash mismatch: " << e.what() << "\n";
    return kExitHashMismatch;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace apseg

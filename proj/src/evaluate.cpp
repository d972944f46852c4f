#include "apseg/evaluate.hpp"

#include <cmath>
#include <exception>
#include <iomanip>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/parallel.hpp"

namespace apseg {

template <typename T>
FeatureBank<T>::FeatureBank(const ToyEncoder<T>& encoder, const Dataset& data) {
  features_.resize(data.samples.size());
  std::exception_ptr failure;
  APSEG_OMP(parallel for schedule(dynamic))
  for (long i = 0; i < static_cast<long>(data.samples.size()); ++i) {
    try {
      features_[static_cast<std::size_t>(i)] = encoder.extract(data.samples[static_cast<std::size_t>(i)]);
    } catch (...) {
      APSEG_OMP(critical)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  build_masks(data);
}

template <typename T>
FeatureBank<T>::FeatureBank(std::vector<MultiLevelFeatures<T>> features, const Dataset& data)
    : features_(std::move(features)) {
  if (features_.size() != data.samples.size())
    throw ContractError("feature bank needs one feature set per sample");
  build_masks(data);
}

template <typename T>
void FeatureBank<T>::build_masks(const Dataset& data) {
  masks_.clear();
  for (std::size_t i = 0; i < features_.size(); ++i) {
    features_[i].validate();
    masks_.push_back(feature_mask(data.samples[i], features_[i].height(), features_[i].width()));
  }
}

template <typename T>
EpisodeInput<T> make_input(const FeatureBank<T>& bank, const Episode& ep) {
  EpisodeInput<T> in;
  for (auto s : ep.support) {
    in.support.push_back(&bank.features(s));
    in.support_masks.push_back(bank.mask(s));
  }
  in.query = &bank.features(ep.query);
  return in;
}

template <typename T>
Tensor<T> logits_to_image(const Tensor<T>& logits, std::size_t height, std::size_t width) {
  if (logits.rank() != 2) throw DimensionError("logits must be h×w, got " + shape_str(logits.shape()));
  auto r = bilinear_resize(reshape(logits, {1, logits.dim(0), logits.dim(1)}), height, width);
  return reshape(r, {height, width});
}

template <typename T>
std::vector<std::uint8_t> predict_mask(const ApsegModel<T>& model, const FeatureBank<T>& bank,
                                       const Dataset& data, const Episode& ep) {
  Bindings<T> frozen(false);
  const auto& q = data.samples.at(ep.query);
  auto prob = sigmoid(logits_to_image(model.forward(frozen, make_input(bank, ep)).logits, q.height, q.width));
  std::vector<std::uint8_t> out(prob.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob.data()[i] > T(0.5) ? 1 : 0;
  return out;
}

std::uint64_t run_seed(std::uint64_t base, std::size_t run) { return mix_seed(base, 1000 + run); }

EvalReport evaluate(const Dataset& data, const EvalConfig& cfg, const MaskPredictor& predict) {
  return evaluate(data, cfg, predict, nullptr);
}

EvalReport evaluate(const Dataset& data, const EvalConfig& cfg, const MaskPredictor& predict,
                    const EpisodeObserver& observe) {
  if (cfg.runs == 0 || cfg.episodes == 0) throw ConfigError("evaluation needs runs and episodes");
  EvalReport report;
  report.aggregation = cfg.aggregation;
  report.shots = cfg.shots;
  report.domain = data.domain.name;
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    RunResult run;
    run.seed = run_seed(cfg.seed, r);
    Rng rng(run.seed);
    std::vector<Episode> episodes;
    for (std::size_t e = 0; e < cfg.episodes; ++e) episodes.push_back(sample_episode(data, cfg.shots, rng));

    std::vector<std::vector<std::uint8_t>> preds(episodes.size());
    std::exception_ptr failure;
    APSEG_OMP(parallel for schedule(dynamic))
    for (long e = 0; e < static_cast<long>(episodes.size()); ++e) {
      try {
        preds[static_cast<std::size_t>(e)] = predict(episodes[static_cast<std::size_t>(e)]);
      } catch (...) {
        APSEG_OMP(critical)
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);

    MiouAccumulator acc(cfg.aggregation);
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      acc.add(episodes[e].class_id, preds[e], data.samples.at(episodes[e].query).mask);
      if (observe) observe(r, e, episodes[e], preds[e]);
    }
    run.miou = acc.miou();
    run.episodes = acc.episodes();
    run.per_class = acc.per_class();
    report.runs.push_back(std::move(run));
  }
  double sum = 0;
  for (const auto& r : report.runs) sum += r.miou;
  report.mean = sum / static_cast<double>(report.runs.size());
  double var = 0;
  for (const auto& r : report.runs) var += (r.miou - report.mean) * (r.miou - report.mean);
  report.stddev = std::sqrt(var / static_cast<double>(report.runs.size()));
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream os;
  os << "# evaluation: model=" << report.model << " domain=" << report.domain << " shots=" << report.shots
     << " aggregation=" << aggregation_name(report.aggregation) << "\n";
  os << "# config_hash=" << std::hex << std::setw(16) << std::setfill('0') << report.config_hash << std::dec
     << std::setfill(' ') << " train_seed=" << report.train_seed << "\n";
  os << std::left << std::setw(5) << "run" << std::setw(22) << "seed" << std::setw(10) << "episodes"
     << std::setw(8) << "mIoU";
  std::vector<int> classes;
  if (!report.runs.empty())
    for (const auto& [id, c] : report.runs.front().per_class) classes.push_back(id);
  for (int id : classes) os << std::setw(12) << (std::string("IoU:") + shape_name(id));
  os << "\n";
  os << std::fixed << std::setprecision(2);
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    const auto& run = report.runs[r];
    os << std::setw(5) << r << std::setw(22) << run.seed << std::setw(10) << run.episodes << std::setw(8)
       << 100.0 * run.miou;
    for (int id : classes) {
      auto it = run.per_class.find(id);
      double v = 0;
      if (it != run.per_class.end())
        v = it->second.union_ ? static_cast<double>(it->second.intersection) / it->second.union_ : 1.0;
      os << std::setw(12) << 100.0 * v;
    }
    os << "\n";
  }
  os << "mean mIoU " << 100.0 * report.mean << " +/- " << 100.0 * report.stddev << "\n";
  return os.str();
}

std::string format_report_kv(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "model=" << report.model << "\n";
  os << "domain=" << report.domain << "\n";
  os << "shots=" << report.shots << "\n";
  os << "aggregation=" << aggregation_name(report.aggregation) << "\n";
  os << "config_hash=" << std::hex << std::setw(16) << std::setfill('0') << report.config_hash << std::dec
     << "\n";
  os << "train_seed=" << report.train_seed << "\n";
  os << "runs=" << report.runs.size() << "\n";
  for (std::size_t r = 0; r < report.runs.size(); ++r) {
    const auto& run = report.runs[r];
    os << "run." << r << ".seed=" << run.seed << "\n";
    os << "run." << r << ".episodes=" << run.episodes << "\n";
    os << "run." << r << ".miou=" << run.miou << "\n";
    for (const auto& [id, c] : run.per_class) {
      os << "run." << r << ".class." << id << ".intersection=" << c.intersection << "\n";
      os << "run." << r << ".class." << id << ".union=" << c.union_ << "\n";
    }
  }
  os << "miou.mean=" << report.mean << "\n";
  os << "miou.stddev=" << report.stddev << "\n";
  return os.str();
}

#define APSEG_INSTANTIATE_EVAL(T)                                                                  \
  template class FeatureBank<T>;                                                                   \
  template EpisodeInput<T> make_input<T>(const FeatureBank<T>&, const Episode&);                   \
  template Tensor<T> logits_to_image<T>(const Tensor<T>&, std::size_t, std::size_t);               \
  template std::vector<std::uint8_t> predict_mask<T>(const ApsegModel<T>&, const FeatureBank<T>&, \
                                                     const Dataset&, const Episode&);

APSEG_INSTANTIATE_EVAL(float)
APSEG_INSTANTIATE_EVAL(double)

}  // namespace apseg

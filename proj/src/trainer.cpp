#include "apseg/trainer.hpp"

#include <exception>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/log.hpp"
#include "apseg/parallel.hpp"

namespace apseg {

void TrainConfig::validate() const {
  if (!(lr >= 0)) throw ConfigError("lr must be non-negative");
  if (batch == 0) throw ConfigError("batch must be at least 1");
  if (shots == 0) throw ConfigError("shots must be at least 1");
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& logits, const ImageSample& gt, T smooth) {
  if (gt.mask.size() != gt.height * gt.width) throw DimensionError("ground truth has no mask");
  auto prob = sigmoid(logits_to_image(logits, gt.height, gt.width));
  std::vector<T> target(gt.mask.begin(), gt.mask.end());
  return soft_dice(prob, std::span<const T>(target), smooth);
}

template <typename T>
Trainer<T>::Trainer(ApsegModel<T>& model, const Dataset& data, const FeatureBank<T>& bank, TrainConfig cfg)
    : model_(model), data_(data), bank_(bank), cfg_(cfg) {
  cfg_.validate();
  source_ = [this](std::uint64_t step, std::size_t index) {
    Rng rng(mix_seed(mix_seed(cfg_.seed, step), index));
    return sample_episode(data_, cfg_.shots, rng);
  };
}

template <typename T>
double Trainer<T>::step() {
  const std::size_t n = cfg_.batch;
  std::vector<Episode> episodes;
  for (std::size_t e = 0; e < n; ++e) episodes.push_back(source_(step_, e));

  std::vector<std::unique_ptr<Bindings<T>>> bindings(n);
  std::vector<double> losses(n, 0.0);
  std::vector<std::exception_ptr> failures(n);
  APSEG_OMP(parallel for schedule(static, 1))
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const auto e = static_cast<std::size_t>(i);
    try {
      bindings[e] = std::make_unique<Bindings<T>>(true);
      auto out = model_.forward(*bindings[e], make_input(bank_, episodes[e]));
      auto loss = dice_loss(out.logits, data_.samples.at(episodes[e].query));
      losses[e] = static_cast<double>(loss.item());
      backward(loss);
    } catch (...) {
      failures[e] = std::current_exception();
    }
  }
  for (std::size_t e = 0; e < n; ++e) {
    if (!failures[e]) continue;
    try {
      std::rethrow_exception(failures[e]);
    } catch (const NumericError& err) {
      std::ostringstream os;
      os << "non-finite value at step " << step_ << ", episode " << e << " (class "
         << episodes[e].class_id << ", query sample " << episodes[e].query << "): " << err.what()
         << "; parameter checksum " << std::hex << model_.parameters().checksum();
      log_warn(os.str());
      throw;
    }
  }

  // Merge in episode order so the sum is independent of scheduling.
  const T weight = T(1) / static_cast<T>(n);
  for (auto& b : bindings) b->flush_gradients(weight);
  auto params = model_.trainable();
  for (auto* p : params) {
    if (!p->has_grad()) p->grad.assign(p->numel(), T(0));
    for (T g : p->grad)
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("non-finite gradient for " + p->name + " at step " + std::to_string(step_));
  }
  AdamConfig adam;
  adam.lr = cfg_.lr;
  adam_step<T>(params, adam);
  ++step_;

  double mean = 0;
  for (double l : losses) mean += l;
  return mean / static_cast<double>(n);
}

template Tensor<float> dice_loss<float>(const Tensor<float>&, const ImageSample&, float);
template Tensor<double> dice_loss<double>(const Tensor<double>&, const ImageSample&, double);
template class Trainer<float>;
template class Trainer<double>;

}  // namespace apseg

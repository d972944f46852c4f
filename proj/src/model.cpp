#include "apseg/model.hpp"

#include "apseg/errors.hpp"

namespace apseg {

void ModelConfig::resolve() {
  mpg.sparse_path = use_mpg;
  decoder.in_channels = mpg.high_channels;
  decoder.width = mpg.out_channels;
  mpg.validate();
  if (use_mpg) decoder.validate();
}

std::string ModelConfig::variant_name() const {
  if (!use_mpg) return use_dpat ? "baseline+dpat" : "baseline";
  return use_dpat ? "full" : "mpg";
}

template <typename T>
ApsegModel<T>::ApsegModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.resolve();
  Rng rng(mix_seed(cfg_.seed, 0xA1));
  if (cfg_.use_dpat) {
    anchor_mid_ = dpat::AnchorLayer<T>(params_, "anchor.mid", cfg_.mpg.mid_channels, dpat::AnchorTier::Mid, rng);
    anchor_high_ =
        dpat::AnchorLayer<T>(params_, "anchor.high", cfg_.mpg.high_channels, dpat::AnchorTier::High, rng);
  }
  mpg_ = MetaPromptGenerator<T>(params_, "mpg", cfg_.mpg, rng);
  if (cfg_.use_mpg) decoder_ = MaskDecoder<T>(params_, "decoder", cfg_.decoder, rng);
}

template <typename T>
std::vector<Parameter<T>*> ApsegModel<T>::trainable() {
  std::vector<Parameter<T>*> out;
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back(&params_[i]);
  return out;
}

template <typename T>
ForwardResult<T> ApsegModel<T>::run(Bindings<T>& b, const EpisodeInput<T>& input, dpat::PseudoMode mode,
                                    const std::array<dpat::PrototypeMatrix<T>, 3>* pseudo) const {
  ForwardResult<T> out;
  std::vector<std::array<Tensor<T>, 3>> support;
  std::array<Tensor<T>, 3> query;
  if (cfg_.use_dpat) {
    auto tr = dpat::transform(input.support, input.support_masks, *input.query,
                              b(anchor_mid_.parameter()), b(anchor_high_.parameter()), mode, pseudo);
    support = tr.support;
    query = tr.query;
    out.transform = std::move(tr);
  } else {
    for (const auto* s : input.support) support.push_back(s->levels);
    query = input.query->levels;
  }
  out.mpg = mpg_.generate(b, support, input.support_masks, query);
  if (cfg_.use_mpg) {
    out.logits = decoder_.decode(b, out.mpg.prompts.sparse, out.mpg.prompts.dense, query[2]);
  } else {
    const auto& d = out.mpg.prompts.dense;
    out.logits = reshape(d, {d.dim(1), d.dim(2)});
  }
  return out;
}

template <typename T>
ForwardResult<T> ApsegModel<T>::forward(Bindings<T>& b, const EpisodeInput<T>& input) const {
  if (!input.query || input.support.empty() || input.support.size() != input.support_masks.size())
    throw ContractError("episode input needs a query and one mask per support shot");
  input.query->validate();
  for (const auto* s : input.support) s->validate();
  const std::size_t h = input.query->height(), w = input.query->width();
  for (const auto& m : input.support_masks)
    if (m.size() != h * w) throw DimensionError("support mask is not at feature resolution");

  if (!cfg_.use_dpat || cfg_.pseudo != dpat::PseudoMode::PmMap)
    return run(b, input, cfg_.use_dpat ? cfg_.pseudo : dpat::PseudoMode::None, nullptr);

  // Coarse pass without pseudo prototypes; its thresholded prediction picks
  // the query regions pooled into pseudo prototypes for the real pass.
  Bindings<T> frozen(false);
  auto coarse = run(frozen, input, dpat::PseudoMode::None, nullptr).logits;
  auto small = bilinear_resize(reshape(coarse, {1, coarse.dim(0), coarse.dim(1)}), h, w);
  std::array<dpat::PrototypeMatrix<T>, 3> pseudo;
  for (int l = 0; l < 3; ++l) pseudo[l] = dpat::pm_map_prototypes(small, input.query->level(l));
  return run(b, input, dpat::PseudoMode::PmMap, &pseudo);
}

std::vector<std::uint8_t> feature_mask(const ImageSample& sample, std::size_t h, std::size_t w) {
  if (sample.mask.size() != sample.height * sample.width)
    throw ContractError("sample has no mask at image resolution");
  return downsample_mask(sample.mask, sample.height, sample.width, h, w);
}

template class ApsegModel<float>;
template class ApsegModel<double>;

}  // namespace apseg

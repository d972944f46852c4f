#include "apseg/maskdec.hpp"

#include "apseg/errors.hpp"
#include "apseg/mpg.hpp"

namespace apseg {

void DecoderConfig::validate() const {
  // The last upscale stage has width/8 channels and normalises across them.
  // One channel normalises to a constant and two to a sign, which has no
  // gradient, so at least three are needed.
  if (in_channels == 0 || width < 24 || width % 8 != 0)
    throw ConfigError("decoder width must be a multiple of 8 and at least 24");
  if (resolved_attention_dim() == 0) throw ConfigError("decoder attention_dim must be positive");
}

template <typename T>
MaskDecoder<T>::MaskDecoder(ParameterSet<T>& ps, const std::string& name, const DecoderConfig& cfg,
                            Rng& rng)
    : cfg_(cfg), project_(cfg.in_channels != cfg.width) {
  cfg.validate();
  const std::size_t c = cfg.width;
  if (project_) proj_ = Conv1x1<T>(ps, name + ".proj", cfg.in_channels, c, rng);
  std::vector<T> tok(c);
  for (auto& v : tok) v = static_cast<T>(rng.normal(0.0, 0.1));
  mask_token_ = &ps.add(name + ".mask_token", {1, c}, std::move(tok));
  for (std::size_t i = 0; i < cfg.blocks; ++i)
    blocks_.emplace_back(ps, name + ".block" + std::to_string(i), c, cfg.resolved_attention_dim(),
                         cfg.resolved_ffn_dim(), rng);
  up1_ = Conv1x1<T>(ps, name + ".up1", c, c / 4, rng);
  up1_norm_ = LayerNorm<T>(ps, name + ".up1_norm", c / 4);
  up2_ = Conv1x1<T>(ps, name + ".up2", c / 4, c / 8, rng);
  up2_norm_ = LayerNorm<T>(ps, name + ".up2_norm", c / 8);
  hyper_ = Mlp<T>(ps, name + ".hyper", c, c, c / 8, rng);
}

template <typename T>
Tensor<T> MaskDecoder<T>::decode(Bindings<T>& b, const Tensor<T>& sparse, const Tensor<T>& dense,
                                 const Tensor<T>& query_high) const {
  const std::size_t c = cfg_.width;
  if (query_high.rank() != 3 || query_high.dim(0) != cfg_.in_channels)
    throw DimensionError("decoder expects a " + std::to_string(cfg_.in_channels) +
                         "-channel query map, got " + shape_str(query_high.shape()));
  if (dense.rank() != 3 || dense.dim(0) != c || dense.dim(1) != query_high.dim(1) ||
      dense.dim(2) != query_high.dim(2))
    throw DimensionError("dense embedding " + shape_str(dense.shape()) + " does not fit width " +
                         std::to_string(c) + " at the query resolution");
  if (sparse.rank() != 2 || sparse.dim(1) != c)
    throw DimensionError("sparse embedding " + shape_str(sparse.shape()) + " does not have width " +
                         std::to_string(c));
  const std::size_t h = query_high.dim(1), w = query_high.dim(2);

  auto image = add(project_ ? proj_(b, query_high) : query_high, dense);
  auto img_tokens = to_tokens(image);
  auto tokens = concat(std::vector<Tensor<T>>{b(*mask_token_), sparse});
  for (const auto& block : blocks_) std::tie(tokens, img_tokens) = block(b, tokens, img_tokens);

  image = from_tokens(img_tokens, h, w);
  auto stage = [&](const Conv1x1<T>& conv, const LayerNorm<T>& norm, const Tensor<T>& x, std::size_t oh,
                   std::size_t ow) {
    return relu(from_tokens(norm(b, to_tokens(conv(b, bilinear_resize(x, oh, ow)))), oh, ow));
  };
  auto up = stage(up1_, up1_norm_, image, 2 * h, 2 * w);
  up = stage(up2_, up2_norm_, up, 4 * h, 4 * w);
  auto hyper = hyper_(b, slice_rows(tokens, 0, 1));
  return reshape(matmul(hyper, reshape(up, {c / 8, 16 * h * w})), {4 * h, 4 * w});
}

template class MaskDecoder<float>;
template class MaskDecoder<double>;

}  // namespace apseg

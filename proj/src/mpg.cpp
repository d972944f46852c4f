#include "apseg/mpg.hpp"

#include <algorithm>
#include <cmath>

#include "apseg/errors.hpp"

namespace apseg {

void MpgConfig::validate() const {
  if (mid_channels == 0 || high_channels == 0 || reduce_channels == 0 || out_channels == 0)
    throw ConfigError("channel counts must be positive");
  if (sparse_count == 0) throw ConfigError("sparse_count must be at least 1");
  if (pyramid.empty()) throw ConfigError("pyramid needs at least one scale");
  for (auto s : pyramid)
    if (s == 0) throw ConfigError("pyramid scales must be positive");
}

template <typename T>
Tensor<T> sine_positional_encoding(std::size_t n, std::size_t d) {
  std::vector<T> pe(n * d);
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t j = 0; j < d; ++j) {
      const double i2 = static_cast<double>(j - j % 2);
      const double angle = static_cast<double>(p) / std::pow(10000.0, i2 / static_cast<double>(d));
      pe[p * d + j] = static_cast<T>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return Tensor<T>::constant({n, d}, std::move(pe));
}

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& map) {
  if (map.rank() != 3) throw DimensionError("expected a c×h×w map, got " + shape_str(map.shape()));
  return transpose(reshape(map, {map.dim(0), map.dim(1) * map.dim(2)}));
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& tokens, std::size_t h, std::size_t w) {
  if (tokens.rank() != 2 || tokens.dim(0) != h * w)
    throw DimensionError("token matrix " + shape_str(tokens.shape()) + " is not " +
                         std::to_string(h * w) + " rows");
  return reshape(transpose(tokens), {tokens.dim(1), h, w});
}

template <typename T>
PriorMask<T> prior_mask(const std::vector<Tensor<T>>& support_high,
                        const std::vector<std::vector<std::uint8_t>>& support_masks,
                        const Tensor<T>& query_high) {
  if (support_high.size() != support_masks.size())
    throw ContractError("prior mask needs one mask per support map");
  const std::size_t h = query_high.dim(1), w = query_high.dim(2);
  std::vector<Tensor<T>> fg_rows;
  for (std::size_t s = 0; s < support_high.size(); ++s) {
    const auto& f = support_high[s];
    if (f.rank() != 3 || f.dim(0) != query_high.dim(0))
      throw DimensionError("support map " + shape_str(f.shape()) + " vs query " +
                           shape_str(query_high.shape()));
    if (support_masks[s].size() != f.dim(1) * f.dim(2))
      throw DimensionError("support mask does not match its feature map");
    std::vector<std::uint32_t> idx;
    for (std::size_t p = 0; p < support_masks[s].size(); ++p)
      if (support_masks[s][p]) idx.push_back(static_cast<std::uint32_t>(p));
    if (!idx.empty()) fg_rows.push_back(gather_rows(to_tokens(f), idx));
  }
  PriorMask<T> out;
  if (fg_rows.empty()) {
    out.values = Tensor<T>::full({1, h, w}, T(0.5));
    out.degenerate = true;
    return out;
  }
  auto fg = fg_rows.size() == 1 ? fg_rows.front() : concat(fg_rows);
  auto best = row_max(cosine_matrix(to_tokens(query_high), fg));
  auto lo = *std::min_element(best.data().begin(), best.data().end());
  auto hi = *std::max_element(best.data().begin(), best.data().end());
  out.degenerate = static_cast<double>(hi - lo) <= kConstantRangeTol;
  out.values = reshape(minmax_normalize(best), {1, h, w});
  return out;
}

template <typename T>
MetaPromptGenerator<T>::MetaPromptGenerator(ParameterSet<T>& ps, const std::string& name,
                                            const MpgConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  const std::size_t cr = cfg.reduce_channels, co = cfg.out_channels, k = cfg.sparse_count;
  reduce_ = Conv1x1<T>(ps, name + ".reduce", 2 * cfg.mid_channels, cr, rng);
  if (cfg.sparse_path) {
    augment_ = Linear<T>(ps, name + ".augment", cr, k * cr, rng);
    std::vector<T> pos(k * cr);
    for (auto& v : pos) v = static_cast<T>(rng.normal(0.0, 0.1));
    token_pos_ = &ps.add(name + ".token_pos", {k, cr}, std::move(pos));
    for (std::size_t l = 0; l < cfg.decoder_layers; ++l)
      blocks_.emplace_back(ps, name + ".decoder" + std::to_string(l), cr, 4 * cr, rng);
    lift_ = Mlp<T>(ps, name + ".lift", cr, co, co, rng);
  }
  fuse_ = Conv1x1<T>(ps, name + ".dense_fuse", 2 * cr + 1, cr, rng);
  for (std::size_t i = 0; i < cfg.pyramid.size(); ++i)
    branches_.emplace_back(ps, name + ".fem" + std::to_string(i), cr, cr, rng);
  merge_ = Conv1x1<T>(ps, name + ".fem_merge", cr * cfg.pyramid.size(), cr, rng);
  head_ = Conv1x1<T>(ps, name + (cfg.sparse_path ? ".dense_out" : ".mask_head"), cr,
                     cfg.sparse_path ? co : 1, rng);
}

template <typename T>
Tensor<T> MetaPromptGenerator<T>::reduce(Bindings<T>& b, const Tensor<T>& f1, const Tensor<T>& f2) const {
  if (f1.rank() != 3 || f2.rank() != 3 || f1.dim(1) != f2.dim(1) || f1.dim(2) != f2.dim(2))
    throw DimensionError("reduce needs equal spatial sizes: " + shape_str(f1.shape()) + " vs " +
                         shape_str(f2.shape()));
  return relu(reduce_(b, concat(std::vector<Tensor<T>>{f1, f2})));
}

template <typename T>
Tensor<T> MetaPromptGenerator<T>::augment(Bindings<T>& b, const Tensor<T>& prototype) const {
  if (!cfg_.sparse_path) throw ContractError("sparse path is disabled");
  const std::size_t cr = cfg_.reduce_channels;
  return reshape(augment_(b, reshape(prototype, {1, cr})), {cfg_.sparse_count, cr});
}

template <typename T>
Tensor<T> MetaPromptGenerator<T>::sparse_path(Bindings<T>& b, const Tensor<T>& e_aug,
                                              const Tensor<T>& query) const {
  if (!cfg_.sparse_path) throw ContractError("sparse path is disabled");
  auto values = to_tokens(query);
  auto keys = add(values, sine_positional_encoding<T>(values.dim(0), values.dim(1)));
  auto t = add(e_aug, b(*token_pos_));
  for (const auto& block : blocks_) t = block(b, t, keys, values);
  auto lifted = lift_(b, t);
  return add(lifted, sine(lifted));
}

template <typename T>
Tensor<T> MetaPromptGenerator<T>::dense_features(Bindings<T>& b, const Tensor<T>& prototype,
                                                 const Tensor<T>& query, const Tensor<T>& prior) const {
  const std::size_t h = query.dim(1), w = query.dim(2);
  auto fpr = relu(fuse_(b, concat(std::vector<Tensor<T>>{tile_spatial(prototype, h, w), query, prior})));
  const std::size_t n = cfg_.pyramid.size();
  std::vector<Tensor<T>> merged(n);
  Tensor<T> acc;
  // Pyramid entries run fine to coarse; merge coarse-to-fine.
  for (std::size_t i = n; i-- > 0;) {
    const std::size_t s = cfg_.pyramid[i];
    auto branch = relu(branches_[i](b, adaptive_avg_pool(fpr, s, s)));
    auto up = bilinear_resize(branch, h, w);
    acc = acc.defined() ? add(up, acc) : up;
    merged[i] = acc;
  }
  return relu(merge_(b, n == 1 ? merged.front() : concat(merged)));
}

template <typename T>
Tensor<T> MetaPromptGenerator<T>::dense_path(Bindings<T>& b, const Tensor<T>& prototype,
                                             const Tensor<T>& query, const Tensor<T>& prior) const {
  return head_(b, dense_features(b, prototype, query, prior));
}

template <typename T>
MpgOutput<T> MetaPromptGenerator<T>::generate(Bindings<T>& b,
                                              const std::vector<std::array<Tensor<T>, 3>>& support,
                                              const std::vector<std::vector<std::uint8_t>>& support_masks,
                                              const std::array<Tensor<T>, 3>& query) const {
  if (support.empty() || support.size() != support_masks.size())
    throw ContractError("generate needs one mask per support shot");
  MpgOutput<T> out;
  out.reduced_query = reduce(b, query[0], query[1]);

  // Support prototype: mean over shots whose mask is nonempty.
  Tensor<T> sum_proto;
  std::size_t used = 0;
  for (std::size_t s = 0; s < support.size(); ++s) {
    if (std::none_of(support_masks[s].begin(), support_masks[s].end(), [](auto v) { return v != 0; }))
      continue;
    auto p = masked_average_pool(reduce(b, support[s][0], support[s][1]), support_masks[s]);
    sum_proto = sum_proto.defined() ? add(sum_proto, p) : p;
    ++used;
  }
  if (used == 0)
    out.prototype = Tensor<T>::zeros({cfg_.reduce_channels});
  else
    out.prototype = used == 1 ? sum_proto : scale(sum_proto, T(1) / static_cast<T>(used));

  std::vector<Tensor<T>> support_high;
  for (const auto& s : support) support_high.push_back(s[2]);
  out.prior = prior_mask(support_high, support_masks, query[2]);

  if (cfg_.sparse_path)
    out.prompts.sparse = sparse_path(b, augment(b, out.prototype), out.reduced_query);
  out.prompts.dense = dense_path(b, out.prototype, out.reduced_query, out.prior.values);
  return out;
}

#define APSEG_INSTANTIATE_MPG(T)                                                                \
  template Tensor<T> sine_positional_encoding<T>(std::size_t, std::size_t);                     \
  template Tensor<T> to_tokens<T>(const Tensor<T>&);                                            \
  template Tensor<T> from_tokens<T>(const Tensor<T>&, std::size_t, std::size_t);                \
  template PriorMask<T> prior_mask<T>(const std::vector<Tensor<T>>&,                            \
                                      const std::vector<std::vector<std::uint8_t>>&,            \
                                      const Tensor<T>&);                                        \
  template class MetaPromptGenerator<T>;

APSEG_INSTANTIATE_MPG(float)
APSEG_INSTANTIATE_MPG(double)

}  // namespace apseg

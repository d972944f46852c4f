#include "apseg/dpat.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/kernels.hpp"
#include "apseg/log.hpp"

namespace apseg::dpat {

std::vector<std::uint8_t> complement(std::span<const std::uint8_t> mask) {
  std::vector<std::uint8_t> out(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] ? 0 : 1;
  return out;
}

template <typename T>
Tensor<T> PrototypeMatrix<T>::matrix() const {
  const std::size_t c = channels();
  std::vector<T> m(c * 2);
  for (std::size_t i = 0; i < c; ++i) {
    m[i * 2] = fg.data()[i];
    m[i * 2 + 1] = bg.data()[i];
  }
  return Tensor<T>::constant({c, 2}, std::move(m));
}

template <typename T>
AnchorLayer<T>::AnchorLayer(ParameterSet<T>& ps, const std::string& name, std::size_t channels,
                            AnchorTier tier, Rng& rng)
    : tier_(tier) {
  std::vector<T> init(channels * 2);
  for (auto& v : init) v = static_cast<T>(rng.normal(0.0, 1.0));
  a_ = &ps.add(name, {channels, 2}, std::move(init));
}

template <typename T>
Tensor<T> map_pool(const Tensor<T>& f, std::span<const std::uint8_t> mask, bool* empty) {
  const bool none = std::none_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; });
  if (empty) *empty = none;
  return masked_average_pool(f, mask);
}

namespace {

// Location-major copy (hw×c) of a c×h×w map.
template <typename T>
std::vector<T> to_locations(const Tensor<T>& f) {
  if (f.rank() != 3) throw DimensionError("expected a c×h×w feature map, got " + shape_str(f.shape()));
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  std::vector<T> out(hw * c);
  auto x = f.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = x[ch * hw + p];
  return out;
}

}  // namespace

template <typename T>
CycleMatcher<T>::CycleMatcher(const Tensor<T>& f_support, const Tensor<T>& f_query) {
  if (f_support.rank() != 3 || f_query.rank() != 3 || f_support.dim(0) != f_query.dim(0))
    throw DimensionError("cycle matching needs c×h×w maps with equal channels: " +
                         shape_str(f_support.shape()) + " vs " + shape_str(f_query.shape()));
  const std::size_t c = f_support.dim(0);
  ns_ = f_support.dim(1) * f_support.dim(2);
  nq_ = f_query.dim(1) * f_query.dim(2);
  const auto s = to_locations(f_support);
  const auto q = to_locations(f_query);
  // sim[j][i] = cos(support_j, query_i)
  std::vector<T> sim(ns_ * nq_);
  kernels::cosine_matrix(ns_, nq_, c, s.data(), q.data(), sim.data(), static_cast<T>(kCosineEps));
  best_query_.resize(ns_);
  kernels::row_argmax(ns_, nq_, sim.data(), best_query_.data());
  // Column argmax with lowest-index ties: strict '>' while scanning j upward.
  best_support_.assign(nq_, 0);
  for (std::size_t j = 1; j < ns_; ++j) {
    const T* row = sim.data() + j * nq_;
    for (std::size_t i = 0; i < nq_; ++i)
      if (row[i] > sim[best_support_[i] * nq_ + i]) best_support_[i] = static_cast<std::uint32_t>(j);
  }
}

template <typename T>
MatchSet CycleMatcher<T>::match(std::span<const std::uint8_t> region) const {
  if (region.size() != ns_) throw DimensionError("region size does not match the support map");
  MatchSet m;
  std::vector<std::uint8_t> keep(nq_, 0);
  for (std::size_t j = 0; j < ns_; ++j) {
    if (!region[j]) continue;
    const std::uint32_t qi = best_query_[j];
    const std::uint32_t back = best_support_[qi];
    m.sources.push_back(static_cast<std::uint32_t>(j));
    m.forward.push_back(qi);
    m.reverse.push_back(back);
    if (region[back]) keep[qi] = 1;
  }
  for (std::size_t i = 0; i < nq_; ++i)
    if (keep[i]) m.kept.push_back(static_cast<std::uint32_t>(i));
  return m;
}

template <typename T>
CcsResult<T> ccs(const Tensor<T>& f_support, const Tensor<T>& f_query,
                 std::span<const std::uint8_t> region) {
  CycleMatcher<T> matcher(f_support, f_query);
  CcsResult<T> out;
  out.matches = matcher.match(region);
  std::vector<std::uint8_t> kept_mask(matcher.query_positions(), 0);
  for (auto i : out.matches.kept) kept_mask[i] = 1;
  out.prototype = map_pool(f_query, kept_mask, &out.empty);
  return out;
}

template <typename T>
PrototypeMatrix<T> fuse_prototypes(const PrototypeMatrix<T>& support,
                                   const PrototypeMatrix<T>& pseudo) {
  if (support.channels() != pseudo.channels())
    throw DimensionError("prototype channel mismatch: " + std::to_string(support.channels()) +
                         " vs " + std::to_string(pseudo.channels()));
  PrototypeMatrix<T> out;
  out.fg = pseudo.fg_empty ? support.fg : add(support.fg, pseudo.fg).detach();
  out.bg = pseudo.bg_empty ? support.bg : add(support.bg, pseudo.bg).detach();
  out.fg_empty = support.fg_empty && pseudo.fg_empty;
  out.bg_empty = support.bg_empty && pseudo.bg_empty;
  return out;
}

template <typename T>
WeightResult<T> compute_w(const PrototypeMatrix<T>& fused, const Tensor<T>& anchor) {
  if (anchor.rank() != 2 || anchor.dim(1) != 2 || anchor.dim(0) != fused.channels())
    throw DimensionError("anchor " + shape_str(anchor.shape()) + " does not match prototypes of width " +
                         std::to_string(fused.channels()));
  WeightResult<T> out;
  auto p_bar = normalize_columns(fused.matrix());
  auto pinv = pinv2_auto(p_bar, &out.pinv);
  if (out.pinv.lambda > 0) {
    std::ostringstream os;
    os << "near-collinear prototypes (cond " << out.pinv.condition << "), ridge " << out.pinv.lambda;
    log_warn(os.str());
  }
  out.w = matmul(normalize_columns(anchor), pinv);
  return out;
}

template <typename T>
PrototypeMatrix<T> pm_map_prototypes(const Tensor<T>& coarse_logits, const Tensor<T>& f_query) {
  if (f_query.rank() != 3 || coarse_logits.numel() != f_query.dim(1) * f_query.dim(2))
    throw DimensionError("coarse logits " + shape_str(coarse_logits.shape()) +
                         " do not match query map " + shape_str(f_query.shape()));
  std::vector<std::uint8_t> fg(coarse_logits.numel());
  std::size_t ones = 0;
  for (std::size_t i = 0; i < fg.size(); ++i) ones += (fg[i] = coarse_logits.data()[i] > T(0) ? 1 : 0);
  PrototypeMatrix<T> out;
  if (ones == 0 || ones == fg.size()) {
    out.fg = Tensor<T>::zeros({f_query.dim(0)});
    out.bg = Tensor<T>::zeros({f_query.dim(0)});
    out.fg_empty = out.bg_empty = true;
    return out;
  }
  out.fg = map_pool(f_query, fg);
  out.bg = map_pool(f_query, complement(fg));
  return out;
}

template <typename T>
Tensor<T> apply_transform(const Tensor<T>& w, const Tensor<T>& f) {
  const std::size_t c = f.dim(0), h = f.dim(1), wd = f.dim(2);
  return reshape(matmul(w, reshape(f, {c, h * wd})), {w.dim(0), h, wd});
}

namespace {

// Mean of per-shot vectors, skipping empty shots.
template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& parts, const std::vector<bool>& empty, bool* all_empty) {
  const std::size_t c = parts.front().numel();
  std::vector<T> acc(c, T(0));
  std::size_t n = 0;
  for (std::size_t s = 0; s < parts.size(); ++s) {
    if (empty[s]) continue;
    for (std::size_t i = 0; i < c; ++i) acc[i] += parts[s].data()[i];
    ++n;
  }
  *all_empty = n == 0;
  if (n > 0)
    for (auto& v : acc) v /= static_cast<T>(n);
  return Tensor<T>::constant({c}, std::move(acc));
}

}  // namespace

template <typename T>
TransformOutput<T> transform(const std::vector<const MultiLevelFeatures<T>*>& support,
                             const std::vector<std::vector<std::uint8_t>>& support_masks,
                             const MultiLevelFeatures<T>& query, const Tensor<T>& anchor_mid,
                             const Tensor<T>& anchor_high, PseudoMode mode,
                             const std::array<PrototypeMatrix<T>, 3>* pm_map_pseudo) {
  if (support.empty() || support.size() != support_masks.size())
    throw ContractError("transform needs one mask per support shot");
  if (mode == PseudoMode::PmMap && !pm_map_pseudo)
    throw ContractError("PM-MAP mode needs coarse-prediction prototypes");
  const std::size_t shots = support.size();
  TransformOutput<T> out;
  out.support.resize(shots);

  for (int l = 0; l < 3; ++l) {
    const auto& fq = query.level(l);
    std::vector<Tensor<T>> fg_parts, bg_parts;
    std::vector<bool> fg_empty, bg_empty;
    std::vector<std::vector<std::uint8_t>> backgrounds;
    for (std::size_t s = 0; s < shots; ++s) {
      const auto& fs = support[s]->level(l);
      backgrounds.push_back(complement(support_masks[s]));
      bool e = false;
      fg_parts.push_back(map_pool(fs, support_masks[s], &e));
      fg_empty.push_back(e);
      bg_parts.push_back(map_pool(fs, backgrounds.back(), &e));
      bg_empty.push_back(e);
    }
    PrototypeMatrix<T> ps;
    ps.fg = mean_of(fg_parts, fg_empty, &ps.fg_empty);
    ps.bg = mean_of(bg_parts, bg_empty, &ps.bg_empty);

    PrototypeMatrix<T> pq;
    pq.fg_empty = pq.bg_empty = true;
    pq.fg = Tensor<T>::zeros({fq.dim(0)});
    pq.bg = pq.fg;
    if (mode == PseudoMode::Ccs) {
      const std::size_t nq = fq.dim(1) * fq.dim(2);
      std::vector<std::uint8_t> kept_fg(nq, 0), kept_bg(nq, 0);
      for (std::size_t s = 0; s < shots; ++s) {
        CycleMatcher<T> matcher(support[s]->level(l), fq);
        for (auto i : matcher.match(support_masks[s]).kept) kept_fg[i] = 1;
        for (auto i : matcher.match(backgrounds[s]).kept) kept_bg[i] = 1;
      }
      pq.fg = map_pool(fq, kept_fg, &pq.fg_empty);
      pq.bg = map_pool(fq, kept_bg, &pq.bg_empty);
      out.kept_fg[l] = static_cast<std::size_t>(std::count(kept_fg.begin(), kept_fg.end(), 1));
      out.kept_bg[l] = static_cast<std::size_t>(std::count(kept_bg.begin(), kept_bg.end(), 1));
    } else if (mode == PseudoMode::PmMap) {
      pq = (*pm_map_pseudo)[l];
    }

    out.fused[l] = fuse_prototypes(ps, pq);
    auto wr = compute_w(out.fused[l], l < 2 ? anchor_mid : anchor_high);
    out.transforms[l] = wr.w;
    out.pinv[l] = wr.pinv;
    out.query[l] = apply_transform(wr.w, fq);
    for (std::size_t s = 0; s < shots; ++s) out.support[s][l] = apply_transform(wr.w, support[s]->level(l));
  }
  return out;
}

#define APSEG_INSTANTIATE_DPAT(T)                                                              \
  template struct PrototypeMatrix<T>;                                                          \
  template class AnchorLayer<T>;                                                               \
  template class CycleMatcher<T>;                                                              \
  template Tensor<T> map_pool<T>(const Tensor<T>&, std::span<const std::uint8_t>, bool*);     \
  template CcsResult<T> ccs<T>(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>); \
  template PrototypeMatrix<T> fuse_prototypes<T>(const PrototypeMatrix<T>&,                   \
                                                 const PrototypeMatrix<T>&);                   \
  template WeightResult<T> compute_w<T>(const PrototypeMatrix<T>&, const Tensor<T>&);         \
  template PrototypeMatrix<T> pm_map_prototypes<T>(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> apply_transform<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template TransformOutput<T> transform<T>(                                                    \
      const std::vector<const MultiLevelFeatures<T>*>&,                                        \
      const std::vector<std::vector<std::uint8_t>>&, const MultiLevelFeatures<T>&,             \
      const Tensor<T>&, const Tensor<T>&, PseudoMode, const std::array<PrototypeMatrix<T>, 3>*);

APSEG_INSTANTIATE_DPAT(float)
APSEG_INSTANTIATE_DPAT(double)

}  // namespace apseg::dpat

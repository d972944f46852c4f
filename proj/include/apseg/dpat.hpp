#pragma once

// Dual prototype anchor transformation.
//
// Support prototypes come from masked average pooling of support features;
// pseudo query prototypes come from cycle-consistent selection: each support
// location in a region is matched to its most similar query location, that
// query location is matched back to its most similar support location, and
// the query location is kept only if the round trip lands inside the region.
// Support and pseudo prototypes are summed, column-normalised, and mapped
// onto a learnable anchor pair by W = Ā·pinv(P̄). W is then applied to every
// location of the support and query features at that level.
//
// Prototypes are constants of the episode: gradient reaches only the
// anchors, through W.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "apseg/encoder.hpp"
#include "apseg/ops.hpp"
#include "apseg/optim.hpp"
#include "apseg/random.hpp"

namespace apseg::dpat {

template <typename T>
struct PrototypeMatrix {
  Tensor<T> fg;  // [c]
  Tensor<T> bg;  // [c]
  bool fg_empty = false;
  bool bg_empty = false;

  std::size_t channels() const { return fg.dim(0); }
  /// [fg, bg] as a c×2 matrix.
  Tensor<T> matrix() const;
};

struct MatchSet {
  std::vector<std::uint32_t> sources;  // support positions in the region, ascending
  std::vector<std::uint32_t> forward;  // matched query position per source
  std::vector<std::uint32_t> reverse;  // support position matched back from each forward entry
  std::vector<std::uint32_t> kept;     // unique query positions whose cycle stays in the region
};

/// Pseudo prototype source.
enum class PseudoMode {
  None,   // support prototypes only
  Ccs,    // cycle-consistent selection
  PmMap,  // pooling over a coarse predicted query mask
};

enum class AnchorTier { Mid, High };

/// Learnable c×2 anchor pair [a_fg, a_bg].
template <typename T>
class AnchorLayer {
 public:
  AnchorLayer() = default;
  AnchorLayer(ParameterSet<T>& ps, const std::string& name, std::size_t channels, AnchorTier tier,
              Rng& rng);
  Parameter<T>& parameter() const { return *a_; }
  AnchorTier tier() const { return tier_; }

 private:
  Parameter<T>* a_ = nullptr;
  AnchorTier tier_ = AnchorTier::Mid;
};

/// Mean feature over the mask's 1-cells; zero vector and *empty = true when
/// the mask selects nothing.
template <typename T>
Tensor<T> map_pool(const Tensor<T>& f, std::span<const std::uint8_t> mask, bool* empty = nullptr);

/// Forward and reverse cosine matches between one support and one query map.
/// The similarity matrix is computed once and reused for any region.
template <typename T>
class CycleMatcher {
 public:
  CycleMatcher(const Tensor<T>& f_support, const Tensor<T>& f_query);
  MatchSet match(std::span<const std::uint8_t> region) const;
  std::size_t support_positions() const { return ns_; }
  std::size_t query_positions() const { return nq_; }

 private:
  std::size_t ns_ = 0, nq_ = 0;
  std::vector<std::uint32_t> best_query_;    // argmax over query, per support position
  std::vector<std::uint32_t> best_support_;  // argmax over support, per query position
};

template <typename T>
struct CcsResult {
  MatchSet matches;
  Tensor<T> prototype;  // mean query feature over `kept`
  bool empty = true;    // region or kept set was empty
};

template <typename T>
CcsResult<T> ccs(const Tensor<T>& f_support, const Tensor<T>& f_query,
                 std::span<const std::uint8_t> region);

/// Columnwise Pˢ + Pᑫ; an empty pseudo column falls back to the support column.
template <typename T>
PrototypeMatrix<T> fuse_prototypes(const PrototypeMatrix<T>& support,
                                   const PrototypeMatrix<T>& pseudo);

template <typename T>
struct WeightResult {
  Tensor<T> w;  // c×c
  PinvInfo pinv;
};

/// W = normalize(A)·pinv(normalize(Pᵐ)). `anchor` is c×2 and may carry grad.
template <typename T>
WeightResult<T> compute_w(const PrototypeMatrix<T>& fused, const Tensor<T>& anchor);

/// Pseudo prototypes from a coarse query prediction at feature resolution:
/// logits > 0 (probability > 0.5) selects foreground. An all-zero or all-one
/// pseudo mask flags both columns empty.
template <typename T>
PrototypeMatrix<T> pm_map_prototypes(const Tensor<T>& coarse_logits, const Tensor<T>& f_query);

template <typename T>
struct TransformOutput {
  std::vector<std::array<Tensor<T>, 3>> support;  // transformed maps, per shot
  std::array<Tensor<T>, 3> query;
  std::array<Tensor<T>, 3> transforms;  // W per level
  std::array<PrototypeMatrix<T>, 3> fused;
  std::array<PinvInfo, 3> pinv;
  std::array<std::size_t, 3> kept_fg{};
  std::array<std::size_t, 3> kept_bg{};
};

/// Full transformation for one episode. `support_masks` are binary masks at
/// feature resolution, one per shot. Level 1 and 2 use `anchor_mid`, level 3
/// uses `anchor_high`. With PseudoMode::PmMap, `pm_map_pseudo` supplies the
/// per-level pseudo prototypes.
template <typename T>
TransformOutput<T> transform(const std::vector<const MultiLevelFeatures<T>*>& support,
                             const std::vector<std::vector<std::uint8_t>>& support_masks,
                             const MultiLevelFeatures<T>& query, const Tensor<T>& anchor_mid,
                             const Tensor<T>& anchor_high, PseudoMode mode,
                             const std::array<PrototypeMatrix<T>, 3>* pm_map_pseudo = nullptr);

/// Applies a c×c matrix at every location of a c×h×w map.
template <typename T>
Tensor<T> apply_transform(const Tensor<T>& w, const Tensor<T>& f);

std::vector<std::uint8_t> complement(std::span<const std::uint8_t> mask);

}  // namespace apseg::dpat

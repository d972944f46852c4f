#pragma once

// Differentiable operations on Tensor. Layout conventions:
//   feature maps  c×h×w (row-major, channel-major planes)
//   token sets    n×d
//   linear weights stored in×out, conv1x1 weights stored out×in.

#include <cstdint>
#include <span>
#include <vector>

#include "apseg/tensor.hpp"

namespace apseg {

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kLayerNormEps = 1e-5;

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> sine(const Tensor<T>& a);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

/// Row-wise softmax of an n×d tensor.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
/// Row-wise layer normalisation of n×d with affine gamma/beta of length d.
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);

/// x[n×in] · w[in×out] + b[out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
/// Per-pixel linear map: w[c_out×c_in] applied to x[c_in×h×w], plus bias[c_out].
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Concatenation along the leading axis; trailing extents must agree.
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);
/// Rows [begin, begin+count) along the leading axis.
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);
/// Rows x[idx[0]], x[idx[1]], ... of a 2-D tensor.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::uint32_t> idx);

/// Mean of the c-vectors of x[c×h×w] at locations where mask is 1; the zero
/// vector when the mask is empty.
template <typename T>
Tensor<T> masked_average_pool(const Tensor<T>& x, std::span<const std::uint8_t> mask);
/// v[c] broadcast to c×h×w.
template <typename T> Tensor<T> tile_spatial(const Tensor<T>& v, std::size_t h, std::size_t w);

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);
template <typename T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Pairwise cosine similarity of the rows of a[m×d] and b[n×d] → m×n,
/// <a,b>/(|a||b| + 1e-8).
template <typename T> Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b);
/// Cosine similarity of a[c] with every location of b[c×h×w] → h×w.
template <typename T> Tensor<T> cosine_map(const Tensor<T>& a, const Tensor<T>& b);
/// Columns of a[c×n] scaled to unit length; norms are clamped below at 1e-8.
template <typename T> Tensor<T> normalize_columns(const Tensor<T>& a);

/// Max of each row of x[m×n] → m; gradient goes to the lowest-index maximiser.
template <typename T> Tensor<T> row_max(const Tensor<T>& x);
/// (v - min)/(max - min); a (numerically) constant input maps to 0.5
/// everywhere with no gradient.
template <typename T> Tensor<T> minmax_normalize(const Tensor<T>& v);
inline constexpr double kConstantRangeTol = 1e-6;

/// 1 - (2·Σ p·g + s)/(Σp + Σg + s) for probabilities p and binary target g.
template <typename T>
Tensor<T> soft_dice(const Tensor<T>& prob, std::span<const T> target, T smooth);

struct PinvInfo {
  double condition = 0;  // condition number of PᵀP before regularisation
  double lambda = 0;     // ridge actually applied
};

/// (PᵀP + λI)⁻¹Pᵀ of a c×2 matrix, evaluated in double precision. The result
/// is a constant: no gradient flows through the inverse.
template <typename T>
Tensor<T> pinv2(const Tensor<T>& p, double lambda, PinvInfo* info = nullptr);

/// Condition number above which pinv2_auto switches the ridge on.
inline constexpr double kPinvConditionLimit = 1e8;

/// pinv2 with λ = 0 for well-conditioned PᵀP and λ = 1e-6·trace(PᵀP)/2 once
/// its condition number exceeds kPinvConditionLimit.
template <typename T>
Tensor<T> pinv2_auto(const Tensor<T>& p, PinvInfo* info = nullptr);

}  // namespace apseg

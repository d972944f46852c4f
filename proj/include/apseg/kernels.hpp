#pragma once

// Dense numeric kernels over raw row-major buffers.
//
// Every kernel exists twice: the OpenMP-parallel version in
// apseg::kernels and a plain serial reference in apseg::kernels::serial.
// Both compute each output element with the same accumulation order, so
// their results are bitwise identical; the test suite checks this and the
// bench target compares their speed.

#include <cstddef>
#include <cstdint>
#include <span>

namespace apseg::kernels {

/// C[m×n] (+)= op(A)·op(B) where op(A) is m×k and op(B) is k×n.
/// With trans_a, A is stored k×m; with trans_b, B is stored n×k.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);

/// out[i*n + j] = <a_i, b_j> / (|a_i| |b_j| + eps) for row vectors a_i (m×dim)
/// and b_j (n×dim).
template <typename T>
void cosine_matrix(std::size_t m, std::size_t n, std::size_t dim, const T* a, const T* b,
                   T* out, T eps);

/// Index of the maximum of each row; the lowest index wins ties.
template <typename T>
void row_argmax(std::size_t m, std::size_t n, const T* x, std::uint32_t* out);

/// Adaptive average pooling of a c×h×w map into c×oh×ow bins, bin i spanning
/// [floor(i*h/oh), ceil((i+1)*h/oh)).
template <typename T>
void adaptive_avg_pool(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                       std::size_t ow, const T* x, T* out);

/// Bilinear resize with corner-aligned sampling.
template <typename T>
void bilinear_resize(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                     std::size_t ow, const T* x, T* out);

/// Transposed bilinear resize: scatters grad_out (c×oh×ow) into grad_in (c×h×w).
template <typename T>
void bilinear_resize_backward(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                              std::size_t ow, const T* grad_out, T* grad_in);

namespace serial {

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate);
template <typename T>
void cosine_matrix(std::size_t m, std::size_t n, std::size_t dim, const T* a, const T* b,
                   T* out, T eps);
template <typename T>
void row_argmax(std::size_t m, std::size_t n, const T* x, std::uint32_t* out);
template <typename T>
void adaptive_avg_pool(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                       std::size_t ow, const T* x, T* out);
template <typename T>
void bilinear_resize(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                     std::size_t ow, const T* x, T* out);
template <typename T>
void bilinear_resize_backward(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                              std::size_t ow, const T* grad_out, T* grad_in);

}  // namespace serial

/// Source coordinate and blend weight for corner-aligned resampling of an
/// axis of length `in` onto `out` samples.
struct LerpTap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};
LerpTap corner_aligned_tap(std::size_t i, std::size_t in, std::size_t out);

/// [begin, end) of adaptive pooling bin i.
inline std::size_t pool_bin_begin(std::size_t i, std::size_t in, std::size_t out) {
  return (i * in) / out;
}
inline std::size_t pool_bin_end(std::size_t i, std::size_t in, std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

}  // namespace apseg::kernels

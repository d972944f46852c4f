#include "apseg/kernels.hpp"

#include <cmath>
#include <cstring>

#include "apseg/parallel.hpp"

namespace apseg::kernels {

LerpTap corner_aligned_tap(std::size_t i, std::size_t in, std::size_t out) {
  if (out <= 1 || in <= 1) return {0, 0, 0.0};
  const double src = static_cast<double>(i) * static_cast<double>(in - 1) /
                     static_cast<double>(out - 1);
  auto lo = static_cast<std::size_t>(std::floor(src));
  if (lo >= in - 1) return {in - 1, in - 1, 0.0};
  return {lo, lo + 1, src - static_cast<double>(lo)};
}

namespace {

// Shared bodies. `Parallel` only toggles the OpenMP pragma; loop bodies and
// accumulation order are identical in both instantiations.

template <bool Parallel, typename T>
void gemm_impl(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a,
               const T* b, T* c, bool accumulate) {
  const long rows = static_cast<long>(m);
  const bool go_parallel = Parallel && static_cast<long>(m * n * k) > kParallelWorkThreshold;
  if (!accumulate) std::memset(c, 0, sizeof(T) * m * n);
  if (!tb) {
    APSEG_OMP(parallel for schedule(static) if (go_parallel))
    for (long i = 0; i < rows; ++i) {
      T* crow = c + static_cast<std::size_t>(i) * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ta ? a[p * m + static_cast<std::size_t>(i)]
                        : a[static_cast<std::size_t>(i) * k + p];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    APSEG_OMP(parallel for schedule(static) if (go_parallel))
    for (long i = 0; i < rows; ++i) {
      T* crow = c + static_cast<std::size_t>(i) * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = 0;
        if (!ta) {
          const T* arow = a + static_cast<std::size_t>(i) * k;
          for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        } else {
          for (std::size_t p = 0; p < k; ++p) acc += a[p * m + static_cast<std::size_t>(i)] * brow[p];
        }
        crow[j] += acc;
      }
    }
  }
}

template <typename T>
T row_norm(const T* v, std::size_t dim) {
  T s = 0;
  for (std::size_t d = 0; d < dim; ++d) s += v[d] * v[d];
  return std::sqrt(s);
}

template <bool Parallel, typename T>
void cosine_impl(std::size_t m, std::size_t n, std::size_t dim, const T* a, const T* b, T* out,
                 T eps) {
  const bool go_parallel = Parallel && static_cast<long>(m * n * dim) > kParallelWorkThreshold;
  const long rows = static_cast<long>(m);
  APSEG_OMP(parallel for schedule(static) if (go_parallel))
  for (long i = 0; i < rows; ++i) {
    const T* ai = a + static_cast<std::size_t>(i) * dim;
    const T na = row_norm(ai, dim);
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * dim;
      T dot = 0;
      for (std::size_t d = 0; d < dim; ++d) dot += ai[d] * bj[d];
      out[static_cast<std::size_t>(i) * n + j] = dot / (na * row_norm(bj, dim) + eps);
    }
  }
}

template <bool Parallel, typename T>
void argmax_impl(std::size_t m, std::size_t n, const T* x, std::uint32_t* out) {
  const bool go_parallel = Parallel && static_cast<long>(m * n) > kParallelWorkThreshold;
  const long rows = static_cast<long>(m);
  APSEG_OMP(parallel for schedule(static) if (go_parallel))
  for (long i = 0; i < rows; ++i) {
    const T* row = x + static_cast<std::size_t>(i) * n;
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = static_cast<std::uint32_t>(best);
  }
}

template <bool Parallel, typename T>
void pool_impl(std::size_t c, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
               const T* x, T* out) {
  const bool go_parallel = Parallel && static_cast<long>(c * h * w) > kParallelWorkThreshold;
  const long channels = static_cast<long>(c);
  APSEG_OMP(parallel for schedule(static) if (go_parallel))
  for (long ch = 0; ch < channels; ++ch) {
    const T* plane = x + static_cast<std::size_t>(ch) * h * w;
    T* oplane = out + static_cast<std::size_t>(ch) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const std::size_t y0 = pool_bin_begin(oy, h, oh), y1 = pool_bin_end(oy, h, oh);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t x0 = pool_bin_begin(ox, w, ow), x1 = pool_bin_end(ox, w, ow);
        T acc = 0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t xx = x0; xx < x1; ++xx) acc += plane[y * w + xx];
        oplane[oy * ow + ox] = acc / static_cast<T>((y1 - y0) * (x1 - x0));
      }
    }
  }
}

template <bool Parallel, typename T>
void resize_impl(std::size_t c, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
                 const T* x, T* out) {
  const bool go_parallel = Parallel && static_cast<long>(c * oh * ow) > kParallelWorkThreshold;
  const long channels = static_cast<long>(c);
  APSEG_OMP(parallel for schedule(static) if (go_parallel))
  for (long ch = 0; ch < channels; ++ch) {
    const T* plane = x + static_cast<std::size_t>(ch) * h * w;
    T* oplane = out + static_cast<std::size_t>(ch) * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const LerpTap ty = corner_aligned_tap(oy, h, oh);
      const T fy = static_cast<T>(ty.frac);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const LerpTap tx = corner_aligned_tap(ox, w, ow);
        const T fx = static_cast<T>(tx.frac);
        const T top = plane[ty.lo * w + tx.lo] * (T(1) - fx) + plane[ty.lo * w + tx.hi] * fx;
        const T bot = plane[ty.hi * w + tx.lo] * (T(1) - fx) + plane[ty.hi * w + tx.hi] * fx;
        oplane[oy * ow + ox] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

template <bool Parallel, typename T>
void resize_backward_impl(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                          std::size_t ow, const T* g, T* gin) {
  const bool go_parallel = Parallel && static_cast<long>(c * oh * ow) > kParallelWorkThreshold;
  const long channels = static_cast<long>(c);
  APSEG_OMP(parallel for schedule(static) if (go_parallel))
  for (long ch = 0; ch < channels; ++ch) {
    const T* gplane = g + static_cast<std::size_t>(ch) * oh * ow;
    T* iplane = gin + static_cast<std::size_t>(ch) * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const LerpTap ty = corner_aligned_tap(oy, h, oh);
      const T fy = static_cast<T>(ty.frac);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const LerpTap tx = corner_aligned_tap(ox, w, ow);
        const T fx = static_cast<T>(tx.frac);
        const T gv = gplane[oy * ow + ox];
        iplane[ty.lo * w + tx.lo] += gv * (T(1) - fy) * (T(1) - fx);
        iplane[ty.lo * w + tx.hi] += gv * (T(1) - fy) * fx;
        iplane[ty.hi * w + tx.lo] += gv * fy * (T(1) - fx);
        iplane[ty.hi * w + tx.hi] += gv * fy * fx;
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  gemm_impl<true>(ta, tb, m, n, k, a, b, c, accumulate);
}
template <typename T>
void cosine_matrix(std::size_t m, std::size_t n, std::size_t dim, const T* a, const T* b, T* out,
                   T eps) {
  cosine_impl<true>(m, n, dim, a, b, out, eps);
}
template <typename T>
void row_argmax(std::size_t m, std::size_t n, const T* x, std::uint32_t* out) {
  argmax_impl<true>(m, n, x, out);
}
template <typename T>
void adaptive_avg_pool(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                       std::size_t ow, const T* x, T* out) {
  pool_impl<true>(c, h, w, oh, ow, x, out);
}
template <typename T>
void bilinear_resize(std::size_t c, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
                     const T* x, T* out) {
  resize_impl<true>(c, h, w, oh, ow, x, out);
}
template <typename T>
void bilinear_resize_backward(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                              std::size_t ow, const T* g, T* gin) {
  resize_backward_impl<true>(c, h, w, oh, ow, g, gin);
}

namespace serial {
template <typename T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
          T* c, bool accumulate) {
  gemm_impl<false>(ta, tb, m, n, k, a, b, c, accumulate);
}
template <typename T>
void cosine_matrix(std::size_t m, std::size_t n, std::size_t dim, const T* a, const T* b, T* out,
                   T eps) {
  cosine_impl<false>(m, n, dim, a, b, out, eps);
}
template <typename T>
void row_argmax(std::size_t m, std::size_t n, const T* x, std::uint32_t* out) {
  argmax_impl<false>(m, n, x, out);
}
template <typename T>
void adaptive_avg_pool(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                       std::size_t ow, const T* x, T* out) {
  pool_impl<false>(c, h, w, oh, ow, x, out);
}
template <typename T>
void bilinear_resize(std::size_t c, std::size_t h, std::size_t w, std::size_t oh, std::size_t ow,
                     const T* x, T* out) {
  resize_impl<false>(c, h, w, oh, ow, x, out);
}
template <typename T>
void bilinear_resize_backward(std::size_t c, std::size_t h, std::size_t w, std::size_t oh,
                              std::size_t ow, const T* g, T* gin) {
  resize_backward_impl<false>(c, h, w, oh, ow, g, gin);
}
}  // namespace serial

#define APSEG_INSTANTIATE_KERNELS(NS, T)                                                     \
  template void NS::gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, const T*,    \
                            const T*, T*, bool);                                             \
  template void NS::cosine_matrix<T>(std::size_t, std::size_t, std::size_t, const T*,       \
                                     const T*, T*, T);                                       \
  template void NS::row_argmax<T>(std::size_t, std::size_t, const T*, std::uint32_t*);      \
  template void NS::adaptive_avg_pool<T>(std::size_t, std::size_t, std::size_t, std::size_t, \
                                         std::size_t, const T*, T*);                         \
  template void NS::bilinear_resize<T>(std::size_t, std::size_t, std::size_t, std::size_t,   \
                                       std::size_t, const T*, T*);                           \
  template void NS::bilinear_resize_backward<T>(std::size_t, std::size_t, std::size_t,       \
                                                std::size_t, std::size_t, const T*, T*);

}  // namespace apseg::kernels

APSEG_INSTANTIATE_KERNELS(apseg::kernels, float)
APSEG_INSTANTIATE_KERNELS(apseg::kernels, double)
APSEG_INSTANTIATE_KERNELS(apseg::kernels::serial, float)
APSEG_INSTANTIATE_KERNELS(apseg::kernels::serial, double)

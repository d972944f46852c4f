#include <doctest.h>

#include <cmath>
#include <vector>

#include "apseg/kernels.hpp"
#include "apseg/parallel.hpp"
#include "oracles.hpp"

using namespace apseg;
namespace k = apseg::kernels;

namespace {

std::vector<double> randn(Rng& rng, std::size_t n) { return testing::random_values(rng, n); }

}  // namespace

TEST_CASE("parallel kernels are bitwise equal to the serial reference") {
  // Several threads even on a single core, so the split loops really run.
  omp_set_num_threads(4);
  Rng rng(1);
  // Large enough to cross the OpenMP work threshold.
  const std::size_t m = 70, n = 90, d = 40;
  auto a = randn(rng, m * d), b = randn(rng, n * d);

  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
      k::gemm(ta, tb, m, n, d, a.data(), b.data(), c1.data(), true);
      k::serial::gemm(ta, tb, m, n, d, a.data(), b.data(), c2.data(), true);
      CHECK(c1 == c2);
    }

  std::vector<double> s1(m * n), s2(m * n);
  k::cosine_matrix(m, n, d, a.data(), b.data(), s1.data(), 1e-8);
  k::serial::cosine_matrix(m, n, d, a.data(), b.data(), s2.data(), 1e-8);
  CHECK(s1 == s2);

  std::vector<std::uint32_t> i1(m), i2(m);
  k::row_argmax(m, n, s1.data(), i1.data());
  k::serial::row_argmax(m, n, s1.data(), i2.data());
  CHECK(i1 == i2);

  const std::size_t c = 24, h = 33, w = 29;
  auto x = randn(rng, c * h * w);
  std::vector<double> p1(c * 7 * 5), p2(c * 7 * 5);
  k::adaptive_avg_pool(c, h, w, 7, 5, x.data(), p1.data());
  k::serial::adaptive_avg_pool(c, h, w, 7, 5, x.data(), p2.data());
  CHECK(p1 == p2);

  std::vector<double> r1(c * 61 * 47), r2(c * 61 * 47);
  k::bilinear_resize(c, h, w, 61, 47, x.data(), r1.data());
  k::serial::bilinear_resize(c, h, w, 61, 47, x.data(), r2.data());
  CHECK(r1 == r2);

  std::vector<double> g1(c * h * w, 0), g2(c * h * w, 0);
  k::bilinear_resize_backward(c, h, w, 61, 47, r1.data(), g1.data());
  k::serial::bilinear_resize_backward(c, h, w, 61, 47, r1.data(), g2.data());
  CHECK(g1 == g2);
}

TEST_CASE("gemm matches a naive triple loop in every transpose mode") {
  Rng rng(2);
  const std::size_t m = 3, n = 2, kk = 4;
  auto a = randn(rng, m * kk), b = randn(rng, kk * n);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      std::vector<double> c(m * n, 0.0);
      k::gemm(ta, tb, m, n, kk, a.data(), b.data(), c.data(), false);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double ref = 0;
          for (std::size_t p = 0; p < kk; ++p) {
            const double av = ta ? a[p * m + i] : a[i * kk + p];
            const double bv = tb ? b[j * kk + p] : b[p * n + j];
            ref += av * bv;
          }
          CHECK(c[i * n + j] == doctest::Approx(ref).epsilon(1e-12));
        }
    }
}

TEST_CASE("row_argmax keeps the lowest index on ties") {
  const std::vector<float> x{1, 3, 3, 2, 5, 5, 5, 5, 0, 0, 0, 0};
  std::vector<std::uint32_t> idx(3);
  k::row_argmax<float>(3, 4, x.data(), idx.data());
  CHECK(idx == std::vector<std::uint32_t>{1, 0, 0});
}

TEST_CASE("adaptive pooling of a 4x4 grid into 2x2 gives the bin means") {
  std::vector<double> x(16);
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<double>(i);
  std::vector<double> out(4);
  k::adaptive_avg_pool<double>(1, 4, 4, 2, 2, x.data(), out.data());
  // Top-left bin holds 0, 1, 4, 5.
  CHECK(out[0] == doctest::Approx(2.5));
  CHECK(out[1] == doctest::Approx(4.5));
  CHECK(out[2] == doctest::Approx(10.5));
  CHECK(out[3] == doctest::Approx(12.5));
}

TEST_CASE("adaptive pooling bins overlap when the size does not divide") {
  // 5 → 3 bins: [0,2), [1,4), [3,5).
  CHECK(k::pool_bin_begin(0, 5, 3) == 0);
  CHECK(k::pool_bin_end(0, 5, 3) == 2);
  CHECK(k::pool_bin_begin(1, 5, 3) == 1);
  CHECK(k::pool_bin_end(1, 5, 3) == 4);
  CHECK(k::pool_bin_begin(2, 5, 3) == 3);
  CHECK(k::pool_bin_end(2, 5, 3) == 5);
}

TEST_CASE("bilinear resize is corner aligned") {
  const std::vector<double> x{0, 1, 2, 3};  // 2×2
  std::vector<double> out(9);
  k::bilinear_resize<double>(1, 2, 2, 3, 3, x.data(), out.data());
  CHECK(out[0] == 0.0);
  CHECK(out[2] == 1.0);
  CHECK(out[6] == 2.0);
  CHECK(out[8] == 3.0);
  CHECK(out[4] == doctest::Approx(1.5));

  std::vector<double> same(4);
  k::bilinear_resize<double>(1, 2, 2, 2, 2, x.data(), same.data());
  CHECK(same == x);
}

TEST_CASE("bilinear backward is the transpose of the forward map") {
  Rng rng(3);
  const std::size_t c = 2, h = 3, w = 5, oh = 7, ow = 4;
  auto x = randn(rng, c * h * w), g = randn(rng, c * oh * ow);
  std::vector<double> y(c * oh * ow), gx(c * h * w, 0);
  k::bilinear_resize(c, h, w, oh, ow, x.data(), y.data());
  k::bilinear_resize_backward(c, h, w, oh, ow, g.data(), gx.data());
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * gx[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

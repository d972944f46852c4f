// Serial reference vs OpenMP kernels on episode-sized problems.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "apseg/kernels.hpp"
#include "apseg/parallel.hpp"
#include "apseg/random.hpp"

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(std::size_t n, apseg::Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void report(const char* name, double serial, double parallel) {
  std::printf("%-34s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx\n", name, serial, parallel,
              serial / parallel);
}

}  // namespace

int main() {
  namespace k = apseg::kernels;
  apseg::Rng rng(42);
  std::printf("threads: %d\n", omp_get_max_threads());

  {
    const std::size_t m = 256, n = 256, d = 48;
    auto a = random_vec(m * d, rng), b = random_vec(n * d, rng);
    std::vector<float> out(m * n);
    report("cosine_matrix 256x256x48",
           time_ms([&] { k::serial::cosine_matrix(m, n, d, a.data(), b.data(), out.data(), 1e-8f); }, 20),
           time_ms([&] { k::cosine_matrix(m, n, d, a.data(), b.data(), out.data(), 1e-8f); }, 20));
  }
  {
    const std::size_t m = 256, n = 4096, kk = 256;
    auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng);
    std::vector<float> c(m * n);
    report("gemm 256x4096x256 (paper-scale W·f)",
           time_ms([&] { k::serial::gemm(false, false, m, n, kk, a.data(), b.data(), c.data(), false); }, 3),
           time_ms([&] { k::gemm(false, false, m, n, kk, a.data(), b.data(), c.data(), false); }, 3));
  }
  {
    const std::size_t c = 32, h = 32, w = 32;
    auto x = random_vec(c * h * w, rng);
    std::vector<float> out(c * 4 * h * w);
    report("bilinear_resize 32x32x32 -> 64x64",
           time_ms([&] { k::serial::bilinear_resize(c, h, w, 2 * h, 2 * w, x.data(), out.data()); }, 50),
           time_ms([&] { k::bilinear_resize(c, h, w, 2 * h, 2 * w, x.data(), out.data()); }, 50));
  }
  {
    const std::size_t c = 64, h = 64, w = 64;
    auto x = random_vec(c * h * w, rng);
    std::vector<float> out(c * 60 * 60);
    report("adaptive_avg_pool 64x64x64 -> 60x60",
           time_ms([&] { k::serial::adaptive_avg_pool(c, h, w, 60, 60, x.data(), out.data()); }, 20),
           time_ms([&] { k::adaptive_avg_pool(c, h, w, 60, 60, x.data(), out.data()); }, 20));
  }
  return 0;
}

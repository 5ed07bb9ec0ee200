// SPDX-License-Identifier: Apache-2.0
// Serial vs OpenMP kernel timings. Usage: bench_kernels [repeats]
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "hialign/kernels.hpp"
#include "hialign/rng.hpp"

using namespace hialign;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < repeats; ++i) fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / repeats;
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-14s %8s %12s %12s %8s %s\n", "kernel", "size", "serial_ms", "omp_ms", "speedup", "identical");
  Rng rng(1);
  for (std::size_t n : {64, 128, 256, 512}) {
    const auto a = random_vec(n * n, rng), b = random_vec(n * n, rng);
    std::vector<double> c1(n * n), c2(n * n);
    struct Case {
      const char* name;
      void (*serial)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t, std::size_t,
                     std::size_t);
      void (*omp)(std::span<const double>, std::span<const double>, std::span<double>, std::size_t, std::size_t,
                  std::size_t);
    };
    for (const Case& c : {Case{"gemm_nn", kernels::serial::gemm_nn, kernels::gemm_nn},
                          Case{"gemm_nt", kernels::serial::gemm_nt, kernels::gemm_nt},
                          Case{"gemm_tn", kernels::serial::gemm_tn, kernels::gemm_tn}}) {
      std::fill(c1.begin(), c1.end(), 0.0);
      std::fill(c2.begin(), c2.end(), 0.0);
      const double ts = time_ms([&] { c.serial(a, b, c1, n, n, n); }, repeats);
      const double tp = time_ms([&] { c.omp(a, b, c2, n, n, n); }, repeats);
      std::printf("%-14s %8zu %12.3f %12.3f %8.2f %s\n", c.name, n, ts, tp, ts / tp, c1 == c2 ? "yes" : "no");
    }
    auto x1 = a, x2 = a;
    const double ts = time_ms([&] { kernels::serial::softmax_rows(x1, n, n); }, repeats);
    const double tp = time_ms([&] { kernels::softmax_rows(x2, n, n); }, repeats);
    std::printf("%-14s %8zu %12.3f %12.3f %8.2f %s\n", "softmax_rows", n, ts, tp, ts / tp, x1 == x2 ? "yes" : "no");
  }
  return 0;
}

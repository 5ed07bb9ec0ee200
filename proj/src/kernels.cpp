// SPDX-License-Identifier: Apache-2.0
#include "hialign/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace hialign::kernels {

namespace {

inline void gemm_nn_row(const double* a, const double* b, double* c, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, std::size_t k, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += a[p] * brow[p];
    c[j] += s;
  }
}

inline void gemm_tn_row(const double* a, const double* b, double* c, std::size_t i, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void softmax_row(double* x, std::size_t n) {
  if (n == 0) return;
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    x[j] = std::exp(x[j] - mx);
    sum += x[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n; ++j) x[j] *= inv;
}

inline bool go_parallel(std::size_t work) { return work >= kParallelThreshold; }

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * k * n))
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_nn_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
  }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * k * n))
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_nt_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
  }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * k * n))
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    gemm_tn_row(a.data(), b.data(), c.data() + r * n, r, m, k, n);
  }
}

void softmax_rows(std::span<double> x, std::size_t m, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (go_parallel(m * n * 16))
  for (std::int64_t i = 0; i < rows; ++i) softmax_row(x.data() + static_cast<std::size_t>(i) * n, n);
}

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nn_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) gemm_tn_row(a.data(), b.data(), c.data() + i * n, i, m, k, n);
}

void softmax_rows(std::span<double> x, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) softmax_row(x.data() + i * n, n);
}

}  // namespace serial

}  // namespace hialign::kernels

// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense inner loops. Every kernel has a serial reference in `kernels::serial`
// and an OpenMP version in `kernels` that parallelizes over output rows only,
// so each output element is accumulated in the same order and the two agree
// bit for bit.

#include <cstddef>
#include <span>

namespace hialign::kernels {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
// c[m,n] += a[m,k] * b[n,k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
// c[m,n] += a[k,m]^T * b[k,n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
// In-place numerically stable softmax of each length-n row of x[m,n].
void softmax_rows(std::span<double> x, std::size_t m, std::size_t n);

// Below this many multiply-adds the OpenMP kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace serial {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
             std::size_t k, std::size_t n);
void softmax_rows(std::span<double> x, std::size_t m, std::size_t n);
}  // namespace serial

}  // namespace hialign::kernels

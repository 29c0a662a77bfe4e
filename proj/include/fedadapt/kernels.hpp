#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind every linear map in the model.
//
// Each output element is reduced by exactly one thread in a fixed index order,
// so the OpenMP kernels and the serial reference produce bit-identical results
// for any thread count. Outer rows are split across threads; nothing else is.

namespace fedadapt::kernels {

/// c[m x n] = a[m x k] * b[k x n] + bias[n] (bias may be empty).
void gemm(std::span<const double> a, std::span<const double> b,
          std::span<const double> bias, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n);

/// c[k x n] += a[m x k]^T * b[m x n]
void gemm_tn_acc(std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

/// c[m x k] (+)= a[m x n] * b[k x n]^T
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate);

/// out[n] += column sums of a[m x n]
void col_sum_acc(std::span<const double> a, std::span<double> out, std::size_t m,
                 std::size_t n);

/// Threads the parallel kernels may use (1 when built without OpenMP).
int max_threads();

/// Work (multiply-adds) below which the parallel kernels stay serial.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<const double> bias, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n);
void gemm_tn_acc(std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate);
void col_sum_acc(std::span<const double> a, std::span<double> out, std::size_t m,
                 std::size_t n);

}  // namespace reference

}  // namespace fedadapt::kernels

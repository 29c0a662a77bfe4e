#include "fedadapt/kernels.hpp"

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedadapt::kernels {
namespace {

template <bool Parallel>
void gemm_impl(const double* a, const double* b, const double* bias, double* c,
               std::int64_t m, std::int64_t k, std::int64_t n) {
  const bool go_parallel =
      Parallel && static_cast<std::size_t>(m * k * n) >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (std::int64_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (bias) {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = bias[j];
    } else {
      for (std::int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <bool Parallel>
void gemm_tn_impl(const double* a, const double* b, double* c, std::int64_t m,
                  std::int64_t k, std::int64_t n) {
  const bool go_parallel =
      Parallel && static_cast<std::size_t>(m * k * n) >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (std::int64_t p = 0; p < k; ++p) {
    double* crow = c + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = a[i * k + p];
      const double* brow = b + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <bool Parallel>
void gemm_nt_impl(const double* a, const double* b, double* c, std::int64_t m,
                  std::int64_t n, std::int64_t k, bool accumulate) {
  const bool go_parallel =
      Parallel && static_cast<std::size_t>(m * k * n) >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] = accumulate ? crow[p] + acc : acc;
    }
  }
}

template <bool Parallel>
void col_sum_impl(const double* a, double* out, std::int64_t m, std::int64_t n) {
  const bool go_parallel =
      Parallel && static_cast<std::size_t>(m * n) >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (std::int64_t j = 0; j < n; ++j) {
    double acc = out[j];
    for (std::int64_t i = 0; i < m; ++i) acc += a[i * n + j];
    out[j] = acc;
  }
}

const double* bias_ptr(std::span<const double> bias) {
  return bias.empty() ? nullptr : bias.data();
}

}  // namespace

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<const double> bias, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n) {
  gemm_impl<true>(a.data(), b.data(), bias_ptr(bias), c.data(), m, k, n);
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_tn_impl<true>(a.data(), b.data(), c.data(), m, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
  gemm_nt_impl<true>(a.data(), b.data(), c.data(), m, n, k, accumulate);
}

void col_sum_acc(std::span<const double> a, std::span<double> out, std::size_t m,
                 std::size_t n) {
  col_sum_impl<true>(a.data(), out.data(), m, n);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace reference {

void gemm(std::span<const double> a, std::span<const double> b,
          std::span<const double> bias, std::span<double> c, std::size_t m,
          std::size_t k, std::size_t n) {
  gemm_impl<false>(a.data(), b.data(), bias_ptr(bias), c.data(), m, k, n);
}

void gemm_tn_acc(std::span<const double> a, std::span<const double> b,
                 std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  gemm_tn_impl<false>(a.data(), b.data(), c.data(), m, k, n);
}

void gemm_nt(std::span<const double> a, std::span<const double> b,
             std::span<double> c, std::size_t m, std::size_t n, std::size_t k,
             bool accumulate) {
  gemm_nt_impl<false>(a.data(), b.data(), c.data(), m, n, k, accumulate);
}

void col_sum_acc(std::span<const double> a, std::span<double> out, std::size_t m,
                 std::size_t n) {
  col_sum_impl<false>(a.data(), out.data(), m, n);
}

}  // namespace reference

}  // namespace fedadapt::kernels

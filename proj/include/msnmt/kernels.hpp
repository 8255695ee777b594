#pragma once

#include <cstddef>

// Dense row-major matrix kernels. Each kernel exists twice: an OpenMP version
// that splits output rows across threads, and a serial reference kept for
// tests and benchmarks. Both walk every output element in the same order, so
// their results are bit-identical regardless of thread count.
namespace msnmt::kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// C[m x n] (+)= A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// C[m x n] (+)= A[k x m]^T * B[k x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

// Runtime switch, mainly for the benchmark. On by default when built with OpenMP.
void set_parallel(bool enabled);
bool parallel_enabled();
int max_threads();

namespace serial {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate);

}  // namespace serial
}  // namespace msnmt::kernels

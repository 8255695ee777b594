#include "msnmt/kernels.hpp"

#include <algorithm>
#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace msnmt::kernels {
namespace {

#ifdef _OPENMP
std::atomic<bool> g_parallel{true};
#else
std::atomic<bool> g_parallel{false};
#endif

// Below this many multiply-adds the fork/join costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

template <typename T>
inline void row_nn(const T* a, const T* b, T* c, std::size_t i, std::size_t k, std::size_t n,
                   bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, T{0});
  const T* arow = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T av = arow[p];
    if (av == T{0}) continue;
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

template <typename T>
inline void row_nt(const T* a, const T* b, T* c, std::size_t i, std::size_t k, std::size_t n,
                   bool accumulate) {
  T* crow = c + i * n;
  const T* arow = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const T* brow = b + j * k;
    T acc{0};
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] = accumulate ? crow[j] + acc : acc;
  }
}

template <typename T>
inline void row_tn(const T* a, const T* b, T* c, std::size_t i, std::size_t m, std::size_t k,
                   std::size_t n, bool accumulate) {
  T* crow = c + i * n;
  if (!accumulate) std::fill(crow, crow + n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a[p * m + i];
    if (av == T{0}) continue;
    const T* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

bool go_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return g_parallel.load(std::memory_order_relaxed) && m > 1 && m * k * n >= kParallelWork;
}

}  // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!go_parallel(m, k, n)) return serial::gemm_nn(a, b, c, m, k, n, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) row_nn(a, b, c, static_cast<std::size_t>(i), k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!go_parallel(m, k, n)) return serial::gemm_nt(a, b, c, m, k, n, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) row_nt(a, b, c, static_cast<std::size_t>(i), k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  if (!go_parallel(m, k, n)) return serial::gemm_tn(a, b, c, m, k, n, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    row_tn(a, b, c, static_cast<std::size_t>(i), m, k, n, accumulate);
}

namespace serial {

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_nn(a, b, c, i, k, n, accumulate);
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_nt(a, b, c, i, k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_tn(a, b, c, i, m, k, n, accumulate);
}

}  // namespace serial

#define MSNMT_INSTANTIATE_GEMM(T)                                                             \
  template void gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool); \
  template void gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool); \
  template void gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool); \
  template void serial::gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, \
                                   bool);                                                     \
  template void serial::gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, \
                                   bool);                                                     \
  template void serial::gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, \
                                   bool);

MSNMT_INSTANTIATE_GEMM(float)
MSNMT_INSTANTIATE_GEMM(double)

}  // namespace msnmt::kernels

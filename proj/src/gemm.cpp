#include "botda/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace botda::ad {
namespace {

template <typename T>
struct Simd;

template <>
struct Simd<float> {
  typedef float V __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 16;
};

template <>
struct Simd<double> {
  typedef double V __attribute__((vector_size(64)));
  static constexpr std::size_t lanes = 8;
};

constexpr std::size_t kMr = 8;

template <typename T>
void pack_a(bool trans, std::size_t m, std::size_t k, const T* a, std::size_t lda, std::size_t row0,
            T* out) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    for (std::size_t i = 0; i < kMr; ++i) {
      const std::size_t r = row0 + i;
      out[kk * kMr + i] = r < m ? (trans ? a[kk * lda + r] : a[r * lda + kk]) : T{0};
    }
  }
}

template <typename T, std::size_t Nr>
void pack_b(bool trans, std::size_t n, std::size_t k, const T* b, std::size_t ldb, std::size_t col0,
            T* out) {
  const std::size_t cols = std::min(Nr, n - col0);
  for (std::size_t kk = 0; kk < k; ++kk) {
    T* dst = out + kk * Nr;
    if (!trans) {
      std::memcpy(dst, b + kk * ldb + col0, cols * sizeof(T));
    } else {
      for (std::size_t j = 0; j < cols; ++j) dst[j] = b[(col0 + j) * ldb + kk];
    }
    for (std::size_t j = cols; j < Nr; ++j) dst[j] = T{0};
  }
}

template <typename T>
void micro_kernel(std::size_t k, const T* ap, const T* bp, std::size_t ldbp, T* c, std::size_t ldc,
                  std::size_t rows, std::size_t cols, bool accumulate) {
  using V = typename Simd<T>::V;
  constexpr std::size_t L = Simd<T>::lanes;
  constexpr std::size_t Nr = 2 * L;

  alignas(64) T tile[kMr * Nr];
  if (accumulate) {
    for (std::size_t i = 0; i < kMr; ++i) {
      for (std::size_t j = 0; j < Nr; ++j) {
        tile[i * Nr + j] = (i < rows && j < cols) ? c[i * ldc + j] : T{0};
      }
    }
  } else {
    std::fill(tile, tile + kMr * Nr, T{0});
  }

  V acc[kMr][2];
#pragma GCC unroll 8
  for (std::size_t i = 0; i < kMr; ++i) {
    std::memcpy(&acc[i][0], tile + i * Nr, sizeof(V));
    std::memcpy(&acc[i][1], tile + i * Nr + L, sizeof(V));
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    V b0;
    V b1;
    std::memcpy(&b0, bp + kk * ldbp, sizeof(V));
    std::memcpy(&b1, bp + kk * ldbp + L, sizeof(V));
    const T* a = ap + kk * kMr;
#pragma GCC unroll 8
    for (std::size_t i = 0; i < kMr; ++i) {
      const V ai = V{} + a[i];
      acc[i][0] += ai * b0;
      acc[i][1] += ai * b1;
    }
  }
#pragma GCC unroll 8
  for (std::size_t i = 0; i < kMr; ++i) {
    std::memcpy(tile + i * Nr, &acc[i][0], sizeof(V));
    std::memcpy(tile + i * Nr + L, &acc[i][1], sizeof(V));
  }
  for (std::size_t i = 0; i < rows; ++i) {
    std::memcpy(c + i * ldc, tile + i * Nr, cols * sizeof(T));
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t Nr = 2 * Simd<T>::lanes;
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T{0});
    }
    return;
  }
  const std::size_t m_panels = (m + kMr - 1) / kMr;
  thread_local std::vector<T> apack;
  thread_local std::vector<T> bpack;
  apack.resize(m_panels * k * kMr);
  bpack.resize(k * Nr);
  for (std::size_t p = 0; p < m_panels; ++p) pack_a(trans_a, m, k, a, lda, p * kMr, apack.data() + p * k * kMr);

  for (std::size_t col0 = 0; col0 < n; col0 += Nr) {
    const std::size_t cols = std::min(Nr, n - col0);
    // Full row-major panels are read in place; the summation order is the same.
    const bool in_place = !trans_b && cols == Nr;
    if (!in_place) pack_b<T, Nr>(trans_b, n, k, b, ldb, col0, bpack.data());
    const T* bp = in_place ? b + col0 : bpack.data();
    const std::size_t ldbp = in_place ? ldb : Nr;
    for (std::size_t p = 0; p < m_panels; ++p) {
      const std::size_t row0 = p * kMr;
      micro_kernel(k, apack.data() + p * k * kMr, bp, ldbp, c + row0 * ldc + col0, ldc,
                   std::min(kMr, m - row0), cols, accumulate);
    }
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          std::size_t, const float*, std::size_t, float*, std::size_t, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           std::size_t, const double*, std::size_t, double*, std::size_t, bool);

}  // namespace botda::ad

#pragma once

#include <cstddef>

namespace botda::ad {

/// C = op(A) * op(B) (+ C when accumulate), row-major, with op(X) = X or X^T.
/// op(A) is M x K, op(B) is K x N.
///
/// Every output element is reduced over k = 0..K-1 in order, starting from
/// its prior value when accumulating, so results do not depend on blocking
/// or vector width.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

}  // namespace botda::ad

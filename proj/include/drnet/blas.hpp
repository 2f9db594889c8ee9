// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace drnet::blas {

/// Which axis of C indexes independent samples. The optimised kernels handle
/// edge rows and columns with different code paths, so by default a sample's
/// bits depend on where it sits in the batch. Naming the batch axis pads it
/// to a multiple of every register block size, which makes each sample's
/// result independent of its position.
enum class BatchAxis { kNone, kRows, kCols };

/// Smallest multiple of the padding block that holds `n` samples' columns.
std::size_t batch_padded(std::size_t n);

/// C = alpha * op(A) * op(B) + beta * C on row-major storage.
/// op(A) is M x K, op(B) is K x N, C is M x N. lda/ldb/ldc are row strides.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc, BatchAxis batch = BatchAxis::kNone);

}  // namespace drnet::blas

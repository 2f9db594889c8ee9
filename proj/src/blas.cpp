// SPDX-License-Identifier: Apache-2.0
#include "drnet/blas.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

namespace drnet::blas {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T, typename L, typename R>
void assign(MMap<T>& c, const L& l, const R& r, T alpha, T beta) {
  if (beta == T{0}) {
    c.noalias() = alpha * (l * r);
  } else {
    if (beta != T{1}) c *= beta;
    c.noalias() += alpha * (l * r);
  }
}

// Multiple of 1, 2 and 3 packets for 4, 8 and 16 lanes, and of the column
// block widths.
constexpr std::size_t kBatchBlock = 96;

std::size_t round_up(std::size_t v) { return (v + kBatchBlock - 1) / kBatchBlock * kBatchBlock; }

// Copies a rows x cols row-major block into a zero-padded prows x cols one.
template <typename T>
std::vector<T> pad_rows(const T* src, std::size_t rows, std::size_t cols, std::size_t ld,
                        std::size_t prows) {
  std::vector<T> out(prows * cols, T{0});
  for (std::size_t r = 0; r < rows; ++r) std::copy(src + r * ld, src + r * ld + cols, out.data() + r * cols);
  return out;
}

// Same, padding columns.
template <typename T>
std::vector<T> pad_cols(const T* src, std::size_t rows, std::size_t cols, std::size_t ld,
                        std::size_t pcols) {
  std::vector<T> out(rows * pcols, T{0});
  for (std::size_t r = 0; r < rows; ++r) std::copy(src + r * ld, src + r * ld + cols, out.data() + r * pcols);
  return out;
}

}  // namespace

std::size_t batch_padded(std::size_t n) { return round_up(n); }

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c,
          std::size_t ldc, BatchAxis batch) {
  if (m == 0 || n == 0) return;
  if (k > 0 && n > 1 && m > 1) {
    if (batch == BatchAxis::kRows && m % kBatchBlock != 0) {
      const std::size_t pm = round_up(m);
      // op(A) rows live in A's rows, or in its columns when transposed.
      const auto ap = trans_a ? pad_cols(a, k, m, lda, pm) : pad_rows(a, m, k, lda, pm);
      std::vector<T> cp = pad_rows(c, beta == T{0} ? 0 : m, n, ldc, pm);
      gemm(trans_a, trans_b, pm, n, k, alpha, ap.data(), trans_a ? pm : k, b, ldb, beta, cp.data(), n);
      for (std::size_t r = 0; r < m; ++r) std::copy(cp.data() + r * n, cp.data() + (r + 1) * n, c + r * ldc);
      return;
    }
    if (batch == BatchAxis::kCols && n % kBatchBlock != 0) {
      const std::size_t pn = round_up(n);
      const auto bp = trans_b ? pad_rows(b, n, k, ldb, pn) : pad_cols(b, k, n, ldb, pn);
      std::vector<T> cp(m * pn, T{0});
      if (beta != T{0})
        for (std::size_t r = 0; r < m; ++r) std::copy(c + r * ldc, c + r * ldc + n, cp.data() + r * pn);
      gemm(trans_a, trans_b, m, pn, k, alpha, a, lda, bp.data(), trans_b ? k : pn, beta, cp.data(), pn);
      for (std::size_t r = 0; r < m; ++r) std::copy(cp.data() + r * pn, cp.data() + r * pn + n, c + r * ldc);
      return;
    }
  }
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MMap<T> cm(c, M, N, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldc)));
  if (k == 0) {
    if (beta == T{0}) cm.setZero(); else cm *= beta;
    return;
  }
  if (n == 1 || m == 1) {
    // Eigen's matrix-vector kernels accumulate tail rows in a different order
    // from body rows, so a row's result would depend on its position in the
    // batch. A plain loop keeps every output a function of its own inputs.
    const std::size_t sa_i = trans_a ? 1 : lda, sa_k = trans_a ? lda : 1;
    const std::size_t sb_k = trans_b ? 1 : ldb, sb_j = trans_b ? ldb : 1;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        T acc{0};
        for (std::size_t q = 0; q < k; ++q) acc += a[i * sa_i + q * sa_k] * b[q * sb_k + j * sb_j];
        T& out = c[i * ldc + j];
        out = beta == T{0} ? alpha * acc : beta * out + alpha * acc;
      }
    return;
  }
  CMap<T> am(a, trans_a ? K : M, trans_a ? M : K, Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)));
  CMap<T> bm(b, trans_b ? N : K, trans_b ? K : N, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)));
  if (!trans_a && !trans_b) assign(cm, am, bm, alpha, beta);
  else if (trans_a && !trans_b) assign(cm, am.transpose(), bm, alpha, beta);
  else if (!trans_a && trans_b) assign(cm, am, bm.transpose(), alpha, beta);
  else assign(cm, am.transpose(), bm.transpose(), alpha, beta);
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*,
                          std::size_t, const float*, std::size_t, float, float*, std::size_t, BatchAxis);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double,
                           const double*, std::size_t, const double*, std::size_t, double,
                           double*, std::size_t, BatchAxis);

}  // namespace drnet::blas

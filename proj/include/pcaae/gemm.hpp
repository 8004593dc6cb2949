#pragma once

#include <Eigen/Core>
#include <cstddef>

namespace pcaae::detail {

template <typename T>
using RowMajorMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C[m×n] (+)= op(A) · op(B), all buffers row-major. op(A) is m×k, op(B) is k×n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  using Map = Eigen::Map<RowMajorMatrix<T>>;
  using ConstMap = Eigen::Map<const RowMajorMatrix<T>>;
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map C(c, M, N);
  ConstMap A(a, trans_a ? K : M, trans_a ? M : K);
  ConstMap B(b, trans_b ? N : K, trans_b ? K : N);
  if (!accumulate) C.setZero();
  if (trans_a && trans_b)
    C.noalias() += A.transpose() * B.transpose();
  else if (trans_a)
    C.noalias() += A.transpose() * B;
  else if (trans_b)
    C.noalias() += A * B.transpose();
  else
    C.noalias() += A * B;
}

}  // namespace pcaae::detail

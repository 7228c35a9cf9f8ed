// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel inner loops. Every kernel exists twice: a serial reference
// and an OpenMP version. Both compute each output element with the same
// summation order, so their results are bitwise identical regardless of the
// thread count. The serial versions are kept for tests and the benchmark.

#include <cstddef>
#include <span>

namespace psl::kernels {

enum class Backend { Serial, OpenMP };

/// Process-wide backend used by the dispatching wrappers below. Defaults to OpenMP.
void set_backend(Backend backend);
Backend backend();

/// Floor applied inside logarithms and KL denominators.
inline constexpr double kLogFloor = 1e-12;

// Shapes used below, all row-major:
//   x  [rows x in]      w  [out x in]      b [out]
//   y  [rows x out]     dy [rows x out]    dw [out x in]   db [out]   dx [rows x in]

#define PSL_KERNEL_DECLS                                                                      \
  /* y = x * w^T + b */                                                                       \
  void affine(std::span<const double> x, std::span<const double> w, std::span<const double> b, \
              std::size_t rows, std::size_t in, std::size_t out, std::span<double> y);        \
  /* dw += dy^T * x, db += column sums of dy */                                               \
  void accumulate_weight_grad(std::span<const double> dy, std::span<const double> x,          \
                              std::size_t rows, std::size_t in, std::size_t out,              \
                              std::span<double> dw, std::span<double> db);                    \
  /* dx = dy * w */                                                                           \
  void input_grad(std::span<const double> dy, std::span<const double> w, std::size_t rows,    \
                  std::size_t in, std::size_t out, std::span<double> dx);                     \
  /* probs is [peers x rows x classes]; scores[r] = sum over ordered peer pairs j != k of     \
     KL(p_j(r) || p_k(r)) with the log floor applied. */                                      \
  void pairwise_kl_rows(std::span<const double> probs, std::size_t peers, std::size_t rows,   \
                        std::size_t classes, std::span<double> scores);

namespace serial {
PSL_KERNEL_DECLS
}  // namespace serial

namespace omp {
PSL_KERNEL_DECLS
}  // namespace omp

// Dispatch to the selected backend.
PSL_KERNEL_DECLS

#undef PSL_KERNEL_DECLS

}  // namespace psl::kernels

#pragma once

#include <cstddef>

namespace edgereg {

// C(m,n) = alpha * op(A) * op(B) + beta * C, row-major.
// ta/tb transpose A/B. Dispatches to BLAS sgemm/dgemm.
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* A, int lda,
          const double* B, int ldb, double beta, double* C, int ldc);
void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* A, int lda,
          const float* B, int ldb, float beta, float* C, int ldc);

} // namespace edgereg

#pragma once

#include <cstddef>

namespace mmfn::kernels {

// Row-major GEMM variants. `acc` selects C += ... instead of C = ....
// Inner loops run over contiguous rows so the compiler can vectorize without
// reassociating reductions.

// C[m×n] (+)= A[m×k] · B[k×n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* cr = c + i * n;
    if (!acc) {
      for (std::size_t j = 0; j < n; ++j) cr[j] = 0.0;
    }
    const double* ar = a + i * k;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ar[t];
      const double* br = b + t * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// C[k×n] += Aᵀ · G where A[m×k], G[m×n]
inline void gemm_tn_acc(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a + i * k;
    const double* gr = g + i * n;
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ar[t];
      double* cr = c + t * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * gr[j];
    }
  }
}

inline void transpose_into(const double* a, double* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
}

}  // namespace mmfn::kernels

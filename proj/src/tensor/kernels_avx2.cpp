// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <cmath>

#include "itst/tensor/kernels.hpp"

namespace itst::kernels {
namespace {

// One output row block of 16 columns held in registers across the k loop.
template <bool kTransA>
inline void row_block16(std::size_t i, std::size_t j, std::size_t k, const double* a,
                        std::size_t lda, const double* b, std::size_t ldb, double* crow) {
  __m256d c0 = _mm256_loadu_pd(crow + j);
  __m256d c1 = _mm256_loadu_pd(crow + j + 4);
  __m256d c2 = _mm256_loadu_pd(crow + j + 8);
  __m256d c3 = _mm256_loadu_pd(crow + j + 12);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d av = _mm256_set1_pd(kTransA ? a[p * lda + i] : a[i * lda + p]);
    const double* brow = b + p * ldb + j;
    c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow), c0);
    c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 4), c1);
    c2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 8), c2);
    c3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 12), c3);
  }
  _mm256_storeu_pd(crow + j, c0);
  _mm256_storeu_pd(crow + j + 4, c1);
  _mm256_storeu_pd(crow + j + 8, c2);
  _mm256_storeu_pd(crow + j + 12, c3);
}

template <bool kTransA>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) row_block16<kTransA>(i, j, k, a, lda, b, ldb, crow);
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_loadu_pd(crow + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(kTransA ? a[p * lda + i] : a[i * lda + p]);
        acc = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * ldb + j), acc);
      }
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (std::size_t p = 0; p < k; ++p) {
        acc = std::fma(kTransA ? a[p * lda + i] : a[i * lda + p], b[p * ldb + j], acc);
      }
      crow[j] = acc;
    }
  }
}

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
              const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                 const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void add(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void mul_acc(std::size_t n, const double* x, const double* z, double* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(z + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(x[i], z[i], y[i]);
}

void scale(std::size_t n, double alpha, const double* x, double* out) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

constexpr KernelTable kAvx2{Isa::kAvx2, "avx2", gemm_acc, gemm_tn_acc, axpy,
                            add,        mul,    mul_acc,  scale};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace itst::kernels

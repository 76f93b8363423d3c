// AArch64 Advanced SIMD variant; NEON is baseline on AArch64 so no runtime
// feature test is needed beyond the architecture itself.
#include <arm_neon.h>

#include <cmath>

#include "itst/tensor/kernels.hpp"

namespace itst::kernels {
namespace {

template <bool kTransA>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
               const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      float64x2_t c0 = vld1q_f64(crow + j);
      float64x2_t c1 = vld1q_f64(crow + j + 2);
      float64x2_t c2 = vld1q_f64(crow + j + 4);
      float64x2_t c3 = vld1q_f64(crow + j + 6);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(kTransA ? a[p * lda + i] : a[i * lda + p]);
        const double* brow = b + p * ldb + j;
        c0 = vfmaq_f64(c0, av, vld1q_f64(brow));
        c1 = vfmaq_f64(c1, av, vld1q_f64(brow + 2));
        c2 = vfmaq_f64(c2, av, vld1q_f64(brow + 4));
        c3 = vfmaq_f64(c3, av, vld1q_f64(brow + 6));
      }
      vst1q_f64(crow + j, c0);
      vst1q_f64(crow + j + 2, c1);
      vst1q_f64(crow + j + 4, c2);
      vst1q_f64(crow + j + 6, c3);
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
  const float64x2_t av = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), av, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void add(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(x + i), vld1q_f64(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void mul_acc(std::size_t n, const double* x, const double* z, double* y) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), vld1q_f64(x + i), vld1q_f64(z + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(x[i], z[i], y[i]);
}

void scale(std::size_t n, double alpha, const double* x, double* out) {
  const float64x2_t av = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(av, vld1q_f64(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

constexpr KernelTable kNeon{Isa::kNeon, "neon", gemm_acc, gemm_tn_acc, axpy,
                            add,        mul,    mul_acc,  scale};

}  // namespace

const KernelTable* neon_table() { return &kNeon; }

}  // namespace itst::kernels

#pragma once
// Data-parallel inner loops behind the tensor ops.
//
// Every variant accumulates each output element in the same order with fused
// multiply-add, so the scalar reference and the vector variants agree bit for
// bit. Output elements never depend on how many rows or columns surround them,
// which is what makes causal encodings prefix-stable.

#include <cstddef>
#include <string_view>

namespace itst::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

struct KernelTable {
  Isa isa;
  std::string_view name;

  /// C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
  void (*gemm_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                   const double* b, std::size_t ldb, double* c, std::size_t ldc);
  /// C[m x n] += A^T * B where A is k x m.
  void (*gemm_tn_acc)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                      std::size_t lda, const double* b, std::size_t ldb, double* c,
                      std::size_t ldc);
  /// y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  /// out = x + y
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  /// out = x * y (elementwise)
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  /// y += x * z (elementwise)
  void (*mul_acc)(std::size_t n, const double* x, const double* z, double* y);
  /// out = alpha * x
  void (*scale)(std::size_t n, double alpha, const double* x, double* out);
};

const KernelTable& scalar_table();
/// nullptr when the variant is not compiled into this build.
const KernelTable* avx2_table();
const KernelTable* neon_table();

/// True when the running CPU can execute the given variant.
bool cpu_supports(Isa isa);

/// Kernel table chosen at first use: the best supported variant, unless the
/// ITST_KERNELS environment variable names one (scalar | avx2 | neon).
const KernelTable& active();

/// Overrides the active table (tests). Throws if unsupported on this CPU.
void select(Isa isa);

}  // namespace itst::kernels

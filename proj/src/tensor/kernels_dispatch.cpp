// Runtime selection of the kernel variant. No intrinsics in this file.
#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "itst/tensor/kernels.hpp"

namespace itst::kernels {

#if !defined(ITST_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif
#if !defined(ITST_HAVE_NEON)
const KernelTable* neon_table() { return nullptr; }
#endif

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(ITST_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::kNeon:
#if defined(ITST_HAVE_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

namespace {

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &scalar_table();
    case Isa::kAvx2:
      return avx2_table();
    case Isa::kNeon:
      return neon_table();
  }
  return nullptr;
}

const KernelTable* detect() {
  if (const char* env = std::getenv("ITST_KERNELS")) {
    const std::string want(env);
    Isa isa = Isa::kScalar;
    if (want == "avx2") {
      isa = Isa::kAvx2;
    } else if (want == "neon") {
      isa = Isa::kNeon;
    } else if (want != "scalar") {
      throw std::invalid_argument("ITST_KERNELS must be scalar, avx2 or neon, got '" + want + "'");
    }
    if (!cpu_supports(isa)) {
      throw std::runtime_error("ITST_KERNELS=" + want + " is not supported on this CPU/build");
    }
    return table_for(isa);
  }
  if (cpu_supports(Isa::kAvx2)) return avx2_table();
  if (cpu_supports(Isa::kNeon)) return neon_table();
  return &scalar_table();
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

const KernelTable& active() {
  const KernelTable* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = detect();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void select(Isa isa) {
  if (!cpu_supports(isa)) throw std::runtime_error("kernel variant not supported here");
  g_active.store(table_for(isa), std::memory_order_release);
}

}  // namespace itst::kernels

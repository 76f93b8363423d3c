// Vector kernel variants against the scalar reference: results must be
// bit-identical, not merely close.
#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "itst/tensor/kernels.hpp"

namespace itst::kernels {
namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

std::vector<const KernelTable*> vector_variants() {
  std::vector<const KernelTable*> out;
  if (cpu_supports(Isa::kAvx2)) out.push_back(avx2_table());
  if (cpu_supports(Isa::kNeon)) out.push_back(neon_table());
  return out;
}

TEST(Kernels, ActiveTableIsSupported) { EXPECT_TRUE(cpu_supports(active().isa)); }

TEST(Kernels, GemmVariantsMatchScalarBitwise) {
  const auto variants = vector_variants();
  if (variants.empty()) GTEST_SKIP() << "no vector variant on this CPU";
  std::mt19937_64 rng(5);
  const KernelTable& ref = scalar_table();
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 1 + rng() % 9, n = 1 + rng() % 40, k = 1 + rng() % 37;
    const auto a = random_vec(rng, m * k);
    const auto at = random_vec(rng, k * m);
    const auto b = random_vec(rng, k * n);
    const auto c0 = random_vec(rng, m * n);
    for (const KernelTable* t : variants) {
      auto want = c0, got = c0;
      ref.gemm_acc(m, n, k, a.data(), k, b.data(), n, want.data(), n);
      t->gemm_acc(m, n, k, a.data(), k, b.data(), n, got.data(), n);
      ASSERT_EQ(want, got) << t->name << " gemm m=" << m << " n=" << n << " k=" << k;
      want = c0;
      got = c0;
      ref.gemm_tn_acc(m, n, k, at.data(), m, b.data(), n, want.data(), n);
      t->gemm_tn_acc(m, n, k, at.data(), m, b.data(), n, got.data(), n);
      ASSERT_EQ(want, got) << t->name << " gemm_tn m=" << m << " n=" << n << " k=" << k;
    }
  }
}

TEST(Kernels, ElementwiseVariantsMatchScalarBitwise) {
  const auto variants = vector_variants();
  if (variants.empty()) GTEST_SKIP() << "no vector variant on this CPU";
  std::mt19937_64 rng(6);
  const KernelTable& ref = scalar_table();
  for (std::size_t n = 0; n < 70; ++n) {
    const auto x = random_vec(rng, n), y = random_vec(rng, n), z = random_vec(rng, n);
    const double alpha = random_vec(rng, 1)[0];
    for (const KernelTable* t : variants) {
      std::vector<double> want(n), got(n);
      ref.add(n, x.data(), y.data(), want.data());
      t->add(n, x.data(), y.data(), got.data());
      EXPECT_EQ(want, got) << "add " << n;
      ref.mul(n, x.data(), y.data(), want.data());
      t->mul(n, x.data(), y.data(), got.data());
      EXPECT_EQ(want, got) << "mul " << n;
      ref.scale(n, alpha, x.data(), want.data());
      t->scale(n, alpha, x.data(), got.data());
      EXPECT_EQ(want, got) << "scale " << n;
      want = y;
      got = y;
      ref.axpy(n, alpha, x.data(), want.data());
      t->axpy(n, alpha, x.data(), got.data());
      EXPECT_EQ(want, got) << "axpy " << n;
      want = y;
      got = y;
      ref.mul_acc(n, x.data(), z.data(), want.data());
      t->mul_acc(n, x.data(), z.data(), got.data());
      EXPECT_EQ(want, got) << "mul_acc " << n;
    }
  }
}

// An output row must not depend on how many other rows or trailing zero-weight
// terms take part; causal prefix stability relies on this.
TEST(Kernels, RowResultsIndependentOfSurroundingShape) {
  std::mt19937_64 rng(8);
  const KernelTable& kt = active();
  const std::size_t k = 7, n = 19;
  const auto a = random_vec(rng, 5 * k);
  const auto b = random_vec(rng, (k + 3) * n);
  std::vector<double> full(5 * n, 0.0), one(n, 0.0);
  kt.gemm_acc(5, n, k, a.data(), k, b.data(), n, full.data(), n);
  kt.gemm_acc(1, n, k, a.data() + 3 * k, k, b.data(), n, one.data(), n);
  EXPECT_TRUE(std::equal(one.begin(), one.end(), full.begin() + 3 * n));

  // Padding the reduction with zero coefficients leaves results unchanged.
  std::vector<double> padded_a(k + 3, 0.0);
  std::copy_n(a.begin(), k, padded_a.begin());
  std::vector<double> short_out(n, 0.0), long_out(n, 0.0);
  kt.gemm_acc(1, n, k, a.data(), k, b.data(), n, short_out.data(), n);
  kt.gemm_acc(1, n, k + 3, padded_a.data(), k + 3, b.data(), n, long_out.data(), n);
  EXPECT_EQ(short_out, long_out);
}

TEST(Kernels, SelectSwitchesActiveVariant) {
  const Isa before = active().isa;
  select(Isa::kScalar);
  EXPECT_EQ(active().isa, Isa::kScalar);
  select(before);
  EXPECT_EQ(active().isa, before);
}

}  // namespace
}  // namespace itst::kernels

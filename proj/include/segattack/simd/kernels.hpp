#pragma once

// Dense double-precision kernels behind a runtime-selected dispatch table.
//
// The scalar table is the reference. Vector tables (AVX2+FMA on x86-64, NEON
// on AArch64) must agree with it up to reassociation/FMA rounding, and the
// tests in tests/unit/test_simd.cpp hold them to that.
//
// Every kernel accumulates each output element in index order over the
// reduction dimension, so C(i,j) and C(j,i) of a symmetric product are
// bitwise identical within one table.

#include <cstddef>
#include <string_view>
#include <vector>

namespace segattack::simd {

struct KernelTable {
  std::string_view name;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y += x * x
  void (*accumulate_square)(const double* x, double* y, std::size_t n);

  // C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc);

  // out[i] = v[i] > tau ? 1 : 0. Returns the number of ones.
  std::size_t (*threshold)(const double* v, double tau, double* out, std::size_t n);
  // sum_i [m[i] > tau] * s[i]; the number of selected entries goes to *selected.
  double (*masked_sum)(const double* m, const double* s, double tau,
                       std::size_t n, std::size_t* selected);

  // x += step * sign(g), with sign(0) = 0.
  void (*sign_step)(double* x, const double* g, double step, std::size_t n);
  // adv = clamp(adv, clean - eps, clean + eps), then clamp to [0,1] if clamp01.
  void (*project_linf)(double* adv, const double* clean, double eps,
                       bool clamp01, std::size_t n);

  // x = max(x, 0)
  void (*relu)(double* x, std::size_t n);
  // g[i] = y[i] > 0 ? g[i] : 0
  void (*relu_backward)(const double* y, double* g, std::size_t n);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Every table usable on this machine, scalar first.
std::vector<const KernelTable*> available_kernels();

// The process-wide table. Chosen on first use: SEGATTACK_SIMD=<name> if set,
// otherwise the widest available variant.
const KernelTable& active();

// Switch the process-wide table. Throws segattack::Error (config) for an
// unknown or unavailable name. Not safe while other threads run kernels.
void select_kernels(std::string_view name);

}  // namespace segattack::simd

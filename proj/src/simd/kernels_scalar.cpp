#include "segattack/simd/kernels.hpp"

#include <algorithm>

namespace segattack::simd {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void accumulate_square(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += x[i] * x[i];
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * lda + p];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
    }
  }
}

std::size_t threshold(const double* v, double tau, double* out, std::size_t n) {
  std::size_t ones = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool hit = v[i] > tau;
    out[i] = hit ? 1.0 : 0.0;
    ones += hit ? 1 : 0;
  }
  return ones;
}

double masked_sum(const double* m, const double* s, double tau, std::size_t n,
                  std::size_t* selected) {
  double acc = 0.0;
  std::size_t ones = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i] > tau) {
      acc += s[i];
      ++ones;
    }
  }
  if (selected != nullptr) *selected = ones;
  return acc;
}

void sign_step(double* x, const double* g, double step, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (g[i] > 0.0) {
      x[i] += step;
    } else if (g[i] < 0.0) {
      x[i] -= step;
    }
  }
}

void project_linf(double* adv, const double* clean, double eps, bool clamp01,
                  std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double v = std::min(std::max(adv[i], clean[i] - eps), clean[i] + eps);
    if (clamp01) v = std::min(std::max(v, 0.0), 1.0);
    adv[i] = v;
  }
}

void relu(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* y, double* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) g[i] = y[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      "scalar",      dot,       axpy,       accumulate_square,
      gemm_nn,       gemm_nt,   threshold,  masked_sum,
      sign_step,     project_linf, relu,    relu_backward,
  };
  return table;
}

}  // namespace segattack::simd

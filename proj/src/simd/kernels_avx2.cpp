// Compiled with -mavx2 -mfma. Nothing here may run before the dispatcher has
// confirmed CPU support.

#include "segattack/simd/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace segattack::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc = std::fma(a[i], b[i], acc);
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void accumulate_square(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(vx, vx, _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(x[i], x[i], y[i]);
}

// 4 rows x 8 columns of C held in registers across the whole k loop.
inline void gemm_nn_block4x8(std::size_t k, const double* a, std::size_t lda,
                             const double* b, std::size_t ldb, double* c,
                             std::size_t ldc) {
  __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
  __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    __m256d av = _mm256_broadcast_sd(a + p);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(a + lda + p);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(a + 2 * lda + p);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(a + 3 * lda + p);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c, c00);
  _mm256_storeu_pd(c + 4, c01);
  _mm256_storeu_pd(c + ldc, c10);
  _mm256_storeu_pd(c + ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20);
  _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30);
  _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

inline void gemm_nn_row4(std::size_t k, const double* a, const double* b,
                         std::size_t ldb, double* c) {
  __m256d acc = _mm256_loadu_pd(c);
  for (std::size_t p = 0; p < k; ++p) {
    acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * ldb), acc);
  }
  _mm256_storeu_pd(c, acc);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
  const std::size_t m4 = m - m % 4;
  const std::size_t n8 = n - n % 8;
  for (std::size_t i = 0; i < m4; i += 4) {
    for (std::size_t j = 0; j < n8; j += 8) {
      gemm_nn_block4x8(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc);
    }
  }
  // Column remainder for the blocked rows, then the leftover rows.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t jstart = i < m4 ? n8 : 0;
    std::size_t j = jstart;
    for (; j + 4 <= n; j += 4) {
      gemm_nn_row4(k, a + i * lda, b + j, ldb, c + i * ldc + j);
    }
    for (; j < n; ++j) {
      double acc = c[i * ldc + j];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
      c[i * ldc + j] = acc;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d va = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(va, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 = std::fma(arow[p], b0[p], r0);
        r1 = std::fma(arow[p], b1[p], r1);
        r2 = std::fma(arow[p], b2[p], r2);
        r3 = std::fma(arow[p], b3[p], r3);
      }
      c[i * ldc + j] += r0;
      c[i * ldc + j + 1] += r1;
      c[i * ldc + j + 2] += r2;
      c[i * ldc + j + 3] += r3;
    }
    for (; j < n; ++j) c[i * ldc + j] += dot(arow, b + j * ldb, k);
  }
}

std::size_t threshold(const double* v, double tau, double* out, std::size_t n) {
  const __m256d vt = _mm256_set1_pd(tau);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t ones = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d hit = _mm256_cmp_pd(_mm256_loadu_pd(v + i), vt, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_and_pd(hit, one));
    ones += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(_mm256_movemask_pd(hit))));
  }
  for (; i < n; ++i) {
    const bool hit = v[i] > tau;
    out[i] = hit ? 1.0 : 0.0;
    ones += hit ? 1 : 0;
  }
  return ones;
}

double masked_sum(const double* m, const double* s, double tau, std::size_t n,
                  std::size_t* selected) {
  const __m256d vt = _mm256_set1_pd(tau);
  __m256d acc = _mm256_setzero_pd();
  std::size_t ones = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d hit = _mm256_cmp_pd(_mm256_loadu_pd(m + i), vt, _CMP_GT_OQ);
    acc = _mm256_add_pd(acc, _mm256_and_pd(hit, _mm256_loadu_pd(s + i)));
    ones += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(_mm256_movemask_pd(hit))));
  }
  double total = hsum(acc);
  for (; i < n; ++i) {
    if (m[i] > tau) {
      total += s[i];
      ++ones;
    }
  }
  if (selected != nullptr) *selected = ones;
  return total;
}

void sign_step(double* x, const double* g, double step, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d up = _mm256_set1_pd(step);
  const __m256d down = _mm256_set1_pd(-step);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vg = _mm256_loadu_pd(g + i);
    const __m256d pos = _mm256_and_pd(_mm256_cmp_pd(vg, zero, _CMP_GT_OQ), up);
    const __m256d neg = _mm256_and_pd(_mm256_cmp_pd(vg, zero, _CMP_LT_OQ), down);
    _mm256_storeu_pd(x + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_or_pd(pos, neg)));
  }
  for (; i < n; ++i) {
    if (g[i] > 0.0) {
      x[i] += step;
    } else if (g[i] < 0.0) {
      x[i] -= step;
    }
  }
}

void project_linf(double* adv, const double* clean, double eps, bool clamp01,
                  std::size_t n) {
  const __m256d ve = _mm256_set1_pd(eps);
  const __m256d lo01 = _mm256_setzero_pd();
  const __m256d hi01 = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vc = _mm256_loadu_pd(clean + i);
    __m256d v = _mm256_loadu_pd(adv + i);
    v = _mm256_max_pd(v, _mm256_sub_pd(vc, ve));
    v = _mm256_min_pd(v, _mm256_add_pd(vc, ve));
    if (clamp01) v = _mm256_min_pd(_mm256_max_pd(v, lo01), hi01);
    _mm256_storeu_pd(adv + i, v);
  }
  for (; i < n; ++i) {
    double v = std::min(std::max(adv[i], clean[i] - eps), clean[i] + eps);
    if (clamp01) v = std::min(std::max(v, 0.0), 1.0);
    adv[i] = v;
  }
}

void relu(double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(x + i, _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_GT_OQ), v));
  }
  for (; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* y, double* g, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(y + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(g + i, _mm256_and_pd(keep, _mm256_loadu_pd(g + i)));
  }
  for (; i < n; ++i) g[i] = y[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace

const KernelTable& avx2_table() {
  static const KernelTable table{
      "avx2",        dot,       axpy,       accumulate_square,
      gemm_nn,       gemm_nt,   threshold,  masked_sum,
      sign_step,     project_linf, relu,    relu_backward,
  };
  return table;
}

}  // namespace segattack::simd

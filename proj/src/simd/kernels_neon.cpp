// AArch64 only; Advanced SIMD is mandatory there so no runtime probe is needed.

#include "segattack/simd/kernels.hpp"

#if defined(__aarch64__) && defined(__ARM_NEON)

#include <arm_neon.h>

#include <algorithm>
#include <cmath>

namespace segattack::simd {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double acc = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) acc = std::fma(a[i], b[i], acc);
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void accumulate_square(const double* x, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vx = vld1q_f64(x + i);
    vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), vx, vx));
  }
  for (; i < n; ++i) y[i] = std::fma(x[i], x[i], y[i]);
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float64x2_t c0 = vld1q_f64(crow + j);
      float64x2_t c1 = vld1q_f64(crow + j + 2);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(a[i * lda + p]);
        c0 = vfmaq_f64(c0, av, vld1q_f64(b + p * ldb + j));
        c1 = vfmaq_f64(c1, av, vld1q_f64(b + p * ldb + j + 2));
      }
      vst1q_f64(crow + j, c0);
      vst1q_f64(crow + j + 2, c1);
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (std::size_t p = 0; p < k; ++p) acc = std::fma(a[i * lda + p], b[p * ldb + j], acc);
      crow[j] = acc;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
             const double* a, std::size_t lda,
             const double* b, std::size_t ldb,
             double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
  }
}

std::size_t threshold(const double* v, double tau, double* out, std::size_t n) {
  const float64x2_t vt = vdupq_n_f64(tau);
  const float64x2_t one = vdupq_n_f64(1.0);
  std::size_t ones = 0;
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const uint64x2_t hit = vcgtq_f64(vld1q_f64(v + i), vt);
    vst1q_f64(out + i, vreinterpretq_f64_u64(vandq_u64(hit, vreinterpretq_u64_f64(one))));
    ones += static_cast<std::size_t>(vgetq_lane_u64(hit, 0) & 1U) +
            static_cast<std::size_t>(vgetq_lane_u64(hit, 1) & 1U);
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
  const float64x2_t vt = vdupq_n_f64(tau);
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t ones = 0;
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const uint64x2_t hit = vcgtq_f64(vld1q_f64(m + i), vt);
    acc = vaddq_f64(acc, vreinterpretq_f64_u64(vandq_u64(hit, vreinterpretq_u64_f64(vld1q_f64(s + i)))));
    ones += static_cast<std::size_t>(vgetq_lane_u64(hit, 0) & 1U) +
            static_cast<std::size_t>(vgetq_lane_u64(hit, 1) & 1U);
  }
  double total = vaddvq_f64(acc);
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
  const float64x2_t ve = vdupq_n_f64(eps);
  const float64x2_t lo01 = vdupq_n_f64(0.0);
  const float64x2_t hi01 = vdupq_n_f64(1.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vc = vld1q_f64(clean + i);
    float64x2_t v = vld1q_f64(adv + i);
    v = vmaxq_f64(v, vsubq_f64(vc, ve));
    v = vminq_f64(v, vaddq_f64(vc, ve));
    if (clamp01) v = vminq_f64(vmaxq_f64(v, lo01), hi01);
    vst1q_f64(adv + i, v);
  }
  for (; i < n; ++i) {
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

const KernelTable& neon_table() {
  static const KernelTable table{
      "neon",        dot,       axpy,       accumulate_square,
      gemm_nn,       gemm_nt,   threshold,  masked_sum,
      sign_step,     project_linf, relu,    relu_backward,
  };
  return table;
}

}  // namespace segattack::simd

#endif

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "segattack/error.hpp"
#include "segattack/simd/kernels.hpp"

using segattack::simd::KernelTable;

namespace {

std::vector<double> randv(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Odd lengths exercise vector tails.
const std::size_t kLengths[] = {0, 1, 3, 4, 7, 8, 15, 16, 33, 257};

}  // namespace

TEST_CASE("every kernel table agrees with the scalar reference") {
  const KernelTable& ref = segattack::simd::scalar_kernels();
  std::mt19937_64 rng(11);
  for (const KernelTable* k : segattack::simd::available_kernels()) {
    CAPTURE(k->name);
    for (std::size_t n : kLengths) {
      CAPTURE(n);
      auto a = randv(rng, n), b = randv(rng, n);
      CHECK(k->dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-13));

      // Fused multiply-add variants round once instead of twice.
      auto y1 = b, y2 = b;
      ref.axpy(0.37, a.data(), y1.data(), n);
      k->axpy(0.37, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (1.0 + std::abs(y1[i])));

      y1 = b;
      y2 = b;
      ref.accumulate_square(a.data(), y1.data(), n);
      k->accumulate_square(a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15 * (1.0 + std::abs(y1[i])));

      std::vector<double> o1(n), o2(n);
      CHECK(ref.threshold(a.data(), 0.1, o1.data(), n) == k->threshold(a.data(), 0.1, o2.data(), n));
      CHECK(o1 == o2);

      std::size_t s1 = 0, s2 = 0;
      const double m1 = ref.masked_sum(a.data(), b.data(), 0.1, n, &s1);
      const double m2 = k->masked_sum(a.data(), b.data(), 0.1, n, &s2);
      CHECK(s1 == s2);
      CHECK(m1 == doctest::Approx(m2).epsilon(1e-13));

      auto g = a;
      for (std::size_t i = 0; i < n; i += 3) g[i] = 0.0;
      y1 = b;
      y2 = b;
      ref.sign_step(y1.data(), g.data(), -0.25, n);
      k->sign_step(y2.data(), g.data(), -0.25, n);
      CHECK(y1 == y2);

      auto clean = randv(rng, n, 0.0, 1.0);
      auto adv = randv(rng, n, -0.2, 1.2);
      for (bool clamp : {false, true}) {
        y1 = adv;
        y2 = adv;
        ref.project_linf(y1.data(), clean.data(), 0.05, clamp, n);
        k->project_linf(y2.data(), clean.data(), 0.05, clamp, n);
        CHECK(y1 == y2);
      }

      y1 = a;
      y2 = a;
      ref.relu(y1.data(), n);
      k->relu(y2.data(), n);
      CHECK(y1 == y2);
      auto gr1 = b, gr2 = b;
      ref.relu_backward(y1.data(), gr1.data(), n);
      k->relu_backward(y1.data(), gr2.data(), n);
      CHECK(gr1 == gr2);
    }
  }
}

TEST_CASE("gemm kernels agree with the scalar reference") {
  const KernelTable& ref = segattack::simd::scalar_kernels();
  std::mt19937_64 rng(5);
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {8, 8, 8}, {13, 17, 9}, {32, 31, 16}};
  for (const KernelTable* k : segattack::simd::available_kernels()) {
    CAPTURE(k->name);
    for (const auto& s : shapes) {
      const std::size_t m = s[0], n = s[1], kk = s[2];
      auto a = randv(rng, m * kk), b = randv(rng, kk * n), bt = randv(rng, n * kk), c0 = randv(rng, m * n);
      auto c1 = c0, c2 = c0;
      ref.gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c1.data(), n);
      k->gemm_nn(m, n, kk, a.data(), kk, b.data(), n, c2.data(), n);
      for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
      c1 = c0;
      c2 = c0;
      ref.gemm_nt(m, n, kk, a.data(), kk, bt.data(), kk, c1.data(), n);
      k->gemm_nt(m, n, kk, a.data(), kk, bt.data(), kk, c2.data(), n);
      for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("sign step treats a zero gradient as no move") {
  for (const KernelTable* k : segattack::simd::available_kernels()) {
    std::vector<double> x{0.5, 0.5, 0.5, 0.5, 0.5};
    const std::vector<double> g{1.0, -2.0, 0.0, -0.0, 3.0};
    k->sign_step(x.data(), g.data(), 0.1, x.size());
    CHECK(x[0] == doctest::Approx(0.6));
    CHECK(x[1] == doctest::Approx(0.4));
    CHECK(x[2] == 0.5);
    CHECK(x[3] == 0.5);
    CHECK(x[4] == doctest::Approx(0.6));
  }
}

TEST_CASE("selecting an unknown kernel table is a config error") {
  CHECK_THROWS_AS(segattack::simd::select_kernels("sse9"), segattack::Error);
  CHECK(segattack::simd::available_kernels().front()->name == "scalar");
}

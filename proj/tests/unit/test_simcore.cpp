#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "segattack/error.hpp"
#include "segattack/simcore.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace segattack;
using namespace segattack::simcore;
using testutil::random_features;
using testutil::rel_err;

namespace {

FeatureMap columns(int c, std::vector<std::vector<double>> cols) {
  FeatureMap f(c, 1, static_cast<int>(cols.size()));
  for (std::size_t p = 0; p < cols.size(); ++p) {
    for (int k = 0; k < c; ++k) f.at(k, p) = cols[p][static_cast<std::size_t>(k)];
  }
  return f;
}

double naive_internal(const FeatureMap& fx, const FeatureMap& fa, double tau) {
  return oracle::internal_similarity(fx, fa, tau);
}

double naive_external(const FeatureMap& fx, const FeatureMap& fa) { return oracle::external_similarity(fx, fa); }

}  // namespace

TEST_CASE("normalize_pixels") {
  const auto n = normalize_pixels(columns(2, {{3, 4}, {0, 0}, {1, 0}}));
  CHECK(n.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.at(1, 0) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(n.at(0, 1) == 0.0);
  CHECK(n.at(1, 1) == 0.0);
  CHECK(n.at(0, 2) == 1.0);

  std::mt19937_64 rng(1);
  const auto u = normalize_pixels(random_features(rng, 5, 3, 3));
  const auto uu = normalize_pixels(u);
  for (std::size_t i = 0; i < u.values().size(); ++i) CHECK(std::abs(u.values()[i] - uu.values()[i]) < 1e-12);

  FeatureMap bad(1, 1, 1);
  bad.at(0, 0) = std::nan("");
  CHECK_THROWS_AS(normalize_pixels(bad), Error);
}

TEST_CASE("external_similarity examples") {
  std::mt19937_64 rng(2);
  const auto f = random_features(rng, 4, 3, 5);
  FeatureMap neg = f;
  for (auto& v : neg.values()) v = -v;
  CHECK(external_similarity(f, f) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(external_similarity(f, neg) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(external_similarity(columns(2, {{1, 0}, {0, 2}}), columns(2, {{0, 5}, {3, 0}})) == 0.0);
  CHECK_THROWS_AS(external_similarity(f, random_features(rng, 4, 5, 3)), Error);
}

TEST_CASE("gram examples") {
  CHECK(gram(columns(3, {{1, 2, 3}})).at(0, 0) == doctest::Approx(1.0));
  const auto same = gram(columns(2, {{1, 2}, {1, 2}}));
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t q = 0; q < 2; ++q) CHECK(same.at(p, q) == doctest::Approx(1.0).epsilon(1e-15));
  const auto id = gram(columns(2, {{1, 0}, {0, 1}}));
  CHECK(id.at(0, 0) == 1.0);
  CHECK(id.at(0, 1) == 0.0);
  CHECK(id.at(1, 0) == 0.0);
  CHECK(id.at(1, 1) == 1.0);
}

TEST_CASE("build_mask examples") {
  std::mt19937_64 rng(3);
  const auto f = random_features(rng, 3, 4, 4);
  const auto all = build_mask(f, -1.1);
  CHECK(all.count_k() == f.pixels() * f.pixels());
  const auto id = build_mask(columns(3, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), 0.5);
  CHECK(id.count_k() == 3);
  for (std::size_t p = 0; p < 3; ++p)
    for (std::size_t q = 0; q < 3; ++q) CHECK(id.at(p, q) == (p == q ? 1 : 0));
  CHECK_THROWS_AS(build_mask(f, 1.0), Error);
  CHECK(kDefaultTau == doctest::Approx(std::cos(std::numbers::pi / 3)).epsilon(1e-15));
}

TEST_CASE("build_mask uses a strict comparison") {
  // The off-diagonal pair sits exactly at tau = 0 and is not selected.
  const auto m = build_mask(columns(2, {{1, 0}, {0, 1}}), 0.0);
  CHECK(m.at(0, 1) == 0);
  CHECK(m.count_k() == 2);
}

TEST_CASE("internal_similarity examples") {
  std::mt19937_64 rng(4);
  const auto fx = columns(3, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const auto fa = random_features(rng, 3, 1, 3);
  CHECK(internal_similarity(fx, fa, 0.5) == doctest::Approx(0.5).epsilon(1e-14));
  const auto same = columns(2, {{1, 2}, {1, 2}, {1, 2}, {1, 2}});
  CHECK(internal_similarity(same, same, 0.5) == doctest::Approx(0.5).epsilon(1e-14));

  const auto x8 = random_features(rng, 4, 2, 4);
  const auto a8 = random_features(rng, 4, 2, 4);
  CHECK(rel_err(internal_similarity(x8, a8, 0.2), naive_internal(x8, a8, 0.2)) < 1e-12);
}

TEST_CASE("internal_similarity matches the naive double loop") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cdist(1, 8), hdist(1, 8);
  std::uniform_real_distribution<double> tdist(-0.5, 0.9);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = cdist(rng);
    int h = hdist(rng), w = hdist(rng);
    while (h * w > 64) --w;
    const bool nonneg = trial % 2 == 0;
    const auto fx = random_features(rng, c, h, w, nonneg);
    const auto fa = random_features(rng, c, h, w, nonneg);
    const double tau = tdist(rng);
    CAPTURE(trial);
    CHECK(rel_err(internal_similarity(fx, fa, tau), naive_internal(fx, fa, tau), 1e-300) <= 1e-9);
    CHECK(rel_err(external_similarity(fx, fa), naive_external(fx, fa), 1e-300) <= 1e-9);
  }
}

TEST_CASE("gram and mask are symmetric and in range") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_features(rng, 1 + trial % 6, 1 + trial % 5, 2 + trial % 7);
    const auto s = gram(f);
    const auto m = build_mask(f, 0.3);
    std::size_t ones = 0;
    for (std::size_t p = 0; p < s.size(); ++p) {
      for (std::size_t q = 0; q < s.size(); ++q) {
        CHECK(std::abs(s.at(p, q) - s.at(q, p)) <= 1e-12);
        CHECK(s.at(p, q) >= -1.0 - 1e-9);
        CHECK(s.at(p, q) <= 1.0 + 1e-9);
        CHECK(m.at(p, q) == m.at(q, p));
        CHECK(m.at(p, q) <= 1);
        ones += m.at(p, q);
      }
      CHECK(s.at(p, p) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(ones == m.count_k());
  }
}

TEST_CASE("mask is monotone in tau") {
  std::mt19937_64 rng(7);
  const auto f = random_features(rng, 4, 5, 5);
  const double taus[] = {-0.9, -0.3, 0.0, 0.2, 0.5, 0.8, 0.99};
  for (std::size_t i = 0; i + 1 < std::size(taus); ++i) {
    const auto lo = build_mask(f, taus[i]);
    const auto hi = build_mask(f, taus[i + 1]);
    CHECK(lo.count_k() >= hi.count_k());
    for (std::size_t j = 0; j < lo.values().size(); ++j) CHECK(lo.values()[j] >= hi.values()[j]);
  }
}

TEST_CASE("combined_loss schedule") {
  std::mt19937_64 rng(8);
  const auto fx = random_features(rng, 3, 4, 4);
  const auto fa = random_features(rng, 3, 4, 4);
  const auto b0 = combined_loss(fx, fa, 0, 20, 0.5);
  CHECK(b0.lambda_t == 0.0);
  CHECK(b0.combined == b0.l_in);
  const auto b10 = combined_loss(fx, fa, 10, 20, 0.5);
  CHECK(b10.lambda_t == 0.5);
  CHECK(b10.combined == doctest::Approx((b10.l_ex + b10.l_in) / 2).epsilon(1e-15));
  for (int t = 0; t < 7; ++t) {
    const auto b = combined_loss(fx, fa, t, 7, 0.5);
    CHECK(b.lambda_t == static_cast<double>(t) / 7.0);
    CHECK(b.combined == b.lambda_t * b.l_ex + (1.0 - b.lambda_t) * b.l_in);
  }
  CHECK_THROWS_AS(combined_loss(fx, fa, 20, 20, 0.5), Error);
  CHECK_THROWS_AS(combined_loss(fx, fa, -1, 20, 0.5), Error);
  CHECK(kDefaultIterations == 20);
}

TEST_CASE("empty mask is reported, not an error") {
  const auto fx = columns(2, {{1, 0}, {0, 0}});
  FeatureSimilarity sim(columns(2, {{0, 0}, {0, 0}}), 0.5);
  CHECK(sim.count_k() == 0);
  const auto v = sim.evaluate(fx, {0.0, 1.0});
  CHECK(v.empty_mask);
  CHECK(v.l_in == 0.0);
  CHECK(combined_loss(columns(2, {{0, 0}}), columns(2, {{1, 0}}), 0, 1, 0.5).empty_mask);
}

TEST_CASE("feature gradients match central differences") {
  std::mt19937_64 rng(9);
  const double h = 1e-4;
  int cases = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const int c = 1 + trial % 4;
    const int hh = 1 + trial % 4, ww = 1 + (trial / 4) % 4;
    const auto fx = random_features(rng, c, hh, ww, trial % 3 == 0);
    auto fa = random_features(rng, c, hh, ww, trial % 3 == 0);
    const double tau = trial % 2 ? 0.5 : 0.0;
    FeatureSimilarity sim(fx, tau);
    for (const ObjectiveWeights w : {ObjectiveWeights{1.0, 0.0}, ObjectiveWeights{0.0, 1.0}}) {
      FeatureMap grad;
      sim.evaluate(fa, w, &grad);
      for (std::size_t i = 0; i < fa.values().size(); ++i) {
        const double keep = fa.values()[i];
        fa.values()[i] = keep + h;
        const double up = sim.evaluate(fa, w).objective;
        fa.values()[i] = keep - h;
        const double down = sim.evaluate(fa, w).objective;
        fa.values()[i] = keep;
        const double fd = (up - down) / (2 * h);
        CAPTURE(trial);
        CHECK(std::abs(grad.values()[i] - fd) <= 1e-4 * std::max({std::abs(fd), std::abs(grad.values()[i]), 1e-3}));
      }
    }
    ++cases;
  }
  CHECK(cases >= 20);
}

TEST_CASE("the gram diagonal contributes no gradient") {
  std::mt19937_64 rng(10);
  // Orthonormal clean columns make M_B the identity, so L_in is the mean of
  // S(p,p), a constant.
  const auto fx = columns(4, {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  FeatureSimilarity sim(fx, 0.5);
  REQUIRE(sim.count_k() == 4);
  const auto fa = random_features(rng, 4, 1, 4);
  FeatureMap grad;
  sim.evaluate(fa, {0.0, 1.0}, &grad);
  for (double g : grad.values()) CHECK(std::abs(g) <= 1e-9);
}

TEST_CASE("FeatureSimilarity agrees with the free functions") {
  std::mt19937_64 rng(11);
  const auto fx = random_features(rng, 6, 5, 7, true);
  const auto fa = random_features(rng, 6, 5, 7, true);
  FeatureSimilarity sim(fx, 0.5);
  const auto v = sim.evaluate(fa, {0.25, 0.75});
  CHECK(rel_err(v.l_ex, external_similarity(fx, fa)) < 1e-12);
  CHECK(rel_err(v.l_in, internal_similarity(fx, fa, 0.5)) < 1e-12);
  CHECK(v.count_k == build_mask(fx, 0.5).count_k());
  CHECK(v.objective == 0.25 * v.l_ex + 0.75 * v.l_in);
}

TEST_CASE("tiled evaluation equals the dense path") {
  std::mt19937_64 rng(12);
  const auto fx = random_features(rng, 5, 9, 7);
  const auto fa = random_features(rng, 5, 9, 7);
  const TilingOptions dense{};
  const TilingOptions tiled{8, 5};
  CHECK(internal_similarity(fx, fa, 0.1, tiled) == internal_similarity(fx, fa, 0.1, dense));
  CHECK_THROWS_AS(gram(fx, tiled), Error);

  FeatureSimilarity a(fx, 0.1, dense), b(fx, 0.1, tiled);
  CHECK(a.count_k() == b.count_k());
  FeatureMap ga, gb;
  const auto va = a.evaluate(fa, {0.3, 0.7}, &ga);
  const auto vb = b.evaluate(fa, {0.3, 0.7}, &gb);
  CHECK(va.objective == vb.objective);
  for (std::size_t i = 0; i < ga.values().size(); ++i) CHECK(ga.values()[i] == doctest::Approx(gb.values()[i]).epsilon(1e-12));
}

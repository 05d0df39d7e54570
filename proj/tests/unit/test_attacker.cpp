#include <doctest.h>

#include <random>

#include "segattack/attacker.hpp"
#include "segattack/error.hpp"
#include "segattack/simcore.hpp"
#include "test_util.hpp"

using namespace segattack;
using namespace segattack::attacker;
using testutil::random_image;

namespace {

const adapters::ModelAdapter& toy() {
  static const auto m = adapters::load_model("toy-cnn-a", {}, 17);
  return m;
}

LabelMap stripes(int h, int w) {
  LabelMap y(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) y.at(r, c) = static_cast<std::uint8_t>((c / 4) % 5);
  return y;
}

AttackConfig small(int iterations = 5) {
  AttackConfig cfg;
  cfg.iterations = iterations;
  cfg.seed = 3;
  return cfg;
}

void check_ball(const AttackTrace& t, const Tensor3& x, double eps) {
  CHECK(t.init_max_delta <= eps + 1e-6);
  for (const auto& s : t.steps) {
    CHECK(s.max_delta <= eps + 1e-6);
    CHECK(s.min_pixel >= 0.0);
    CHECK(s.max_pixel <= 1.0);
  }
  CHECK(max_abs_diff(t.adversarial, x) <= eps + 1e-6);
  for (double v : t.adversarial.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

}  // namespace

TEST_CASE("pgd and fspgd stay in the epsilon ball and the pixel range") {
  std::mt19937_64 rng(1);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  const auto y = stripes(16, 16);
  for (double eps : {1.0 / 255, 8.0 / 255, 16.0 / 255}) {
    AttackConfig cfg = small(6);
    cfg.epsilon = eps;
    cfg.alpha = eps / 4;
    check_ball(pgd(toy(), x, y, cfg), x, eps);
    check_ball(fspgd(toy(), x, cfg), x, eps);
  }
}

TEST_CASE("fspgd trace records the t/T schedule exactly") {
  std::mt19937_64 rng(2);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  const int T = 7;
  const auto trace = fspgd(toy(), x, small(T));
  REQUIRE(trace.steps.size() == static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const auto& s = trace.steps[static_cast<std::size_t>(t)];
    CHECK(s.t == t);
    CHECK(s.lambda_t == static_cast<double>(t) / T);
    CHECK(s.combined == s.lambda_t * s.l_ex + (1.0 - s.lambda_t) * s.l_in);
  }
  CHECK(trace.layer_id == "conv3.pre");
  CHECK(trace.objective == "dynamic");
}

TEST_CASE("fspgd lowers the feature similarity it descends") {
  std::mt19937_64 rng(3);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  AttackConfig cfg = small(10);
  cfg.loss_mode = LossMode::external_only();
  const auto trace = fspgd(toy(), x, cfg);
  CHECK(trace.steps.back().l_ex < trace.steps.front().l_ex);
}

TEST_CASE("attacks are deterministic in the seed") {
  std::mt19937_64 rng(4);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  const auto y = stripes(16, 16);
  const auto a = fspgd(toy(), x, small());
  CHECK(fspgd(toy(), x, small()).adversarial == a.adversarial);
  AttackConfig other = small();
  other.seed = 4;
  CHECK_FALSE(fspgd(toy(), x, other).adversarial == a.adversarial);
  CHECK(pgd(toy(), x, y, small()).adversarial == pgd(toy(), x, y, small()).adversarial);
}

TEST_CASE("epsilon zero returns the clean image") {
  std::mt19937_64 rng(5);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  AttackConfig cfg = small();
  cfg.epsilon = 0.0;
  CHECK(fspgd(toy(), x, cfg).adversarial == x);
  CHECK(pgd(toy(), x, stripes(16, 16), cfg).adversarial == x);
  CHECK(fgsm(toy(), x, stripes(16, 16), 0.0) == x);
}

TEST_CASE("zero iterations returns the projected random start") {
  std::mt19937_64 rng(6);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  AttackConfig cfg = small(0);
  const auto t = fspgd(toy(), x, cfg);
  CHECK(t.steps.empty());
  CHECK(t.adversarial == project_linf(random_init(x, cfg.epsilon, cfg.seed), x, cfg.epsilon));
}

TEST_CASE("random_init scales linearly with epsilon") {
  const Tensor3 x(3, 8, 8, 0.5);
  const Tensor3 a = random_init(x, 0.02, 9, false);
  const Tensor3 b = random_init(x, 0.04, 9, false);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(b.data()[i] - 0.5 == doctest::Approx(2.0 * (a.data()[i] - 0.5)).epsilon(1e-12));
    CHECK(std::abs(a.data()[i] - 0.5) <= 0.02);
  }
  CHECK(random_init(x, 0.0, 9) == x);
}

TEST_CASE("projection") {
  Tensor3 x(1, 1, 4);
  Tensor3 adv(1, 1, 4);
  const double xs[] = {0.0, 0.5, 1.0, 0.5};
  const double as[] = {-0.3, 0.7, 1.2, 0.45};
  for (int i = 0; i < 4; ++i) {
    x.at(0, 0, i) = xs[i];
    adv.at(0, 0, i) = as[i];
  }
  const Tensor3 p = project_linf(adv, x, 0.1);
  CHECK(p.at(0, 0, 0) == 0.0);
  CHECK(p.at(0, 0, 1) == doctest::Approx(0.6));
  CHECK(p.at(0, 0, 2) == 1.0);
  CHECK(p.at(0, 0, 3) == 0.45);
  const Tensor3 q = project_linf(adv, x, 0.1, false);
  CHECK(q.at(0, 0, 0) == doctest::Approx(-0.1));
  CHECK(q.at(0, 0, 2) == doctest::Approx(1.1));
}

TEST_CASE("fgsm takes one signed step of size epsilon") {
  std::mt19937_64 rng(7);
  const Tensor3 x = random_image(rng, 3, 16, 16, 0.2, 0.8);
  const Tensor3 adv = fgsm(toy(), x, stripes(16, 16), 4.0 / 255);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(adv.data()[i] - x.data()[i]);
    CHECK((d == doctest::Approx(4.0 / 255).epsilon(1e-9) || d == 0.0));
  }
}

TEST_CASE("fgsm on a model with constant logits changes nothing") {
  nn::Conv2d conv = nn::Conv2d::make(3, 5, 1, 1, 0);
  std::fill(conv.weight.begin(), conv.weight.end(), 0.0);
  conv.bias = {0.1, 0.2, 0.3, 0.4, 0.5};
  nn::Network net("flat", {{"logits", conv}});
  adapters::ModelInfo info{"flat", "flat", "constant", true, 5, {}, {}};
  adapters::ModelAdapter m(info, adapters::InputSpec{}, std::move(net));
  std::mt19937_64 rng(8);
  const Tensor3 x = random_image(rng, 3, 8, 8);
  CHECK(fgsm(m, x, LabelMap(8, 8, 1), 8.0 / 255) == x);
}

TEST_CASE("config validation") {
  const auto bad = [](auto mutate) {
    AttackConfig cfg;
    mutate(cfg);
    try {
      cfg.validate();
    } catch (const Error& e) {
      return e.kind() == ErrorKind::config;
    }
    return false;
  };
  CHECK_NOTHROW(AttackConfig{}.validate());
  CHECK(bad([](AttackConfig& c) { c.epsilon = -0.1; }));
  CHECK(bad([](AttackConfig& c) { c.alpha = 0.0; }));
  CHECK(bad([](AttackConfig& c) { c.alpha = 1.0; }));
  CHECK(bad([](AttackConfig& c) { c.iterations = -1; }));
  CHECK(bad([](AttackConfig& c) { c.tau = 1.0; }));
  CHECK(bad([](AttackConfig& c) { c.tiling.tile_rows = 0; }));
  AttackConfig zero;
  zero.epsilon = 0.0;
  CHECK_NOTHROW(zero.validate());
}

TEST_CASE("loss modes") {
  for (const auto& m : {LossMode::dynamic(), LossMode::external_only(), LossMode::internal_only(),
                        LossMode::ex_plus_scaled_in(0.5)}) {
    CHECK(LossMode::parse(m.name()) == m);
  }
  CHECK(LossMode::ex_plus_scaled_in(0.1).name() == "const:0.1");
  const auto w = LossMode::dynamic().weights(5, 20);
  CHECK(w.external == 0.25);
  CHECK(w.internal == 0.75);
  CHECK(LossMode::external_only().weights(3, 20).internal == 0.0);
  CHECK(LossMode::internal_only().weights(3, 20).external == 0.0);
  CHECK(LossMode::ex_plus_scaled_in(0.5).weights(3, 20).internal == 0.5);
  CHECK_THROWS_AS(LossMode::parse("sometimes"), Error);
}

TEST_CASE("attack registry") {
  const auto names = registered_attacks();
  for (const char* n : {"fgsm", "pgd", "fspgd"}) CHECK(std::find(names.begin(), names.end(), n) != names.end());
  CHECK(make_attack("fspgd")->needs_labels() == false);
  CHECK(make_attack("pgd")->needs_labels());
  try {
    make_attack("deepfool");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
    CHECK(std::string(e.what()).find("fspgd") != std::string::npos);
  }

  struct Identity : Attack {
    std::string name() const override { return "identity"; }
    bool needs_labels() const override { return false; }
    AttackTrace run(const adapters::ModelAdapter&, const Tensor3& x, const LabelMap*,
                    const AttackConfig&) const override {
      AttackTrace t;
      t.attack = "identity";
      t.adversarial = x;
      return t;
    }
  };
  register_attack("identity", [] { return std::make_unique<Identity>(); });
  const Tensor3 x(3, 8, 8, 0.25);
  CHECK(make_attack("identity")->run(toy(), x, nullptr, {}).adversarial == x);
}

TEST_CASE("pixel-space gradient of the combined loss matches finite differences") {
  std::mt19937_64 rng(9);
  const auto& m = toy();
  const double h = 1e-5;
  int cases = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor3 x = random_image(rng, 3, 8, 8, 0.1, 0.9);
    const Tensor3 xa = project_linf(random_init(x, 8.0 / 255, static_cast<std::uint64_t>(trial)), x, 8.0 / 255);
    const std::string layer = trial % 2 ? "conv2" : "conv3";
    const simcore::FeatureSimilarity sim(m.forward_with_features(x, layer).features, 0.5);
    const auto w = LossMode::dynamic().weights(trial % 20, 20);
    const auto objective = [&](const Tensor3& in) {
      return sim.evaluate(m.forward_with_features(in, layer).features, w).objective;
    };
    const Tensor3 g = m.input_gradient(
        xa,
        [&](const Tensor3&, const FeatureMap* f) {
          adapters::LossValue v;
          v.value = sim.evaluate(*f, w, &v.d_features).objective;
          return v;
        },
        layer);
    double gmax = 0.0;
    for (double v : g.values()) gmax = std::max(gmax, std::abs(v));
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (int k = 0; k < 10; ++k) {
      const std::size_t i = pick(rng);
      Tensor3 up = xa, down = xa;
      up.data()[i] += h;
      down.data()[i] -= h;
      const double fd = (objective(up) - objective(down)) / (2 * h);
      CAPTURE(trial);
      CHECK(std::abs(fd - g.data()[i]) <= 1e-3 * std::max({std::abs(fd), std::abs(g.data()[i]), 1e-3 * gmax}));
    }
    ++cases;
  }
  CHECK(cases >= 20);
}

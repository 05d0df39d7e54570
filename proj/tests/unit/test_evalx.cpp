#include <doctest.h>

#include <random>

#include "segattack/datax.hpp"
#include "segattack/error.hpp"
#include "segattack/evalx.hpp"
#include "segattack/simcore.hpp"
#include "test_util.hpp"

using namespace segattack;
using namespace segattack::evalx;

namespace {

LabelMap labels(int h, int w, std::vector<std::uint8_t> v) { return LabelMap(h, w, std::move(v)); }

std::vector<Sample> tiny_set(int n, int size) {
  datax::SynthSpec spec = datax::SynthSpec::desk(n, 5);
  spec.height = size;
  spec.width = size;
  spec.min_radius = 2;
  spec.max_radius = 3;
  for (auto& c : spec.classes) {
    c.min_instances = 1;
    c.max_instances = 1;
  }
  spec.classes[0].min_instances = 2;
  spec.classes[0].max_instances = 2;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    auto s = datax::synthesize(spec, i);
    out.push_back({"s" + std::to_string(i), std::move(s.image), std::move(s.labels)});
  }
  return out;
}

AttackSpec fspgd_spec(int iterations, double eps = 8.0 / 255) {
  AttackSpec a{"fspgd", {}, "fspgd"};
  a.config.iterations = iterations;
  a.config.epsilon = eps;
  a.config.alpha = eps > 0 ? eps / 4 : 2.0 / 255;
  return a;
}

}  // namespace

TEST_CASE("hand-computed 2x2 mIoU") {
  const auto gt = labels(2, 2, {0, 0, 1, 1});
  const auto pred = labels(2, 2, {0, 1, 1, 1});
  const auto r = miou(confusion(pred, gt, 2));
  // IoU(0) = 1/2, IoU(1) = 2/3.
  CHECK(r.miou == 7.0 / 12.0);
  CHECK(*r.per_class_iou[0] == 0.5);
  CHECK(r.valid_pixels == 4);
  CHECK(miou(confusion(gt, gt, 2)).miou == 1.0);
}

TEST_CASE("mIoU ignores unlabeled pixels and empty classes") {
  const auto gt = labels(1, 4, {0, 255, 1, 1});
  const auto pred = labels(1, 4, {0, 2, 1, 1});
  const auto r = miou(confusion(pred, gt, 3));
  CHECK(r.valid_pixels == 3);
  CHECK_FALSE(r.per_class_iou[2].has_value());
  CHECK(r.miou == 1.0);
  CHECK(r.aggregation == "global");

  try {
    miou(ConfusionMatrix(3));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::undefined_metric);
  }
  CHECK_THROWS_AS(confusion(pred, labels(1, 4, {0, 0, 7, 0}), 3), Error);
}

TEST_CASE("mIoU is invariant to relabeling classes and reordering pixels") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<std::uint8_t> g(64), p(64);
  for (std::size_t i = 0; i < 64; ++i) {
    g[i] = static_cast<std::uint8_t>(cls(rng));
    p[i] = static_cast<std::uint8_t>(rng() % 3 == 0 ? cls(rng) : g[i]);
  }
  const double base = miou(confusion(labels(8, 8, p), labels(8, 8, g), 4)).miou;

  const std::uint8_t perm[] = {2, 0, 3, 1};
  auto g2 = g, p2 = p;
  for (auto& v : g2) v = perm[v];
  for (auto& v : p2) v = perm[v];
  CHECK(miou(confusion(labels(8, 8, p2), labels(8, 8, g2), 4)).miou == doctest::Approx(base).epsilon(1e-15));

  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto g3 = g, p3 = p;
  for (std::size_t i = 0; i < 64; ++i) {
    g3[i] = g[order[i]];
    p3[i] = p[order[i]];
  }
  CHECK(miou(confusion(labels(8, 8, p3), labels(8, 8, g3), 4)).miou == base);
}

TEST_CASE("confusion accumulates across images") {
  ConfusionMatrix c(2);
  accumulate(c, labels(1, 2, {0, 1}), labels(1, 2, {0, 0}));
  accumulate(c, labels(1, 2, {1, 1}), labels(1, 2, {1, 1}));
  CHECK(c.at(0, 0) == 1);
  CHECK(c.at(0, 1) == 1);
  CHECK(c.at(1, 1) == 2);
  CHECK(c.total() == 4);
}

TEST_CASE("an epsilon-zero attack reproduces the clean row") {
  const auto a = adapters::load_model("toy-cnn-a", {}, 2);
  const auto b = adapters::load_model("toy-cnn-b", {}, 3);
  const auto data = tiny_set(3, 24);
  const auto m = run_transfer({&a}, {&a, &b}, {fspgd_spec(3, 0.0)}, data);
  REQUIRE(m.rows.size() == 2);
  for (std::size_t t = 0; t < 2; ++t) {
    REQUIRE(m.rows[1].cells[t].ok);
    CHECK(std::abs(m.rows[1].cells[t].miou - m.rows[0].cells[t].miou) <= 1e-6);
  }
}

TEST_CASE("transfer results do not depend on the worker count") {
  const auto a = adapters::load_model("toy-cnn-a", {}, 2);
  const auto b = adapters::load_model("toy-cnn-b", {}, 3);
  const auto data = tiny_set(5, 24);
  AttackSpec pgd{"pgd", {}, "pgd"};
  pgd.config.iterations = 2;
  TransferOptions one, three;
  three.workers = 3;
  const auto m1 = run_transfer({&a}, {&a, &b}, {pgd, fspgd_spec(2)}, data, one);
  const auto m3 = run_transfer({&a}, {&a, &b}, {pgd, fspgd_spec(2)}, data, three);
  CHECK(m1.to_json() == m3.to_json());
  CHECK(m1.rows.size() == 3);
  CHECK(m1.rows[0].attack == "clean");
  CHECK(m1.cell("fspgd", "toy-cnn-b") != nullptr);
  CHECK(m1.cell("fspgd", "toy-cnn-b")->config_hash.size() == 64);
  CHECK(m1.cell("fspgd", "toy-cnn-b")->config_hash != m1.cell("pgd", "toy-cnn-b")->config_hash);
  const std::string table = m1.render_table();
  CHECK(table.find("toy-cnn-b") != std::string::npos);
  CHECK(table.find("clean") != std::string::npos);
}

TEST_CASE("a failing target marks only its own cells") {
  const auto a = adapters::load_model("toy-cnn-a", {}, 2);
  const auto b = adapters::load_model("toy-cnn-b", {}, 3);
  // 20 is a multiple of 4 but not of 8.
  const auto data = tiny_set(2, 20);
  const auto m = run_transfer({&a}, {&a, &b}, {fspgd_spec(1)}, data);
  CHECK(m.cell("fspgd", "toy-cnn-a")->ok);
  CHECK_FALSE(m.cell("fspgd", "toy-cnn-b")->ok);
  CHECK_FALSE(m.cell("fspgd", "toy-cnn-b")->error.empty());
  CHECK(m.failed_cells() == 2);
  CHECK(m.render_table().find("ERR") != std::string::npos);
}

TEST_CASE("sweep tables") {
  const auto a = adapters::load_model("toy-cnn-a", {}, 2);
  const auto b = adapters::load_model("toy-cnn-b", {}, 3);
  const auto data = tiny_set(1, 24);
  const auto tau_grid = default_grid(SweepKind::tau, a);
  CHECK(tau_grid == std::vector<std::string>{"cos(pi/6)", "cos(pi/4)", "cos(pi/3)"});
  const auto t = sweep(SweepKind::tau, tau_grid, fspgd_spec(1), a, {&b}, data);
  REQUIRE(t.matrix.rows.size() == 4);
  CHECK(t.matrix.rows[1].config["config"]["tau"].get<double>() == doctest::Approx(std::cos(std::numbers::pi / 6)));
  CHECK(t.matrix.rows[3].config["config"]["tau"].get<double>() == doctest::Approx(0.5));

  const auto lam_grid = default_grid(SweepKind::lambda_mode, a);
  CHECK(lam_grid.size() == 6);
  const auto l = sweep(SweepKind::lambda_mode, lam_grid, fspgd_spec(1), a, {&b}, data);
  REQUIRE(l.matrix.rows.size() == 7);
  CHECK(l.matrix.rows.back().label == "lambda_t L_ex + (1-lambda_t) L_in");
  CHECK(l.matrix.rows[1].label == "L_ex");
  CHECK(l.matrix.rows[2].label == "L_in");
  CHECK(l.to_json()["sweep"] == "lambda_mode");

  CHECK(default_grid(SweepKind::layer, a) == a.available_layers());
  CHECK(parse_sweep_kind("tau") == SweepKind::tau);
  CHECK_THROWS_AS(parse_sweep_kind("epsilon"), Error);
}

TEST_CASE("similarity maps") {
  std::mt19937_64 rng(3);
  const auto f = testutil::random_features(rng, 4, 5, 6);
  const auto m = similarity_map(f, 2, 3);
  CHECK(m.height == 5);
  CHECK(m.width == 6);
  CHECK(m.at(2, 3) == doctest::Approx(1.0));
  const auto s = simcore::gram(f);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 6; ++c)
      CHECK(m.at(r, c) == doctest::Approx(s.at(2 * 6 + 3, static_cast<std::size_t>(r * 6 + c))).epsilon(1e-12));
  try {
    similarity_map(f, 5, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::index);
  }
  // Image pixels map onto the feature grid by nearest neighbour.
  const double mean = region_mean(m, {0, 1}, 10, 12);
  CHECK(mean == doctest::Approx(m.at(0, 0)));
}

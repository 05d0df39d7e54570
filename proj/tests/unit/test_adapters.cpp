#include <doctest.h>

#include <filesystem>
#include <random>

#include "segattack/adapters.hpp"
#include "segattack/error.hpp"
#include "segattack/nn/cross_entropy.hpp"
#include "segattack/simcore.hpp"
#include "test_util.hpp"

using namespace segattack;
using adapters::ModelAdapter;
using testutil::random_image;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::invalid_input;
}

// d/dx of sum_c sum_p w[c,p] * logits[c,p]
Tensor3 linear_gradient(const ModelAdapter& m, const Tensor3& x, const Tensor3& w, double* value) {
  return m.input_gradient(
      x,
      [&](const Tensor3& logits, const FeatureMap*) {
        adapters::LossValue v;
        for (std::size_t i = 0; i < logits.size(); ++i) v.value += w.data()[i] * logits.data()[i];
        v.d_logits = w;
        return v;
      },
      {}, value);
}

double linear_value(const ModelAdapter& m, const Tensor3& x, const Tensor3& w) {
  const Tensor3 logits = m.forward(x);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += w.data()[i] * logits.data()[i];
  return s;
}

}  // namespace

TEST_CASE("bundled toy models") {
  const auto a = adapters::load_model("toy-cnn-a");
  const auto b = adapters::load_model("toy-cnn-b");
  CHECK(a.available_layers().size() >= 3);
  CHECK(b.available_layers().size() >= 3);
  CHECK(a.num_classes() == adapters::kToyClasses);
  CHECK(a.network().layers().size() != b.network().layers().size());
  CHECK(a.recommended_layer() == "conv3.pre");
  CHECK(b.recommended_layer() == "conv4.pre");
  CHECK(a.checksum() == "init-seed:0");
  for (const auto& l : a.available_layers()) CHECK_NOTHROW(a.layer_index(l));
}

TEST_CASE("shapes of logits and captured features") {
  const auto a = adapters::load_model("toy-cnn-a", {}, 3);
  std::mt19937_64 rng(1);
  const Tensor3 x = random_image(rng, 3, 64, 64);
  const auto r = a.forward_with_features(x, "conv3");
  CHECK(r.logits.channels() == 5);
  CHECK(r.logits.height() == 64);
  CHECK(r.logits.width() == 64);
  CHECK(r.features.pixels() == 256);
  CHECK(r.features.height() == 16);

  const auto b = adapters::load_model("toy-cnn-b", {}, 3);
  const auto rb = b.forward_with_features(x, "conv6");
  CHECK(rb.logits.height() == 64);
  CHECK(rb.features.height() == 8);
}

TEST_CASE("feature capture leaves the forward pass unchanged") {
  std::mt19937_64 rng(2);
  const Tensor3 x = random_image(rng, 3, 32, 32);
  for (const char* id : {"toy-cnn-a", "toy-cnn-b"}) {
    const auto m = adapters::load_model(id, {}, 9);
    const Tensor3 plain = m.forward(x);
    for (const auto& l : m.available_layers()) CHECK(m.forward_with_features(x, l).logits == plain);
  }
}

TEST_CASE("initialization is deterministic in the seed") {
  std::mt19937_64 rng(3);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  CHECK(adapters::load_model("toy-cnn-a", {}, 4).forward(x) == adapters::load_model("toy-cnn-a", {}, 4).forward(x));
  CHECK_FALSE(adapters::load_model("toy-cnn-a", {}, 4).forward(x) ==
              adapters::load_model("toy-cnn-a", {}, 5).forward(x));
}

TEST_CASE("registry and load errors") {
  CHECK(kind_of([] { adapters::load_model("resnet9000"); }) == ErrorKind::adapter);
  CHECK(kind_of([] { adapters::load_model("pspnet-r50"); }) == ErrorKind::io);
  CHECK(kind_of([] { adapters::load_model("toy-cnn-a", std::filesystem::path("/nonexistent/w.bin")); }) ==
        ErrorKind::io);
  const auto a = adapters::load_model("toy-cnn-a");
  CHECK(kind_of([&] { a.layer_index("conv9"); }) == ErrorKind::adapter);
  CHECK(kind_of([&] { a.forward(Tensor3(1, 8, 8)); }) == ErrorKind::shape);
  CHECK(kind_of([&] { a.forward(Tensor3(3, 10, 8)); }) == ErrorKind::shape);
  Tensor3 nan(3, 8, 8);
  nan.at(1, 2, 3) = std::nan("");
  CHECK(kind_of([&] { a.forward(nan); }) == ErrorKind::invalid_input);

  bool recommended_everywhere = true;
  for (const auto& m : adapters::list_models()) {
    if (!m.layers.empty() && m.recommended_layer.empty()) recommended_everywhere = false;
  }
  CHECK(recommended_everywhere);
  const auto r50 = adapters::layers_for("resnet50");
  CHECK(std::any_of(r50.begin(), r50.end(), [](const auto& e) { return e.recommended && e.layer_id == "conv3_x.2"; }));
}

TEST_CASE("checkpoints round-trip and reject other architectures") {
  const auto dir = std::filesystem::temp_directory_path() / "segattack_unit_ckpt";
  std::filesystem::create_directories(dir);
  const auto a = adapters::load_model("toy-cnn-a", {}, 21);
  a.network().save(dir / "a.bin");
  const auto back = adapters::load_model("toy-cnn-a", dir / "a.bin");
  std::mt19937_64 rng(4);
  const Tensor3 x = random_image(rng, 3, 16, 16);
  CHECK(back.forward(x) == a.forward(x));
  CHECK(back.checksum().size() == 64);
  CHECK(kind_of([&] { adapters::load_model("toy-cnn-b", dir / "a.bin"); }) == ErrorKind::load);
  std::filesystem::remove_all(dir);
}

TEST_CASE("input gradient of a linear functional of logits matches finite differences") {
  std::mt19937_64 rng(5);
  const double h = 1e-5;
  for (const char* id : {"toy-cnn-a", "toy-cnn-b"}) {
    const auto m = adapters::load_model(id, {}, 6);
    const Tensor3 x = random_image(rng, 3, 8, 8, 0.1, 0.9);
    const Tensor3 w = random_image(rng, 5, 8, 8, -1.0, 1.0);
    double value = 0.0;
    const Tensor3 g = linear_gradient(m, x, w, &value);
    CHECK(value == doctest::Approx(linear_value(m, x, w)).epsilon(1e-12));
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    double gmax = 0.0;
    for (double v : g.values()) gmax = std::max(gmax, std::abs(v));
    for (int k = 0; k < 40; ++k) {
      const std::size_t i = pick(rng);
      Tensor3 up = x, down = x;
      up.data()[i] += h;
      down.data()[i] -= h;
      const double fd = (linear_value(m, up, w) - linear_value(m, down, w)) / (2 * h);
      CAPTURE(id);
      CAPTURE(i);
      CHECK(std::abs(fd - g.data()[i]) <= 1e-4 * std::max({std::abs(fd), std::abs(g.data()[i]), 1e-3 * gmax}));
    }
  }
}

TEST_CASE("pixel cross-entropy gradient matches finite differences") {
  std::mt19937_64 rng(6);
  Tensor3 logits = random_image(rng, 4, 3, 5, -2.0, 2.0);
  LabelMap y(3, 5);
  for (int i = 0; i < 15; ++i) y.values()[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i % 4);
  y.values()[7] = 255;
  Tensor3 g;
  nn::pixel_cross_entropy(logits, y, &g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double keep = logits.data()[i];
    logits.data()[i] = keep + h;
    const double up = nn::pixel_cross_entropy(logits, y);
    logits.data()[i] = keep - h;
    const double down = nn::pixel_cross_entropy(logits, y);
    logits.data()[i] = keep;
    CHECK(std::abs(g.data()[i] - (up - down) / (2 * h)) <= 1e-7);
  }
  // The ignored pixel gets no gradient.
  for (int c = 0; c < 4; ++c) CHECK(g.at(c, 1, 2) == 0.0);
}

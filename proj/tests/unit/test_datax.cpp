#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "segattack/datax.hpp"
#include "segattack/error.hpp"
#include "segattack/io/png.hpp"

using namespace segattack;
using namespace segattack::datax;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::invalid_input;
}

}  // namespace

TEST_CASE("synthesis is deterministic in spec and index") {
  const auto spec = SynthSpec::desk(4, 42);
  const auto a = synthesize(spec, 1);
  const auto b = synthesize(spec, 1);
  CHECK(a.image == b.image);
  CHECK(a.labels == b.labels);
  CHECK_FALSE(synthesize(spec, 2).labels == a.labels);
  CHECK_FALSE(synthesize(SynthSpec::desk(4, 43), 1).image == a.image);
}

TEST_CASE("desk images hold two or three separated instances of every class") {
  const auto spec = SynthSpec::desk(20, 7);
  for (int i = 0; i < 20; ++i) {
    const auto s = synthesize(spec, i);
    CHECK(s.image.height() == 64);
    CHECK(s.image.channels() == 3);
    for (double v : s.image.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    for (int c = 1; c <= 4; ++c) {
      const auto comps = connected_components(s.labels, c);
      CAPTURE(i);
      CAPTURE(c);
      CHECK(comps.size() >= 2);
      CHECK(comps.size() <= 3);
      for (std::size_t k = 1; k < comps.size(); ++k) CHECK(comps[k - 1].size() >= comps[k].size());
    }
  }
}

TEST_CASE("impossible placement is a generation error") {
  SynthSpec spec = SynthSpec::desk(1, 1);
  spec.height = 16;
  spec.width = 16;
  spec.min_radius = 6;
  spec.max_radius = 7;
  CHECK(kind_of([&] { synthesize(spec, 0); }) == ErrorKind::generation);
  spec = SynthSpec::desk(1, 1);
  spec.classes.clear();
  CHECK(kind_of([&] { spec.validate(); }) == ErrorKind::config);
}

TEST_CASE("images and masks round-trip through PNG") {
  TempDir dir("segattack_unit_png");
  const auto s = synthesize(SynthSpec::desk(1, 3), 0);
  write_image(dir.path / "i.png", s.image);
  write_mask(dir.path / "m.png", s.labels);
  CHECK(read_image(dir.path / "i.png") == quantize8(s.image));
  DatasetManifest m;
  m.num_classes = 5;
  CHECK(read_mask(dir.path / "m.png", m) == s.labels);
}

TEST_CASE("generated datasets load back identically") {
  TempDir dir("segattack_unit_synth");
  const auto spec = SynthSpec::desk(3, 9);
  const auto written = generate_synthetic(spec, dir.path);
  const auto loaded = load_manifest(dir.path);
  CHECK(loaded == written);
  CHECK(loaded.num_classes == 5);
  CHECK(loaded.pairs.size() == 3);
  const auto samples = load_samples(loaded, 2);
  REQUIRE(samples.size() == 2);
  CHECK(samples[1].labels == synthesize(spec, 1).labels);
  CHECK(samples[1].image == quantize8(synthesize(spec, 1).image));
}

TEST_CASE("unmatched stems are reported") {
  TempDir dir("segattack_unit_unmatched");
  generate_synthetic(SynthSpec::desk(2, 1), dir.path);
  fs::remove(dir.path / "manifest.json");
  fs::copy_file(dir.path / "images" / "img_0000.png", dir.path / "images" / "stray.png");
  try {
    load_manifest(dir.path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::manifest);
    CHECK(std::string(e.what()).find("stray") != std::string::npos);
  }
  CHECK(kind_of([] { load_manifest("/nonexistent/dataset"); }) == ErrorKind::manifest);
}

TEST_CASE("RGB masks map through the palette") {
  TempDir dir("segattack_unit_voc");
  fs::create_directories(dir.path / "images");
  fs::create_directories(dir.path / "masks");
  const auto pal = voc_palette();
  CHECK(pal.size() == 21);
  CHECK(pal[1] == Rgb{128, 0, 0});
  CHECK(pal[15] == Rgb{192, 128, 128});
  io::Raster mask{2, 1, 3, false, {pal[15][0], pal[15][1], pal[15][2], 224, 224, 192}};
  io::write_png(dir.path / "masks" / "a.png", mask);
  write_image(dir.path / "images" / "a.png", Tensor3(3, 1, 2, 0.5));
  const auto m = load_voc(dir.path);
  const auto labels = read_mask(m.pairs[0].mask, m);
  CHECK(labels.at(0, 0) == 15);
  CHECK(labels.at(0, 1) == 255);
}

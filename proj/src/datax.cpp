#include "segattack/datax.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "segattack/adapters.hpp"
#include "segattack/error.hpp"
#include "segattack/evalx.hpp"
#include "segattack/io/png.hpp"
#include "segattack/nn/cross_entropy.hpp"
#include "segattack/seeding.hpp"

namespace segattack::datax {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr Rgb kVocBoundary{224, 224, 192};

fs::path canonical_root(const fs::path& root) { return fs::weakly_canonical(fs::absolute(root)); }

std::map<std::string, fs::path> png_stems(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      out.emplace(entry.path().stem().string(), entry.path());
    }
  }
  return out;
}

json palette_json(const std::vector<Rgb>& palette) {
  json out = json::array();
  for (const auto& c : palette) out.push_back({c[0], c[1], c[2]});
  return out;
}

}  // namespace

std::vector<Rgb> voc_palette() {
  // Bit-interleaved colour map of the VOC devkit.
  std::vector<Rgb> out;
  for (int i = 0; i < 21; ++i) {
    int r = 0, g = 0, b = 0, c = i;
    for (int j = 0; j < 8; ++j) {
      r |= ((c >> 0) & 1) << (7 - j);
      g |= ((c >> 1) & 1) << (7 - j);
      b |= ((c >> 2) & 1) << (7 - j);
      c >>= 3;
    }
    out.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)});
  }
  return out;
}

std::vector<std::string> voc_class_names() {
  return {"background", "aeroplane", "bicycle", "bird",  "boat",        "bottle", "bus",
          "car",        "cat",       "chair",   "cow",   "diningtable", "dog",    "horse",
          "motorbike",  "person",    "pottedplant", "sheep", "sofa",    "train",  "tvmonitor"};
}

namespace {

DatasetManifest scan_dataset(const fs::path& root_in, bool infer_classes) {
  DatasetManifest m;
  m.root = canonical_root(root_in);
  const fs::path images = m.root / "images";
  const fs::path masks = m.root / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    fail(ErrorKind::manifest, m.root.string() + " needs images/ and masks/ subdirectories");
  }

  const fs::path meta_path = m.root / "manifest.json";
  if (fs::exists(meta_path)) {
    std::ifstream in(meta_path);
    json meta;
    try {
      meta = json::parse(in);
      m.num_classes = meta.value("num_classes", 0);
      m.ignore_index = meta.value("ignore_index", LabelMap::kDefaultIgnore);
      if (meta.contains("palette")) {
        for (const auto& c : meta.at("palette")) {
          m.palette.push_back({c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()});
        }
      }
      if (meta.contains("class_names")) m.class_names = meta.at("class_names").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      fail(ErrorKind::format, meta_path.string() + ": " + e.what());
    }
    if (m.num_classes < 1 || m.num_classes > 255) fail(ErrorKind::format, "num_classes must be in [1, 255]");
    if (!m.palette.empty() && static_cast<int>(m.palette.size()) != m.num_classes) {
      fail(ErrorKind::format, "palette has " + std::to_string(m.palette.size()) + " entries for " +
                                  std::to_string(m.num_classes) + " classes");
    }
    if (!m.class_names.empty() && static_cast<int>(m.class_names.size()) != m.num_classes) {
      fail(ErrorKind::format, "class_names disagrees with num_classes");
    }
  }

  const auto image_stems = png_stems(images);
  const auto mask_stems = png_stems(masks);
  std::vector<std::string> unmatched;
  for (const auto& [stem, path] : image_stems) {
    if (!mask_stems.count(stem)) unmatched.push_back("images/" + stem + ".png");
  }
  for (const auto& [stem, path] : mask_stems) {
    if (!image_stems.count(stem)) unmatched.push_back("masks/" + stem + ".png");
  }
  if (!unmatched.empty()) {
    std::string msg = "unmatched stems:";
    for (const auto& u : unmatched) msg += " " + u;
    fail(ErrorKind::manifest, msg);
  }

  for (const auto& [stem, path] : image_stems) {
    ImagePair p{stem, path, mask_stems.at(stem)};
    if (io::png_size(p.image) != io::png_size(p.mask)) {
      fail(ErrorKind::manifest, "image and mask sizes differ for '" + stem + "'");
    }
    m.pairs.push_back(std::move(p));
  }
  if (m.pairs.empty()) m.warnings.push_back("dataset at " + m.root.string() + " is empty");

  if (infer_classes && m.num_classes == 0 && !m.pairs.empty()) {
    // No manifest.json: infer the class count from the masks themselves.
    int top = -1;
    for (const auto& p : m.pairs) {
      const io::Raster r = io::read_png(p.mask);
      if (r.channels != 1) fail(ErrorKind::format, "colour masks need a palette in manifest.json");
      for (auto v : r.pixels) {
        if (v != m.ignore_index) top = std::max(top, static_cast<int>(v));
      }
    }
    m.num_classes = top + 1;
    m.warnings.push_back("no manifest.json; inferred num_classes = " + std::to_string(m.num_classes));
  }
  return m;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root) { return scan_dataset(root, true); }

DatasetManifest load_voc(const fs::path& root) {
  DatasetManifest m = scan_dataset(root, false);
  if (m.num_classes != 0 && m.num_classes != 21) fail(ErrorKind::format, "VOC layout has 21 classes");
  m.num_classes = 21;
  m.palette = voc_palette();
  m.class_names = voc_class_names();
  return m;
}

Tensor3 read_image(const fs::path& path) {
  const io::Raster r = io::read_png(path);
  if (r.indexed) fail(ErrorKind::format, path.string() + ": indexed-colour images are not supported as inputs");
  Tensor3 out(3, r.height, r.width);
  const std::size_t plane = out.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const std::uint8_t v = r.channels == 1 ? r.pixels[i] : r.pixels[i * 3 + static_cast<std::size_t>(c)];
      out.plane(c)[i] = static_cast<double>(v) / 255.0;
    }
  }
  return out;
}

LabelMap read_mask(const fs::path& path, const DatasetManifest& manifest) {
  const io::Raster r = io::read_png(path);
  std::vector<std::uint8_t> values(static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height));
  if (r.channels == 1) {
    values = r.pixels;
  } else {
    if (manifest.palette.empty()) fail(ErrorKind::format, path.string() + " is a colour mask but no palette is declared");
    const bool voc = manifest.palette == voc_palette();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Rgb c{r.pixels[i * 3], r.pixels[i * 3 + 1], r.pixels[i * 3 + 2]};
      const auto it = std::find(manifest.palette.begin(), manifest.palette.end(), c);
      if (it != manifest.palette.end()) {
        values[i] = static_cast<std::uint8_t>(it - manifest.palette.begin());
      } else if (voc && c == kVocBoundary) {
        values[i] = static_cast<std::uint8_t>(manifest.ignore_index);
      } else {
        fail(ErrorKind::format, path.string() + ": colour (" + std::to_string(c[0]) + "," + std::to_string(c[1]) +
                                    "," + std::to_string(c[2]) + ") is not in the palette");
      }
    }
  }
  LabelMap labels(r.height, r.width, std::move(values), manifest.ignore_index);
  try {
    labels.validate(manifest.num_classes);
  } catch (const Error& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  return labels;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, std::size_t limit) {
  std::vector<Sample> out;
  const std::size_t n = limit == 0 ? manifest.pairs.size() : std::min(limit, manifest.pairs.size());
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = manifest.pairs[i];
    out.push_back({p.stem, read_image(p.image), read_mask(p.mask, manifest)});
  }
  return out;
}

Tensor3 quantize8(const Tensor3& image) {
  Tensor3 out = image;
  for (double& v : out.values()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

void write_image(const fs::path& path, const Tensor3& image) {
  if (image.channels() != 3 && image.channels() != 1) fail(ErrorKind::format, "images need 1 or 3 channels");
  io::Raster r;
  r.width = image.width();
  r.height = image.height();
  r.channels = image.channels();
  r.pixels.resize(image.size());
  const std::size_t plane = image.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < image.channels(); ++c) {
      const double v = std::clamp(image.plane(c)[i], 0.0, 1.0);
      r.pixels[i * static_cast<std::size_t>(r.channels) + static_cast<std::size_t>(c)] =
          static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  io::write_png(path, r);
}

void write_mask(const fs::path& path, const LabelMap& labels) {
  io::Raster r;
  r.width = labels.width();
  r.height = labels.height();
  r.channels = 1;
  r.pixels.assign(labels.values().begin(), labels.values().end());
  io::write_png(path, r);
}

void write_manifest(const DatasetManifest& m) {
  json pairs = json::array();
  for (const auto& p : m.pairs) {
    pairs.push_back({{"stem", p.stem},
                     {"image", fs::relative(p.image, m.root).generic_string()},
                     {"mask", fs::relative(p.mask, m.root).generic_string()}});
  }
  json doc = {{"num_classes", m.num_classes},
              {"ignore_index", m.ignore_index},
              {"palette", palette_json(m.palette)},
              {"class_names", m.class_names},
              {"pairs", pairs}};
  fs::create_directories(m.root);
  std::ofstream out(m.root / "manifest.json");
  if (!out) fail(ErrorKind::io, "cannot write " + (m.root / "manifest.json").string());
  out << doc.dump(2) << '\n';
}

// ---- synthetic shapes -------------------------------------------------------

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::disc:
      return "disc";
    case ShapeKind::square:
      return "square";
    case ShapeKind::triangle:
      return "triangle";
    case ShapeKind::bar:
      return "bar";
  }
  return "disc";
}

ShapeKind parse_shape(const std::string& text) {
  for (ShapeKind k : {ShapeKind::disc, ShapeKind::square, ShapeKind::triangle, ShapeKind::bar}) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorKind::config, "unknown shape '" + text + "' (disc, square, triangle, bar)");
}

SynthSpec SynthSpec::desk(int num_images, std::uint64_t seed) {
  SynthSpec s;
  s.num_images = num_images;
  s.seed = seed;
  // One shared colour: classes differ only in shape, so a model has to use
  // spatial structure rather than a per-pixel colour lookup.
  s.classes = {
      {ShapeKind::disc, 1, 2, 3, {150, 120, 110}},
      {ShapeKind::square, 2, 2, 3, {150, 120, 110}},
      {ShapeKind::triangle, 3, 2, 3, {150, 120, 110}},
      {ShapeKind::bar, 4, 2, 3, {150, 120, 110}},
  };
  s.color_jitter = 0.05;
  s.pixel_noise = 0.0;
  s.background_texture = 0.1;
  return s;
}

void SynthSpec::validate() const {
  if (num_images < 0) fail(ErrorKind::config, "num_images must be >= 0");
  if (height < 8 || width < 8) fail(ErrorKind::config, "synthetic images must be at least 8x8");
  if (min_radius < 2 || max_radius < min_radius) fail(ErrorKind::config, "need 2 <= min_radius <= max_radius");
  if (2 * max_radius + 1 > std::min(height, width)) fail(ErrorKind::config, "shapes do not fit in the image");
  if (gap < 0) fail(ErrorKind::config, "gap must be >= 0");
  if (color_jitter < 0 || pixel_noise < 0 || background_texture < 0) {
    fail(ErrorKind::config, "noise amplitudes must be >= 0");
  }
  if (classes.empty()) fail(ErrorKind::config, "at least one shape class is required");
  std::set<int> ids;
  bool multi = false;
  for (const auto& c : classes) {
    if (c.class_id < 1 || c.class_id > 254) fail(ErrorKind::config, "shape class ids must be in [1, 254]");
    if (!ids.insert(c.class_id).second) fail(ErrorKind::config, "duplicate shape class id");
    if (c.min_instances < 0 || c.max_instances < c.min_instances) {
      fail(ErrorKind::config, "need 0 <= min_instances <= max_instances");
    }
    multi = multi || c.min_instances >= 2;
  }
  if (!multi) fail(ErrorKind::config, "at least one class needs min_instances >= 2");
}

namespace {

struct Placed {
  ShapeKind kind;
  int class_id;
  double cx, cy;
  int r;
  bool vertical;
  std::array<double, 3> color;
};

bool inside(const Placed& s, double px, double py) {
  const double dx = px - s.cx;
  const double dy = py - s.cy;
  const double r = s.r;
  switch (s.kind) {
    case ShapeKind::disc:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::square:
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case ShapeKind::triangle:
      return dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.5;
    case ShapeKind::bar: {
      const double half_short = std::max(1.5, 0.4 * r);
      return s.vertical ? (std::abs(dx) <= half_short && std::abs(dy) <= r)
                        : (std::abs(dx) <= r && std::abs(dy) <= half_short);
    }
  }
  return false;
}

bool overlaps(const Placed& a, const Placed& b, int gap) {
  const double reach = a.r + b.r + gap + 1;
  return std::abs(a.cx - b.cx) < reach && std::abs(a.cy - b.cy) < reach;
}

}  // namespace

SynthImage synthesize(const SynthSpec& spec, int index) {
  constexpr int kRestarts = 20;
  constexpr int kAttempts = 300;
  std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(index)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<std::pair<const ShapeClass*, int>> wanted;
  for (const auto& c : spec.classes) {
    std::uniform_int_distribution<int> count(c.min_instances, c.max_instances);
    wanted.emplace_back(&c, count(rng));
  }

  std::vector<Placed> placed;
  bool done = false;
  for (int restart = 0; restart < kRestarts && !done; ++restart) {
    placed.clear();
    done = true;
    for (const auto& [cls, n] : wanted) {
      for (int i = 0; i < n && done; ++i) {
        bool ok = false;
        for (int a = 0; a < kAttempts && !ok; ++a) {
          Placed s;
          s.kind = cls->kind;
          s.class_id = cls->class_id;
          s.r = std::uniform_int_distribution<int>(spec.min_radius, spec.max_radius)(rng);
          s.cx = std::uniform_int_distribution<int>(s.r, spec.width - 1 - s.r)(rng) + 0.5;
          s.cy = std::uniform_int_distribution<int>(s.r, spec.height - 1 - s.r)(rng) + 0.5;
          s.vertical = unit(rng) < 0.5;
          for (int c = 0; c < 3; ++c) {
            const double base = cls->color[static_cast<std::size_t>(c)] / 255.0;
            s.color[static_cast<std::size_t>(c)] = base + spec.color_jitter * (2.0 * unit(rng) - 1.0);
          }
          ok = std::none_of(placed.begin(), placed.end(), [&](const Placed& o) { return overlaps(s, o, spec.gap); });
          if (ok) placed.push_back(s);
        }
        done = ok;
      }
      if (!done) break;
    }
  }
  if (!done) {
    fail(ErrorKind::generation, "could not place all instances in image " + std::to_string(index) + " after " +
                                    std::to_string(kRestarts) + " restarts");
  }

  SynthImage out{Tensor3(3, spec.height, spec.width), LabelMap(spec.height, spec.width, 0)};

  // Background: a gray level plus a few random low-frequency waves per channel.
  const double level = 0.35 + 0.3 * unit(rng);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;
  for (auto& w : waves) {
    for (int k = 0; k < 3; ++k) {
      w.push_back({(unit(rng) * 2.0 - 1.0) * 0.25, (unit(rng) * 2.0 - 1.0) * 0.25,
                   unit(rng) * 2.0 * std::numbers::pi, spec.background_texture * (0.3 + 0.7 * unit(rng)) / 3.0});
    }
  }
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const Placed* owner = nullptr;
      for (const auto& s : placed) {
        if (inside(s, px, py)) {
          owner = &s;
          break;
        }
      }
      for (int c = 0; c < 3; ++c) {
        double v;
        if (owner != nullptr) {
          v = owner->color[static_cast<std::size_t>(c)];
        } else {
          v = level;
          for (const auto& w : waves[static_cast<std::size_t>(c)]) v += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
        }
        v += spec.pixel_noise * gauss(rng);
        out.image.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
      if (owner != nullptr) out.labels.at(y, x) = static_cast<std::uint8_t>(owner->class_id);
    }
  }
  return out;
}

DatasetManifest generate_synthetic(const SynthSpec& spec, const fs::path& out_root) {
  spec.validate();
  DatasetManifest m;
  fs::create_directories(out_root / "images");
  fs::create_directories(out_root / "masks");
  m.root = canonical_root(out_root);
  int top = 0;
  for (const auto& c : spec.classes) top = std::max(top, c.class_id);
  m.num_classes = top + 1;
  // Display palette for the masks; render colours may repeat across classes.
  const std::vector<Rgb> display = voc_palette();
  m.palette.assign(static_cast<std::size_t>(m.num_classes), Rgb{0, 0, 0});
  m.class_names.assign(static_cast<std::size_t>(m.num_classes), "unused");
  m.class_names[0] = "background";
  for (const auto& c : spec.classes) {
    m.palette[static_cast<std::size_t>(c.class_id)] = display[static_cast<std::size_t>(c.class_id) % display.size()];
    m.class_names[static_cast<std::size_t>(c.class_id)] = to_string(c.kind);
  }

  const int digits = std::max(4, static_cast<int>(std::to_string(std::max(spec.num_images - 1, 0)).size()));
  for (int i = 0; i < spec.num_images; ++i) {
    std::string num = std::to_string(i);
    num.insert(0, static_cast<std::size_t>(digits) - num.size(), '0');
    const std::string stem = spec.stem_prefix + "_" + num;
    const SynthImage img = synthesize(spec, i);
    ImagePair p{stem, m.root / "images" / (stem + ".png"), m.root / "masks" / (stem + ".png")};
    write_image(p.image, img.image);
    write_mask(p.mask, img.labels);
    m.pairs.push_back(std::move(p));
  }
  write_manifest(m);
  return m;
}

std::vector<std::vector<std::size_t>> connected_components(const LabelMap& labels, int class_id) {
  const int h = labels.height();
  const int w = labels.width();
  std::vector<int> comp(labels.size(), -1);
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (comp[start] != -1 || labels.values()[start] != class_id) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back();
    stack.push_back(start);
    comp[start] = id;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      out.back().push_back(p);
      const int y = static_cast<int>(p / static_cast<std::size_t>(w));
      const int x = static_cast<int>(p % static_cast<std::size_t>(w));
      const int ny[4] = {y - 1, y + 1, y, y};
      const int nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * static_cast<std::size_t>(w) + static_cast<std::size_t>(nx[k]);
        if (comp[q] == -1 && labels.values()[q] == class_id) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return out;
}

// ---- toy training -----------------------------------------------------------

TrainResult train_toy(const std::string& model_id, const DatasetManifest& train, int epochs, std::uint64_t seed,
                      const fs::path& weights_out, const TrainOptions& options, const DatasetManifest* eval) {
  if (epochs < 0) fail(ErrorKind::config, "epochs must be >= 0");
  if (options.batch_size < 1) fail(ErrorKind::config, "batch_size must be >= 1");
  if (!(options.learning_rate > 0)) fail(ErrorKind::config, "learning_rate must be > 0");
  adapters::ModelAdapter adapter = adapters::load_model(model_id, std::nullopt, seed);
  if (!adapter.info().bundled) fail(ErrorKind::config, "only bundled toy models can be trained");
  if (train.num_classes > adapter.num_classes()) {
    fail(ErrorKind::config, "dataset has more classes than " + model_id + " predicts");
  }
  const auto log = [&](const std::string& s) {
    if (options.log) options.log(s);
  };

  const std::vector<Sample> samples = load_samples(train);
  if (epochs > 0 && samples.empty()) fail(ErrorKind::training, "training set is empty");
  std::vector<Tensor3> inputs;
  inputs.reserve(samples.size());
  for (const auto& s : samples) inputs.push_back(adapter.preprocess(s.image));

  nn::Network& net = adapter.network();
  auto params = net.parameters();
  std::vector<std::vector<double>> m1(params.size()), m2(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m1[i].assign(params[i].size(), 0.0);
    m2[i].assign(params[i].size(), 0.0);
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kAdamEps = 1e-8;
  long step = 0;
  double last = 0.0;

  nn::ParamGrads grads = net.make_grads();
  std::vector<std::size_t> order(samples.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(derive_seed(seed, 1000003ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(options.batch_size));
      grads.zero();
      for (std::size_t j = b0; j < b1; ++j) {
        const std::size_t idx = order[j];
        nn::Activations acts;
        const Tensor3 logits = net.forward(inputs[idx], &acts);
        Tensor3 dlogits;
        const double loss = nn::pixel_cross_entropy(logits, samples[idx].labels, &dlogits);
        if (!std::isfinite(loss)) {
          fail(ErrorKind::training, "loss diverged at epoch " + std::to_string(epoch) + " (" + samples[idx].stem + ")");
        }
        epoch_loss += loss;
        net.backward(acts, &dlogits, {}, &grads);
      }
      ++step;
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      std::size_t gi = 0;
      for (std::size_t layer = 0; layer < grads.weight.size(); ++layer) {
        for (auto* g : {&grads.weight[layer], &grads.bias[layer]}) {
          if (g->empty()) continue;
          auto& p = params[gi];
          for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = (*g)[k] * inv;
            m1[gi][k] = kBeta1 * m1[gi][k] + (1.0 - kBeta1) * gk;
            m2[gi][k] = kBeta2 * m2[gi][k] + (1.0 - kBeta2) * gk * gk;
            p[k] -= options.learning_rate * (m1[gi][k] / c1) / (std::sqrt(m2[gi][k] / c2) + kAdamEps);
          }
          ++gi;
        }
      }
    }
    last = epoch_loss / static_cast<double>(samples.size());
    std::ostringstream msg;
    msg << model_id << " epoch " << (epoch + 1) << "/" << epochs << " loss " << last;
    log(msg.str());
  }

  TrainResult result;
  result.weights_path = weights_out;
  result.final_loss = last;
  if (weights_out.has_parent_path()) fs::create_directories(weights_out.parent_path());
  net.save(weights_out);
  if (eval != nullptr) {
    result.eval_miou = evalx::evaluate(adapter, load_samples(*eval)).miou;
    std::ostringstream msg;
    msg << model_id << " clean eval mIoU " << *result.eval_miou;
    log(msg.str());
  }
  return result;
}

}  // namespace segattack::datax

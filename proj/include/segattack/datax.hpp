#pragma once

// Image/mask datasets on disk and the seeded synthetic-shapes generator.
//
// Layout: <root>/images/<stem>.png (RGB), <root>/masks/<stem>.png (8-bit
// class ids, or RGB / indexed colour mapped through the palette), and an
// optional <root>/manifest.json with num_classes, ignore_index, palette and
// pairs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segattack/tensor.hpp"

namespace segattack::datax {

using Rgb = std::array<std::uint8_t, 3>;

struct ImagePair {
  std::string stem;
  std::filesystem::path image;
  std::filesystem::path mask;
  bool operator==(const ImagePair&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ImagePair> pairs;
  int num_classes = 0;
  int ignore_index = LabelMap::kDefaultIgnore;
  std::vector<Rgb> palette;  // class id -> colour; empty means none declared
  std::vector<std::string> class_names;
  std::vector<std::string> warnings;

  bool operator==(const DatasetManifest& o) const {
    return root == o.root && pairs == o.pairs && num_classes == o.num_classes && ignore_index == o.ignore_index &&
           palette == o.palette && class_names == o.class_names;
  }
};

struct Sample {
  std::string stem;
  Tensor3 image;  // 3 x H x W in [0,1]
  LabelMap labels;
};

// Pairs in sorted stem order. Unmatched stems raise a manifest error listing
// them; a palette whose size disagrees with num_classes raises a format error.
DatasetManifest load_manifest(const std::filesystem::path& root);

// The 21-entry Pascal VOC colour map (background + 20 objects) and names.
std::vector<Rgb> voc_palette();
std::vector<std::string> voc_class_names();

// A directory in the layout above whose masks use VOC colours or indices.
DatasetManifest load_voc(const std::filesystem::path& root);

// Reads up to `limit` pairs (0 = all).
std::vector<Sample> load_samples(const DatasetManifest& manifest, std::size_t limit = 0);

Tensor3 read_image(const std::filesystem::path& path);
LabelMap read_mask(const std::filesystem::path& path, const DatasetManifest& manifest);

// 8-bit quantization used for every saved image: round(v * 255) / 255.
Tensor3 quantize8(const Tensor3& image);
void write_image(const std::filesystem::path& path, const Tensor3& image);
void write_mask(const std::filesystem::path& path, const LabelMap& labels);

void write_manifest(const DatasetManifest& manifest);

// ---- synthetic shapes -------------------------------------------------------

enum class ShapeKind { disc, square, triangle, bar };

struct ShapeClass {
  ShapeKind kind = ShapeKind::disc;
  int class_id = 1;
  int min_instances = 2;
  int max_instances = 3;
  Rgb color{200, 60, 60};
};

struct SynthSpec {
  int num_images = 50;
  int height = 64;
  int width = 64;
  std::vector<ShapeClass> classes;
  // Shape half-extent range in pixels.
  int min_radius = 4;
  int max_radius = 7;
  // Minimum free pixels between instance bounding boxes.
  int gap = 1;
  // Per-instance colour jitter and per-pixel noise, both in [0,1] units.
  double color_jitter = 0.1;
  double pixel_noise = 0.04;
  // Amplitude of the smooth background texture.
  double background_texture = 0.25;
  std::uint64_t seed = 0;
  std::string stem_prefix = "img";

  // Four classes (disc, square, triangle, bar), 2-3 instances each.
  static SynthSpec desk(int num_images, std::uint64_t seed);

  void validate() const;
};

std::string to_string(ShapeKind kind);
ShapeKind parse_shape(const std::string& text);

struct SynthImage {
  Tensor3 image;
  LabelMap labels;
};

// One image, deterministic in (spec, index). Throws a generation error
// naming the index when placement fails after bounded retries.
SynthImage synthesize(const SynthSpec& spec, int index);

// Writes images, masks and manifest.json under out_root.
DatasetManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_root);

// 4-connected components of `class_id`, largest first, each a list of flat
// pixel indices.
std::vector<std::vector<std::size_t>> connected_components(const LabelMap& labels, int class_id);

// ---- toy training -----------------------------------------------------------

struct TrainOptions {
  double learning_rate = 3e-3;
  int batch_size = 8;
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  std::filesystem::path weights_path;
  double final_loss = 0.0;
  std::optional<double> eval_miou;
};

// Adam on pixel cross-entropy from the seeded initialization. Deterministic
// for a fixed seed. With eval set, the final clean mIoU on it is reported.
TrainResult train_toy(const std::string& model_id, const DatasetManifest& train, int epochs, std::uint64_t seed,
                      const std::filesystem::path& weights_out, const TrainOptions& options = {},
                      const DatasetManifest* eval = nullptr);

}  // namespace segattack::datax

#pragma once

// Run configuration: a TOML-style document of typed key/value pairs, tables
// and arrays of tables, resolved into RunConfig with every unknown key
// rejected.
//
//   seed = 7
//   [data]
//   root = "data/desk/eval"
//   [[sources]]
//   model = "toy-cnn-a"
//   weights = "models/toy-cnn-a.bin"
//   [[attacks]]
//   name = "fspgd"
//   tau = 0.5

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "segattack/evalx.hpp"

namespace segattack::config {

// Supported: comments, bare keys, basic strings with escapes, literal
// strings, integers, floats, booleans, single- or multi-line arrays of
// scalars, [table] and [[array-of-tables]] headers (no dotted keys, no inline
// tables, no dates). Errors carry the line number.
nlohmann::json parse_toml(std::string_view text);
nlohmann::json read_toml(const std::filesystem::path& path);

struct ModelRef {
  std::string model_id;
  std::optional<std::filesystem::path> weights;
};

// "id" or "id@weights/path".
ModelRef parse_model_ref(const std::string& text);

struct ReportOptions {
  bool quantized = true;
  bool save_images = true;
  bool save_traces = true;
};

struct SweepOptions {
  std::string kind;
  std::vector<std::string> grid;  // empty: the kind's default grid
};

struct SimmapOptions {
  std::optional<std::pair<int, int>> ref;  // feature coordinates (row, col)
  std::string image;                       // stem; empty = every image
  int scale = 4;
  std::size_t limit = 0;
};

struct SynthOptions {
  std::string preset = "desk";
  int train_images = 200;
  int eval_images = 50;
  int height = 64;
  int width = 64;
  int min_radius = 4;
  int max_radius = 7;
  double color_jitter = 0.05;
  double pixel_noise = 0.0;
  double background_texture = 0.1;
};

struct TrainConfig {
  std::vector<std::string> models{"toy-cnn-a", "toy-cnn-b"};
  int epochs = 30;
  double learning_rate = 3e-3;
  int batch_size = 8;
  std::filesystem::path data;      // empty: <data.root>/train
  std::filesystem::path eval;      // empty: <data.root>/eval
  std::filesystem::path out_dir = "models";
};

struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  std::filesystem::path out = "runs/latest";
  std::filesystem::path data_root;
  std::size_t data_limit = 0;
  // "manifest": images/ + masks/ with optional manifest.json; "voc": same
  // layout with the 21-class VOC palette.
  std::string data_format = "manifest";
  std::vector<ModelRef> sources;
  std::vector<ModelRef> targets;
  std::vector<evalx::AttackSpec> attacks;
  // Attack indices whose seed was given explicitly; others follow `seed`.
  std::vector<bool> attack_seed_explicit;
  ReportOptions report;
  SweepOptions sweep;
  SimmapOptions simmap;
  SynthOptions synth;
  TrainConfig train;

  // Dotted names of every parameter that took its default value.
  std::vector<std::string> defaulted;

  // Replaces `seed` and every attack seed not set explicitly.
  void set_seed(std::uint64_t s);

  // The fully resolved configuration; load_config(to_json()) reproduces it.
  nlohmann::json to_json() const;
};

// Throws a config error naming the first unknown or mistyped key.
RunConfig load_config(const nlohmann::json& doc);

// Builds an attack spec with defaults for every key missing from `table`.
evalx::AttackSpec attack_from_json(const nlohmann::json& table, std::uint64_t root_seed, bool* seed_explicit,
                                   std::vector<std::string>* defaulted, const std::string& prefix);

// Accepts plain numbers and fractions such as "8/255".
double parse_number(const std::string& text);

}  // namespace segattack::config

#pragma once

// Segmentation metrics and the experiment protocol built on them.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "segattack/adapters.hpp"
#include "segattack/attacker.hpp"
#include "segattack/datax.hpp"
#include "segattack/error.hpp"
#include "segattack/tensor.hpp"

namespace segattack::evalx {

using datax::Sample;

// counts[gt * n + pred]
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);

  int num_classes() const noexcept { return n_; }
  std::uint64_t at(int gt, int pred) const noexcept {
    return counts_[static_cast<std::size_t>(gt) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(pred)];
  }
  std::uint64_t& at(int gt, int pred) noexcept {
    return counts_[static_cast<std::size_t>(gt) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(pred)];
  }
  std::uint64_t total() const noexcept;
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_ = 0;
  std::vector<std::uint64_t> counts_;
};

// Pixels whose ground truth is ignore_index are skipped. A prediction outside
// [0, num_classes) counts as wrong for its gt class but lands in no column.
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes,
                          int ignore_index = LabelMap::kDefaultIgnore);
void accumulate(ConfusionMatrix& conf, const LabelMap& pred, const LabelMap& gt,
                int ignore_index = LabelMap::kDefaultIgnore);

struct EvalReport {
  // nullopt for classes with zero union.
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  std::uint64_t valid_pixels = 0;
  std::vector<std::uint64_t> true_positive;
  std::vector<std::uint64_t> false_positive;
  std::vector<std::uint64_t> false_negative;
  // Confusion accumulated over the whole set, then reduced once.
  std::string aggregation = "global";

  nlohmann::json to_json() const;
};

// Throws undefined_metric when every class has zero union.
EvalReport miou(const ConfusionMatrix& conf);

// Global mIoU of a model on a set of images.
EvalReport evaluate(const adapters::ModelAdapter& model, const std::vector<Sample>& samples);

// ---- transfer matrices --------------------------------------------------------

struct AttackSpec {
  std::string name;                  // registered attack
  attacker::AttackConfig config;
  std::string label;                 // row label; defaults to name
};

struct TransferOptions {
  int workers = 1;
  // Evaluate 8-bit-quantized adversarial images as well.
  bool quantized = true;
  // Receives every adversarial image (float) with its row/sample index.
  std::function<void(std::size_t row, std::size_t sample, const attacker::AttackTrace&)> on_trace;
  std::function<void(const std::string&)> log;
};

struct TransferCell {
  std::string target;
  bool ok = false;
  std::string error;
  std::optional<ErrorKind> error_kind;
  double miou = 0.0;
  std::optional<double> miou_quantized;
  std::optional<EvalReport> report;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct TransferRow {
  std::string source;  // empty for the clean row
  std::string attack;  // "clean" for the clean row
  std::string label;
  nlohmann::json config;
  std::vector<TransferCell> cells;  // one per target, target order
};

struct TransferMatrix {
  std::vector<std::string> targets;
  std::vector<nlohmann::json> target_info;
  std::vector<TransferRow> rows;  // rows[0] is the clean row
  std::size_t num_samples = 0;

  const TransferCell* cell(const std::string& row_label, const std::string& target) const;
  std::size_t succeeded_cells() const;
  std::size_t failed_cells() const;

  nlohmann::json to_json() const;
  // Plain-text table, clean row first, per-column minima over attack rows
  // marked with '*'.
  std::string render_table() const;
};

// For each (source, attack), adversarial images are generated once on the
// source and evaluated on every target. Per-image seeds are derived from the
// attack seed and the sample index, so results do not depend on `workers`.
// Cell failures are recorded in the cell and the run continues.
TransferMatrix run_transfer(const std::vector<const adapters::ModelAdapter*>& sources,
                            const std::vector<const adapters::ModelAdapter*>& targets,
                            const std::vector<AttackSpec>& attacks, const std::vector<Sample>& dataset,
                            const TransferOptions& options = {});

// SHA-256 over the canonical JSON dump.
std::string config_hash(const nlohmann::json& config);

nlohmann::json to_json(const attacker::AttackConfig& cfg);
nlohmann::json to_json(const attacker::AttackTrace& trace);
nlohmann::json model_json(const adapters::ModelAdapter& model);

// ---- ablation sweeps ----------------------------------------------------------

enum class SweepKind { tau, lambda_mode, layer };

std::string to_string(SweepKind kind);
SweepKind parse_sweep_kind(const std::string& text);

// {cos pi/6, cos pi/4, cos pi/3} for tau, {ex_only, in_only, const:1,
// const:0.5, const:0.1, dynamic} for lambda_mode, every advertised layer of
// the source for layer.
std::vector<std::string> default_grid(SweepKind kind, const adapters::ModelAdapter& source);

struct SweepTable {
  SweepKind kind = SweepKind::tau;
  std::vector<std::string> keys;
  TransferMatrix matrix;  // clean row, then one row per key

  nlohmann::json to_json() const;
  std::string render_table() const;
};

SweepTable sweep(SweepKind kind, const std::vector<std::string>& grid, const AttackSpec& base,
                 const adapters::ModelAdapter& source, const std::vector<const adapters::ModelAdapter*>& targets,
                 const std::vector<Sample>& dataset, const TransferOptions& options = {});

// ---- similarity maps ----------------------------------------------------------

struct SimilarityMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;  // row-major

  double at(int row, int col) const noexcept {
    return values[static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)];
  }
};

// map(p) = cos(f(ref), f(p)). Out-of-range ref raises an index error.
SimilarityMap similarity_map(const FeatureMap& f, int ref_row, int ref_col);

// Mean of the map over the input-resolution pixels `pixels` (flat indices on
// an image of width image_width), sampled nearest-neighbour at feature
// resolution.
double region_mean(const SimilarityMap& map, const std::vector<std::size_t>& pixels, int image_height,
                   int image_width);

// A reference pixel inside one instance and the pixels of another instance
// of the same class, both in image coordinates.
struct InstanceReference {
  int class_id = 0;
  int row = 0;
  int col = 0;
  std::vector<std::size_t> second;
};

// The first class (in id order, background excluded) with two or more
// instances: the pixel of its largest instance nearest that instance's
// centroid, and its second-largest instance.
std::optional<InstanceReference> two_instance_reference(const LabelMap& labels, int num_classes);

// Heat map in [-1,1] -> colour, nearest-neighbour upsampled by `scale`.
void write_heatmap(const std::filesystem::path& path, const std::vector<const SimilarityMap*>& panels, int scale);

// Matrix cells as coloured blocks (darker = lower mIoU), rows top to bottom.
void write_matrix_plot(const std::filesystem::path& path, const TransferMatrix& matrix);

}  // namespace segattack::evalx

#pragma once

// Uniform model interface used by the attacks and the evaluation harness:
// logits at input resolution, post-activation feature capture at a named
// layer, and gradients of an arbitrary scalar loss with respect to the input
// image. Mean/std preprocessing is internal; callers always work in [0,1]
// pixel space.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "segattack/nn/network.hpp"
#include "segattack/tensor.hpp"

namespace segattack::adapters {

struct InputSpec {
  int height = 64;
  int width = 64;
  int channels = 3;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.25, 0.25, 0.25};
  // Spatial sizes must be multiples of this.
  int size_multiple = 1;
  std::string preprocessing;
};

struct LayerRegistryEntry {
  std::string architecture;
  std::string layer_id;
  bool recommended = false;
  std::string note;
};

// Attack layers known for every registered architecture. Recommended entries
// exist for each of them.
const std::vector<LayerRegistryEntry>& layer_registry();
std::vector<LayerRegistryEntry> layers_for(std::string_view architecture);

struct ForwardResult {
  Tensor3 logits;
  FeatureMap features;
};

// What a scalar loss hands back: its value and its partial derivatives. An
// empty d_logits / d_features means no dependence on that output.
struct LossValue {
  double value = 0.0;
  Tensor3 d_logits;
  FeatureMap d_features;
};

using LossFunction = std::function<LossValue(const Tensor3& logits, const FeatureMap* features)>;

struct ModelInfo {
  std::string model_id;
  std::string architecture;
  std::string description;
  bool bundled = false;  // built in; weights optional
  int num_classes = 0;
  std::vector<std::string> layers;
  std::string recommended_layer;
};

class ModelAdapter {
 public:
  ModelAdapter(ModelInfo info, InputSpec spec, nn::Network network, std::string checksum = {});

  const std::string& model_id() const noexcept { return info_.model_id; }
  const std::string& architecture() const noexcept { return info_.architecture; }
  int num_classes() const noexcept { return info_.num_classes; }
  const InputSpec& input_spec() const noexcept { return spec_; }
  const std::vector<std::string>& available_layers() const noexcept { return info_.layers; }
  const std::string& recommended_layer() const noexcept { return info_.recommended_layer; }
  // SHA-256 of the weights file, or "init-seed:<n>" for seeded initialization.
  const std::string& checksum() const noexcept { return checksum_; }
  const ModelInfo& info() const noexcept { return info_; }

  const nn::Network& network() const noexcept { return network_; }
  nn::Network& network() noexcept { return network_; }

  // Logits, num_classes x H x W.
  Tensor3 forward(const Tensor3& x) const;

  // One pass yielding logits and the activation at `layer`.
  ForwardResult forward_with_features(const Tensor3& x, std::string_view layer) const;

  // d loss / d x. When `layer` is non-empty the loss also receives that
  // layer's features and may return a gradient for them. The loss value is
  // written to *value when non-null. Parameters are never modified.
  Tensor3 input_gradient(const Tensor3& x, const LossFunction& loss, std::string_view layer = {},
                         double* value = nullptr) const;

  // Throws adapter error listing the available layers.
  std::size_t layer_index(std::string_view layer) const;

  // Validates x and applies the per-channel mean/std; the network input.
  Tensor3 preprocess(const Tensor3& x) const;

 private:
  void check_input(const Tensor3& x) const;

  ModelInfo info_;
  InputSpec spec_;
  nn::Network network_;
  std::string checksum_;
};

std::vector<ModelInfo> list_models();

// Bundled toy models load without weights (seeded initialization). Full-scale
// ids need a checkpoint whose declared architecture matches.
ModelAdapter load_model(std::string_view model_id, const std::optional<std::filesystem::path>& weights = {},
                        std::uint64_t init_seed = 0);

// Network definitions of the bundled toys.
nn::Network build_toy_network(std::string_view model_id, int num_classes);

inline constexpr int kToyClasses = 5;

}  // namespace segattack::adapters

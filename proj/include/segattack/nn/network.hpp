#pragma once

// A small sequential convolutional network with an explicit backward pass.
// Enough to host the bundled toy segmentation models and any checkpoint that
// is a chain of convolutions, ReLUs and bilinear upsampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "segattack/tensor.hpp"

namespace segattack::nn {

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  std::vector<double> weight;  // out x in x kernel x kernel
  std::vector<double> bias;    // out

  static Conv2d make(int in, int out, int kernel, int stride, int padding, int dilation = 1);
  int out_size(int in_size) const noexcept {
    return (in_size + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  }
};

struct Relu {};

// align_corners = false, integer scale factor.
struct UpsampleBilinear {
  int scale = 2;
};

using Op = std::variant<Conv2d, Relu, UpsampleBilinear>;

struct Layer {
  std::string name;
  Op op;
};

// outputs[0] is the network input, outputs[i + 1] the output of layer i.
struct Activations {
  std::vector<Tensor3> outputs;
};

// Gradient added at the output of layer `layer_index`.
struct Injection {
  std::size_t layer_index = 0;
  const Tensor3* grad = nullptr;
};

// Same layout as the conv parameters; layers without parameters stay empty.
struct ParamGrads {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  void zero();
};

class Network {
 public:
  Network() = default;
  Network(std::string architecture, std::vector<Layer> layers);

  const std::string& architecture() const noexcept { return architecture_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t parameter_count() const;

  // He-normal weights, zero biases, deterministic in the seed.
  void initialize(std::uint64_t seed);

  Tensor3 forward(const Tensor3& x, Activations* acts = nullptr) const;

  // Returns d loss / d input. `top` (may be null) is the gradient at the
  // final output; injections add gradients at intermediate outputs. Parameter
  // gradients are accumulated into `grads` when non-null.
  Tensor3 backward(const Activations& acts, const Tensor3* top, std::span<const Injection> injections,
                   ParamGrads* grads) const;

  ParamGrads make_grads() const;

  // Every parameter tensor in layer order, weight before bias.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;

  void save(const std::filesystem::path& path) const;
  static Network load(const std::filesystem::path& path);

 private:
  std::string architecture_;
  std::vector<Layer> layers_;
};

}  // namespace segattack::nn

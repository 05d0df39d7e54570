#include "segattack/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "segattack/error.hpp"
#include "segattack/io/checksum.hpp"

namespace segattack::adapters {
namespace {

using nn::Conv2d;
using nn::Layer;
using nn::Relu;
using nn::UpsampleBilinear;

Layer conv(std::string name, int in, int out, int k, int stride, int pad, int dil = 1) {
  return Layer{std::move(name), Conv2d::make(in, out, k, stride, pad, dil)};
}
Layer relu(std::string name) { return Layer{std::move(name), Relu{}}; }
Layer upsample(std::string name, int scale) { return Layer{std::move(name), UpsampleBilinear{scale}}; }

constexpr std::array<double, 3> kImagenetMean{0.485, 0.456, 0.406};
constexpr std::array<double, 3> kImagenetStd{0.229, 0.224, 0.225};

struct ZooEntry {
  ModelInfo info;
  InputSpec spec;
};

InputSpec toy_spec(int multiple) {
  InputSpec s;
  s.size_multiple = multiple;
  s.preprocessing = "(x - 0.5) / 0.25 per channel";
  return s;
}

InputSpec full_scale_spec() {
  InputSpec s;
  s.height = 512;
  s.width = 512;
  s.mean = kImagenetMean;
  s.std = kImagenetStd;
  s.size_multiple = 8;
  s.preprocessing = "ImageNet mean/std per channel";
  return s;
}

std::vector<std::string> layer_ids(std::string_view arch) {
  std::vector<std::string> out;
  for (const auto& e : layer_registry()) {
    if (e.architecture == arch) out.push_back(e.layer_id);
  }
  return out;
}

std::string recommended_for(std::string_view arch) {
  for (const auto& e : layer_registry()) {
    if (e.architecture == arch && e.recommended) return e.layer_id;
  }
  return {};
}

ModelInfo make_info(std::string id, std::string arch, std::string description, bool bundled, int classes) {
  ModelInfo info;
  info.model_id = std::move(id);
  info.architecture = std::move(arch);
  info.description = std::move(description);
  info.bundled = bundled;
  info.num_classes = classes;
  info.layers = layer_ids(info.architecture);
  info.recommended_layer = recommended_for(info.architecture);
  return info;
}

const std::vector<ZooEntry>& zoo() {
  static const std::vector<ZooEntry> entries = [] {
    std::vector<ZooEntry> z;
    z.push_back({make_info("toy-cnn-a", "toy-cnn-a",
                           "5-conv encoder-decoder, output stride 4, dilated context conv", true, kToyClasses),
                 toy_spec(4)});
    z.push_back({make_info("toy-cnn-b", "toy-cnn-b",
                           "7-conv encoder-decoder, narrower stem, output stride 8", true, kToyClasses),
                 toy_spec(8)});
    const struct {
      const char* id;
      const char* arch;
      const char* description;
      int classes;
    } full[] = {
        {"pspnet-r50", "resnet50", "PSPNet, ResNet-50 encoder", 21},
        {"deeplabv3-r50", "resnet50", "DeepLabv3, ResNet-50 encoder", 21},
        {"pspnet-r101", "resnet101", "PSPNet, ResNet-101 encoder", 21},
        {"deeplabv3-r101", "resnet101", "DeepLabv3, ResNet-101 encoder", 21},
        {"fcn-vgg16", "vgg16", "FCN, VGG-16 encoder", 21},
        {"segformer-mit-b0", "mit-b0", "SegFormer, MiT-B0 encoder", 19},
        {"mask2former-swin-s", "swin-s", "Mask2Former, Swin-S encoder", 19},
    };
    for (const auto& f : full) {
      z.push_back({make_info(f.id, f.arch, f.description, false, f.classes), full_scale_spec()});
    }
    return z;
  }();
  return entries;
}

const ZooEntry& find_entry(std::string_view id) {
  for (const auto& e : zoo()) {
    if (e.info.model_id == id) return e;
  }
  std::ostringstream msg;
  msg << "unknown model id '" << id << "'; registered:";
  for (const auto& e : zoo()) msg << ' ' << e.info.model_id;
  fail(ErrorKind::adapter, msg.str());
}

bool same_structure(const nn::Network& a, const nn::Network& b) {
  if (a.layers().size() != b.layers().size()) return false;
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    const auto& la = a.layers()[i];
    const auto& lb = b.layers()[i];
    if (la.name != lb.name || la.op.index() != lb.op.index()) return false;
    if (const auto* ca = std::get_if<Conv2d>(&la.op)) {
      const auto& cb = std::get<Conv2d>(lb.op);
      if (ca->in_channels != cb.in_channels || ca->out_channels != cb.out_channels || ca->kernel != cb.kernel ||
          ca->stride != cb.stride || ca->padding != cb.padding || ca->dilation != cb.dilation) {
        return false;
      }
    }
    if (const auto* ua = std::get_if<UpsampleBilinear>(&la.op)) {
      if (ua->scale != std::get<UpsampleBilinear>(lb.op).scale) return false;
    }
  }
  return true;
}

int final_channels(const nn::Network& net) {
  for (auto it = net.layers().rbegin(); it != net.layers().rend(); ++it) {
    if (const auto* c = std::get_if<Conv2d>(&it->op)) return c->out_channels;
  }
  fail(ErrorKind::load, "checkpoint has no convolution");
}

}  // namespace

const std::vector<LayerRegistryEntry>& layer_registry() {
  static const std::vector<LayerRegistryEntry> entries = [] {
    std::vector<LayerRegistryEntry> r;
    // "convK" is the post-ReLU activation, "convK.pre" the convolution output
    // before it. The pre-activation keeps negative responses, which carry most
    // of the intra-class structure on the desk benchmark.
    for (int i = 1; i <= 4; ++i) {
      r.push_back({"toy-cnn-a", "conv" + std::to_string(i), false, "post-ReLU activation"});
      r.push_back({"toy-cnn-a", "conv" + std::to_string(i) + ".pre", i == 3,
                   i == 3 ? "stride-4 mid-encoder, pre-activation" : "pre-activation"});
    }
    for (int i = 1; i <= 6; ++i) {
      r.push_back({"toy-cnn-b", "conv" + std::to_string(i), false, "post-ReLU activation"});
      r.push_back({"toy-cnn-b", "conv" + std::to_string(i) + ".pre", i == 4,
                   i == 4 ? "stride-4 mid-encoder, pre-activation" : "pre-activation"});
    }
    // Block-level names follow the "<stage>.<block>" convention; "conv3_x.2"
    // is the second block of the conv3_x stage, captured post-activation.
    for (const char* arch : {"resnet50", "resnet101"}) {
      for (int b = 1; b <= 3; ++b) r.push_back({arch, "conv2_x." + std::to_string(b), false, ""});
      for (int b = 1; b <= 5; ++b) {
        r.push_back({arch, "conv3_x." + std::to_string(b), b == 2,
                     b == 2 ? "best transfer in the attack-layer study (3_2)" : ""});
      }
      for (int b = 1; b <= 2; ++b) r.push_back({arch, "conv4_x." + std::to_string(b), false, ""});
    }
    r.push_back({"mit-b0", "block1.layer1", true, "first layer of transformer block 1"});
    r.push_back({"mit-b0", "block1.layer2", false, ""});
    r.push_back({"mit-b0", "block2.layer1", false, ""});
    r.push_back({"swin-s", "stage1.layer1", false, ""});
    r.push_back({"swin-s", "stage2.layer1", true, "first layer of stage 2"});
    r.push_back({"swin-s", "stage3.layer1", false, ""});
    return r;
  }();
  return entries;
}

std::vector<LayerRegistryEntry> layers_for(std::string_view architecture) {
  std::vector<LayerRegistryEntry> out;
  for (const auto& e : layer_registry()) {
    if (e.architecture == architecture) out.push_back(e);
  }
  return out;
}

ModelAdapter::ModelAdapter(ModelInfo info, InputSpec spec, nn::Network network, std::string checksum)
    : info_(std::move(info)), spec_(std::move(spec)), network_(std::move(network)), checksum_(std::move(checksum)) {
  for (const auto& layer : info_.layers) {
    if (!network_.find(layer)) {
      fail(ErrorKind::adapter, "layer '" + layer + "' advertised by " + info_.model_id + " does not resolve");
    }
  }
  for (double s : spec_.std) {
    if (!(s > 0.0)) fail(ErrorKind::config, "preprocessing std must be positive");
  }
}

std::size_t ModelAdapter::layer_index(std::string_view layer) const {
  const bool listed = std::find(info_.layers.begin(), info_.layers.end(), layer) != info_.layers.end();
  const auto idx = network_.find(layer);
  if (!listed || !idx) {
    std::ostringstream msg;
    msg << "model " << info_.model_id << " has no capturable layer '" << layer << "'; available:";
    for (const auto& l : info_.layers) msg << ' ' << l;
    fail(ErrorKind::adapter, msg.str());
  }
  return *idx;
}

void ModelAdapter::check_input(const Tensor3& x) const {
  if (x.channels() != spec_.channels) {
    fail(ErrorKind::shape, info_.model_id + " expects " + std::to_string(spec_.channels) + " channels");
  }
  if (x.height() < 1 || x.width() < 1 || x.height() % spec_.size_multiple != 0 ||
      x.width() % spec_.size_multiple != 0) {
    fail(ErrorKind::shape, info_.model_id + " needs spatial sizes that are multiples of " +
                               std::to_string(spec_.size_multiple));
  }
  for (double v : x.values()) {
    if (!std::isfinite(v)) fail(ErrorKind::invalid_input, "input image contains a non-finite value");
  }
}

Tensor3 ModelAdapter::preprocess(const Tensor3& x) const {
  check_input(x);
  Tensor3 out(x.channels(), x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double mean = spec_.mean[ci % 3];
    const double inv = 1.0 / spec_.std[ci % 3];
    const double* src = x.plane(c);
    double* dst = out.plane(c);
    for (std::size_t i = 0; i < x.plane_size(); ++i) dst[i] = (src[i] - mean) * inv;
  }
  return out;
}

Tensor3 ModelAdapter::forward(const Tensor3& x) const { return network_.forward(preprocess(x)); }

ForwardResult ModelAdapter::forward_with_features(const Tensor3& x, std::string_view layer) const {
  const std::size_t idx = layer_index(layer);
  nn::Activations acts;
  ForwardResult out;
  out.logits = network_.forward(preprocess(x), &acts);
  out.features = FeatureMap::from_tensor(acts.outputs[idx + 1]);
  return out;
}

Tensor3 ModelAdapter::input_gradient(const Tensor3& x, const LossFunction& loss, std::string_view layer,
                                     double* value) const {
  std::optional<std::size_t> idx;
  if (!layer.empty()) idx = layer_index(layer);
  nn::Activations acts;
  const Tensor3 logits = network_.forward(preprocess(x), &acts);
  FeatureMap features;
  if (idx) features = FeatureMap::from_tensor(acts.outputs[*idx + 1]);

  LossValue lv = loss(logits, idx ? &features : nullptr);
  if (!std::isfinite(lv.value)) fail(ErrorKind::numeric, "loss is not finite (" + std::to_string(lv.value) + ")");
  if (value != nullptr) *value = lv.value;

  const Tensor3* top = lv.d_logits.empty() ? nullptr : &lv.d_logits;
  Tensor3 feature_grad;
  std::vector<nn::Injection> inject;
  if (!lv.d_features.empty()) {
    if (!idx) fail(ErrorKind::adapter, "loss returned a feature gradient but no layer was requested");
    if (!lv.d_features.same_shape(features)) fail(ErrorKind::shape, "feature gradient has the wrong shape");
    feature_grad = lv.d_features.to_tensor();
    inject.push_back({*idx, &feature_grad});
  }
  Tensor3 grad = network_.backward(acts, top, inject, nullptr);
  for (int c = 0; c < grad.channels(); ++c) {
    const double inv = 1.0 / spec_.std[static_cast<std::size_t>(c) % 3];
    double* g = grad.plane(c);
    for (std::size_t i = 0; i < grad.plane_size(); ++i) g[i] *= inv;
  }
  for (double v : grad.values()) {
    if (!std::isfinite(v)) fail(ErrorKind::numeric, "input gradient is not finite");
  }
  return grad;
}

std::vector<ModelInfo> list_models() {
  std::vector<ModelInfo> out;
  for (const auto& e : zoo()) out.push_back(e.info);
  return out;
}

nn::Network build_toy_network(std::string_view model_id, int num_classes) {
  if (model_id == "toy-cnn-a") {
    return nn::Network("toy-cnn-a", {
                                        conv("conv1.pre", 3, 16, 3, 1, 1),
                                        relu("conv1"),
                                        conv("conv2.pre", 16, 32, 3, 2, 1),
                                        relu("conv2"),
                                        conv("conv3.pre", 32, 32, 3, 2, 1),
                                        relu("conv3"),
                                        conv("conv4.pre", 32, 32, 3, 1, 2, 2),
                                        relu("conv4"),
                                        conv("classifier", 32, num_classes, 1, 1, 0),
                                        upsample("logits", 4),
                                    });
  }
  if (model_id == "toy-cnn-b") {
    return nn::Network("toy-cnn-b", {
                                        conv("conv1.pre", 3, 12, 3, 1, 1),
                                        relu("conv1"),
                                        conv("conv2.pre", 12, 24, 3, 2, 1),
                                        relu("conv2"),
                                        conv("conv3.pre", 24, 24, 3, 1, 1),
                                        relu("conv3"),
                                        conv("conv4.pre", 24, 48, 3, 2, 1),
                                        relu("conv4"),
                                        conv("conv5.pre", 48, 48, 3, 2, 1),
                                        relu("conv5"),
                                        conv("conv6.pre", 48, 48, 3, 1, 1),
                                        relu("conv6"),
                                        upsample("up", 2),
                                        conv("classifier", 48, num_classes, 3, 1, 1),
                                        upsample("logits", 4),
                                    });
  }
  fail(ErrorKind::adapter, "no bundled network named '" + std::string(model_id) + "'");
}

ModelAdapter load_model(std::string_view model_id, const std::optional<std::filesystem::path>& weights,
                        std::uint64_t init_seed) {
  const auto& entry = find_entry(model_id);
  if (entry.info.bundled) {
    nn::Network net = build_toy_network(model_id, entry.info.num_classes);
    if (!weights) {
      net.initialize(init_seed);
      return ModelAdapter(entry.info, entry.spec, std::move(net), "init-seed:" + std::to_string(init_seed));
    }
    if (!std::filesystem::exists(*weights)) fail(ErrorKind::io, "weights file not found: " + weights->string());
    nn::Network loaded = nn::Network::load(*weights);
    if (loaded.architecture() != entry.info.architecture || !same_structure(loaded, net)) {
      fail(ErrorKind::load, weights->string() + " holds a '" + loaded.architecture() + "' network, not " +
                                entry.info.architecture);
    }
    return ModelAdapter(entry.info, entry.spec, std::move(loaded), io::sha256_file(*weights));
  }
  if (!weights) {
    fail(ErrorKind::io, "model " + entry.info.model_id + " is full-scale and needs a weights file (none given)");
  }
  if (!std::filesystem::exists(*weights)) fail(ErrorKind::io, "weights file not found: " + weights->string());
  nn::Network loaded = nn::Network::load(*weights);
  if (loaded.architecture() != entry.info.architecture) {
    fail(ErrorKind::load, weights->string() + " holds a '" + loaded.architecture() + "' network, but " +
                              entry.info.model_id + " needs " + entry.info.architecture);
  }
  ModelInfo info = entry.info;
  info.num_classes = final_channels(loaded);
  std::erase_if(info.layers, [&](const std::string& l) { return !loaded.find(l); });
  if (std::find(info.layers.begin(), info.layers.end(), info.recommended_layer) == info.layers.end()) {
    info.recommended_layer = info.layers.empty() ? std::string{} : info.layers.front();
  }
  return ModelAdapter(std::move(info), entry.spec, std::move(loaded), io::sha256_file(*weights));
}

}  // namespace segattack::adapters

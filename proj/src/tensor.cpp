#include "segattack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "segattack/error.hpp"

namespace segattack {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::shape: return "shape";
    case ErrorKind::config: return "configuration";
    case ErrorKind::adapter: return "adapter";
    case ErrorKind::io: return "I/O";
    case ErrorKind::load: return "load";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::manifest: return "manifest";
    case ErrorKind::format: return "format";
    case ErrorKind::generation: return "generation";
    case ErrorKind::training: return "training";
    case ErrorKind::index: return "index";
    case ErrorKind::undefined_metric: return "undefined-metric";
  }
  return "unknown";
}

Tensor3::Tensor3(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) fail(ErrorKind::shape, "negative tensor dimension");
  data_.assign(static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
                   static_cast<std::size_t>(width),
               fill);
}

double max_abs_diff(const Tensor3& a, const Tensor3& b) {
  if (!a.same_shape(b)) fail(ErrorKind::shape, "max_abs_diff on tensors of different shape");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

FeatureMap::FeatureMap(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 1 || height < 1 || width < 1) {
    fail(ErrorKind::shape, "feature map needs at least one channel and one pixel");
  }
  values_.assign(static_cast<std::size_t>(channels) * pixels(), fill);
}

FeatureMap::FeatureMap(int channels, int height, int width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
  if (channels < 1 || height < 1 || width < 1) {
    fail(ErrorKind::shape, "feature map needs at least one channel and one pixel");
  }
  if (values_.size() != static_cast<std::size_t>(channels) * pixels()) {
    fail(ErrorKind::shape, "feature map value count does not match channels x pixels");
  }
}

FeatureMap FeatureMap::from_tensor(const Tensor3& t) {
  return FeatureMap(t.channels(), t.height(), t.width(),
                    std::vector<double>(t.values().begin(), t.values().end()));
}

Tensor3 FeatureMap::to_tensor() const {
  Tensor3 t(channels_, height_, width_);
  std::copy(values_.begin(), values_.end(), t.data());
  return t;
}

LabelMap::LabelMap(int height, int width, std::uint8_t fill, int ignore_index)
    : height_(height), width_(width), ignore_index_(ignore_index) {
  if (height < 0 || width < 0) fail(ErrorKind::shape, "negative label map dimension");
  values_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

LabelMap::LabelMap(int height, int width, std::vector<std::uint8_t> values, int ignore_index)
    : height_(height), width_(width), ignore_index_(ignore_index), values_(std::move(values)) {
  if (values_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    fail(ErrorKind::shape, "label map value count does not match height x width");
  }
}

void LabelMap::validate(int num_classes) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const int v = values_[i];
    if (v != ignore_index_ && (v < 0 || v >= num_classes)) {
      fail(ErrorKind::invalid_input, "label " + std::to_string(v) + " at pixel " + std::to_string(i) +
                                         " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

LabelMap argmax_labels(const Tensor3& logits, int ignore_index) {
  LabelMap out(logits.height(), logits.width(), 0, ignore_index);
  const std::size_t n = logits.plane_size();
  auto labels = out.values();
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double best_v = logits.plane(0)[i];
    for (int c = 1; c < logits.channels(); ++c) {
      const double v = logits.plane(c)[i];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace segattack

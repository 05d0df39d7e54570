#pragma once

// Value types shared by every module. All storage is channel-planar
// (C, H, W) and row-major within a plane.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace segattack {

// Dense C x H x W array of doubles: images in [0,1], logits, gradients.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int channels, int height, int width, double fill = 0.0);

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
  double at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }

  double* plane(int c) noexcept { return data_.data() + static_cast<std::size_t>(c) * plane_size(); }
  const double* plane(int c) const noexcept {
    return data_.data() + static_cast<std::size_t>(c) * plane_size();
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Tensor3& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  bool operator==(const Tensor3&) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * static_cast<std::size_t>(height_) +
            static_cast<std::size_t>(y)) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

// max_i |a_i - b_i|; shapes must match.
double max_abs_diff(const Tensor3& a, const Tensor3& b);

// Intermediate activation flattened to channels x pixels, pixels row-major
// over (height, width). values[c * pixels() + i] is channel c at pixel i.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int channels, int height, int width, double fill = 0.0);
  FeatureMap(int channels, int height, int width, std::vector<double> values);

  // Takes the layout of a C x H x W activation directly.
  static FeatureMap from_tensor(const Tensor3& t);
  Tensor3 to_tensor() const;

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixels() const noexcept {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  bool empty() const noexcept { return values_.empty(); }

  double& at(int c, std::size_t pixel) noexcept { return values_[static_cast<std::size_t>(c) * pixels() + pixel]; }
  double at(int c, std::size_t pixel) const noexcept {
    return values_[static_cast<std::size_t>(c) * pixels() + pixel];
  }
  const double* channel(int c) const noexcept { return values_.data() + static_cast<std::size_t>(c) * pixels(); }
  double* channel(int c) noexcept { return values_.data() + static_cast<std::size_t>(c) * pixels(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  bool same_shape(const FeatureMap& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }
  bool operator==(const FeatureMap&) const = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

// H x W class ids; ignore_index marks unlabeled pixels.
class LabelMap {
 public:
  static constexpr int kDefaultIgnore = 255;

  LabelMap() = default;
  LabelMap(int height, int width, std::uint8_t fill = 0, int ignore_index = kDefaultIgnore);
  LabelMap(int height, int width, std::vector<std::uint8_t> values, int ignore_index = kDefaultIgnore);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int ignore_index() const noexcept { return ignore_index_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::uint8_t& at(int y, int x) noexcept { return values_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)]; }
  std::uint8_t at(int y, int x) const noexcept {
    return values_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)];
  }
  std::span<std::uint8_t> values() noexcept { return values_; }
  std::span<const std::uint8_t> values() const noexcept { return values_; }

  // Throws (invalid_input) when a value is outside [0, num_classes) and is
  // not the ignore index.
  void validate(int num_classes) const;

  bool operator==(const LabelMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int ignore_index_ = kDefaultIgnore;
  std::vector<std::uint8_t> values_;
};

// Per-pixel argmax over channels of a logits tensor.
LabelMap argmax_labels(const Tensor3& logits, int ignore_index = LabelMap::kDefaultIgnore);

}  // namespace segattack

#pragma once

#include "segattack/tensor.hpp"

namespace segattack::nn {

// Mean softmax cross-entropy over pixels whose label is not the ignore index.
// Writes d loss / d logits into *grad when non-null. Returns 0 (and a zero
// gradient) when every pixel is ignored.
double pixel_cross_entropy(const Tensor3& logits, const LabelMap& labels, Tensor3* grad = nullptr);

}  // namespace segattack::nn

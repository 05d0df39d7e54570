#include "segattack/nn/cross_entropy.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "segattack/error.hpp"

namespace segattack::nn {

double pixel_cross_entropy(const Tensor3& logits, const LabelMap& labels, Tensor3* grad) {
  if (logits.height() != labels.height() || logits.width() != labels.width()) {
    fail(ErrorKind::shape, "logits and labels differ in spatial size");
  }
  const int classes = logits.channels();
  const std::size_t n = logits.plane_size();
  if (grad != nullptr) *grad = Tensor3(classes, logits.height(), logits.width());

  std::size_t valid = 0;
  for (auto v : labels.values()) valid += (v != labels.ignore_index()) ? 1 : 0;
  if (valid == 0) return 0.0;
  const double inv_valid = 1.0 / static_cast<double>(valid);

  std::vector<double> prob(static_cast<std::size_t>(classes));
  double total = 0.0;
  const auto lab = labels.values();
  for (std::size_t i = 0; i < n; ++i) {
    const int y = lab[i];
    if (y == labels.ignore_index()) continue;
    if (y >= classes) fail(ErrorKind::invalid_input, "label exceeds number of classes");
    double mx = logits.plane(0)[i];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, logits.plane(c)[i]);
    double z = 0.0;
    for (int c = 0; c < classes; ++c) {
      prob[static_cast<std::size_t>(c)] = std::exp(logits.plane(c)[i] - mx);
      z += prob[static_cast<std::size_t>(c)];
    }
    total += std::log(z) - (logits.plane(y)[i] - mx);
    if (grad != nullptr) {
      for (int c = 0; c < classes; ++c) {
        const double p = prob[static_cast<std::size_t>(c)] / z;
        grad->plane(c)[i] = (p - (c == y ? 1.0 : 0.0)) * inv_valid;
      }
    }
  }
  return total * inv_valid;
}

}  // namespace segattack::nn

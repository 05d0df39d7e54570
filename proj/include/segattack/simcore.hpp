#pragma once

// Feature-similarity kernels: per-pixel normalization, clean/adversarial
// cosine similarity, the pixel Gram matrix, its thresholded mask, the masked
// internal similarity, and the scheduled blend of the two similarities.
//
// Similarities are returned with the sign they are defined with (higher means
// more similar). Driving them down is the attacker's job.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "segattack/tensor.hpp"

namespace segattack::simcore {

inline constexpr double kNormEpsilon = 1e-12;
// cos(pi/3)
inline constexpr double kDefaultTau = 0.5;
inline constexpr int kDefaultIterations = 20;

struct TilingOptions {
  // Largest N for which gram()/build_mask() will materialize an N x N matrix.
  std::size_t dense_limit = 16384;
  // Rows of the N x N products evaluated at once. Peak scratch is
  // O(tile_rows * N).
  std::size_t tile_rows = 256;
};

// Symmetric N x N cosine matrix.
class GramMatrix {
 public:
  GramMatrix() = default;
  GramMatrix(std::size_t n, std::vector<double> values);

  std::size_t size() const noexcept { return n_; }
  double at(std::size_t p, std::size_t q) const noexcept { return values_[p * n_ + q]; }
  const std::vector<double>& values() const noexcept { return values_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

// Binary N x N selection of pixel pairs whose clean features are similar.
class SimilarityMask {
 public:
  SimilarityMask() = default;
  SimilarityMask(std::size_t n, std::vector<std::uint8_t> values);

  std::size_t size() const noexcept { return n_; }
  std::size_t count_k() const noexcept { return count_k_; }
  std::uint8_t at(std::size_t p, std::size_t q) const noexcept { return values_[p * n_ + q]; }
  const std::vector<std::uint8_t>& values() const noexcept { return values_; }

 private:
  std::size_t n_ = 0;
  std::size_t count_k_ = 0;
  std::vector<std::uint8_t> values_;
};

struct LossBreakdown {
  double l_ex = 0.0;
  double l_in = 0.0;
  double lambda_t = 0.0;
  double combined = 0.0;
  std::size_t count_k = 0;
  // The mask selected no pair; l_in was defined as 0.
  bool empty_mask = false;
};

// Each column becomes f(i) / max(|f(i)|_2, eps_norm).
FeatureMap normalize_pixels(const FeatureMap& f, double eps_norm = kNormEpsilon);

// (1/N) sum_i cos(f_x(i), f_a(i)).
double external_similarity(const FeatureMap& f_x, const FeatureMap& f_a);

// S(p,q) = cos(f(p), f(q)). Refuses N above opts.dense_limit.
GramMatrix gram(const FeatureMap& f, const TilingOptions& opts = {});

// M_B(p,q) = 1 iff cos(f_x(p), f_x(q)) > tau. Requires tau < 1.
SimilarityMask build_mask(const FeatureMap& f_x, double tau, const TilingOptions& opts = {});

// (1/2)(1/K) sum_{p,q} M_B(p,q) S(p,q) with M_B from f_x and S from f_a.
// Returns 0 when K = 0; use FeatureSimilarity to observe that case.
double internal_similarity(const FeatureMap& f_x, const FeatureMap& f_a, double tau,
                           const TilingOptions& opts = {});

// lambda_t = t / T and combined = lambda_t * l_ex + (1 - lambda_t) * l_in.
LossBreakdown combined_loss(const FeatureMap& f_x, const FeatureMap& f_a, int t, int total_steps,
                            double tau, const TilingOptions& opts = {});

struct ObjectiveWeights {
  double external = 0.0;
  double internal = 0.0;
};

struct ObjectiveValue {
  double l_ex = 0.0;
  double l_in = 0.0;
  // external * l_ex + internal * l_in
  double objective = 0.0;
  std::size_t count_k = 0;
  bool empty_mask = false;
};

// Both similarities against one fixed clean feature map. The clean side
// (normalized f_x and K) is computed once; evaluate() may then be called for
// any number of adversarial maps, optionally returning d objective / d f_a.
// The mask is a constant of f_x, so no gradient flows through thresholding.
class FeatureSimilarity {
 public:
  FeatureSimilarity(const FeatureMap& f_x, double tau, TilingOptions opts = {});

  std::size_t count_k() const noexcept { return count_k_; }
  double tau() const noexcept { return tau_; }

  ObjectiveValue evaluate(const FeatureMap& f_a, ObjectiveWeights weights,
                          FeatureMap* grad = nullptr) const;

 private:
  int channels_;
  int height_;
  int width_;
  std::size_t pixels_;
  double tau_;
  TilingOptions opts_;
  FeatureMap clean_unit_;                 // C x N
  std::vector<double> clean_unit_t_;      // N x C
  std::size_t count_k_ = 0;
};

}  // namespace segattack::simcore

#include "segattack/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "segattack/error.hpp"
#include "segattack/simd/kernels.hpp"

namespace segattack::simcore {
namespace {

void require_finite(const FeatureMap& f, const char* what) {
  for (double v : f.values()) {
    if (!std::isfinite(v)) fail(ErrorKind::invalid_input, std::string(what) + " contains a non-finite value");
  }
}

void require_tau(double tau) {
  if (!(tau < 1.0)) {
    fail(ErrorKind::config, "tau must be < 1 (cosines never exceed 1, so the mask would be empty); got " +
                                std::to_string(tau));
  }
}

void require_same_shape(const FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b)) {
    fail(ErrorKind::shape, "feature maps differ: " + std::to_string(a.channels()) + "x" +
                               std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                               std::to_string(b.channels()) + "x" + std::to_string(b.height()) + "x" +
                               std::to_string(b.width()));
  }
}

// Unit columns plus the per-pixel norms they were divided by.
struct Normalized {
  FeatureMap unit;
  std::vector<double> divisor;         // max(|f(i)|, eps)
  std::vector<std::uint8_t> clamped;   // |f(i)| < eps
};

Normalized normalize(const FeatureMap& f, double eps_norm) {
  const auto& k = simd::active();
  const std::size_t n = f.pixels();
  std::vector<double> sumsq(n, 0.0);
  for (int c = 0; c < f.channels(); ++c) k.accumulate_square(f.channel(c), sumsq.data(), n);

  Normalized out{FeatureMap(f.channels(), f.height(), f.width()), std::vector<double>(n),
                 std::vector<std::uint8_t>(n)};
  std::vector<double> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = std::sqrt(sumsq[i]);
    out.clamped[i] = norm < eps_norm ? 1 : 0;
    out.divisor[i] = std::max(norm, eps_norm);
    inv[i] = 1.0 / out.divisor[i];
  }
  for (int c = 0; c < f.channels(); ++c) {
    const double* src = f.channel(c);
    double* dst = out.unit.channel(c);
    for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] * inv[i];
  }
  return out;
}

std::vector<double> transpose(const FeatureMap& f) {
  const std::size_t n = f.pixels();
  const auto c = static_cast<std::size_t>(f.channels());
  std::vector<double> t(n * c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* row = f.channel(static_cast<int>(ch));
    for (std::size_t i = 0; i < n; ++i) t[i * c + ch] = row[i];
  }
  return t;
}

// rows [r0, r0 + rows) of U^T U into out (rows x N), with U given as C x N
// and its transpose N x C.
void cosine_rows(const FeatureMap& unit, const std::vector<double>& unit_t, std::size_t r0,
                 std::size_t rows, double* out) {
  const std::size_t n = unit.pixels();
  const auto c = static_cast<std::size_t>(unit.channels());
  std::fill(out, out + rows * n, 0.0);
  simd::active().gemm_nn(rows, n, c, unit_t.data() + r0 * c, c, unit.values().data(), n, out, n);
}

std::size_t effective_tile(const TilingOptions& opts, std::size_t n) {
  return std::max<std::size_t>(1, std::min(opts.tile_rows, n));
}

}  // namespace

GramMatrix::GramMatrix(std::size_t n, std::vector<double> values) : n_(n), values_(std::move(values)) {
  if (values_.size() != n * n) fail(ErrorKind::shape, "Gram matrix storage must be N x N");
}

SimilarityMask::SimilarityMask(std::size_t n, std::vector<std::uint8_t> values)
    : n_(n), values_(std::move(values)) {
  if (values_.size() != n * n) fail(ErrorKind::shape, "mask storage must be N x N");
  for (auto v : values_) {
    if (v > 1) fail(ErrorKind::invalid_input, "mask entries must be 0 or 1");
    count_k_ += v;
  }
}

FeatureMap normalize_pixels(const FeatureMap& f, double eps_norm) {
  if (!(eps_norm > 0.0)) fail(ErrorKind::config, "eps_norm must be positive");
  require_finite(f, "feature map");
  return normalize(f, eps_norm).unit;
}

double external_similarity(const FeatureMap& f_x, const FeatureMap& f_a) {
  require_same_shape(f_x, f_a);
  FeatureSimilarity sim(f_x, kDefaultTau);
  return sim.evaluate(f_a, {1.0, 0.0}).l_ex;
}

GramMatrix gram(const FeatureMap& f, const TilingOptions& opts) {
  require_finite(f, "feature map");
  const std::size_t n = f.pixels();
  if (n > opts.dense_limit) {
    fail(ErrorKind::config, "N = " + std::to_string(n) + " exceeds the dense Gram limit " +
                                std::to_string(opts.dense_limit));
  }
  const auto unit = normalize(f, kNormEpsilon).unit;
  const auto unit_t = transpose(unit);
  std::vector<double> values(n * n);
  const std::size_t tile = effective_tile(opts, n);
  for (std::size_t r0 = 0; r0 < n; r0 += tile) {
    const std::size_t rows = std::min(tile, n - r0);
    cosine_rows(unit, unit_t, r0, rows, values.data() + r0 * n);
  }
  return GramMatrix(n, std::move(values));
}

SimilarityMask build_mask(const FeatureMap& f_x, double tau, const TilingOptions& opts) {
  require_tau(tau);
  const auto s = gram(f_x, opts);
  std::vector<std::uint8_t> bits(s.values().size());
  std::transform(s.values().begin(), s.values().end(), bits.begin(),
                 [tau](double v) { return static_cast<std::uint8_t>(v > tau ? 1 : 0); });
  return SimilarityMask(s.size(), std::move(bits));
}

double internal_similarity(const FeatureMap& f_x, const FeatureMap& f_a, double tau,
                           const TilingOptions& opts) {
  require_same_shape(f_x, f_a);
  FeatureSimilarity sim(f_x, tau, opts);
  return sim.evaluate(f_a, {0.0, 1.0}).l_in;
}

LossBreakdown combined_loss(const FeatureMap& f_x, const FeatureMap& f_a, int t, int total_steps,
                            double tau, const TilingOptions& opts) {
  if (total_steps <= 0 || t < 0 || t >= total_steps) {
    fail(ErrorKind::config, "step t = " + std::to_string(t) + " outside [0, " +
                                std::to_string(total_steps) + ")");
  }
  require_same_shape(f_x, f_a);
  FeatureSimilarity sim(f_x, tau, opts);
  const auto v = sim.evaluate(f_a, {1.0, 1.0});
  LossBreakdown out;
  out.l_ex = v.l_ex;
  out.l_in = v.l_in;
  out.lambda_t = static_cast<double>(t) / static_cast<double>(total_steps);
  out.combined = out.lambda_t * out.l_ex + (1.0 - out.lambda_t) * out.l_in;
  out.count_k = v.count_k;
  out.empty_mask = v.empty_mask;
  return out;
}

FeatureSimilarity::FeatureSimilarity(const FeatureMap& f_x, double tau, TilingOptions opts)
    : channels_(f_x.channels()),
      height_(f_x.height()),
      width_(f_x.width()),
      pixels_(f_x.pixels()),
      tau_(tau),
      opts_(opts) {
  require_tau(tau);
  require_finite(f_x, "clean feature map");
  clean_unit_ = normalize(f_x, kNormEpsilon).unit;
  clean_unit_t_ = transpose(clean_unit_);

  const auto& k = simd::active();
  const std::size_t tile = effective_tile(opts_, pixels_);
  std::vector<double> rows(tile * pixels_);
  std::vector<double> scratch(pixels_);
  for (std::size_t r0 = 0; r0 < pixels_; r0 += tile) {
    const std::size_t nrows = std::min(tile, pixels_ - r0);
    cosine_rows(clean_unit_, clean_unit_t_, r0, nrows, rows.data());
    for (std::size_t r = 0; r < nrows; ++r) {
      count_k_ += k.threshold(rows.data() + r * pixels_, tau_, scratch.data(), pixels_);
    }
  }
}

ObjectiveValue FeatureSimilarity::evaluate(const FeatureMap& f_a, ObjectiveWeights weights,
                                           FeatureMap* grad) const {
  if (f_a.channels() != channels_ || f_a.height() != height_ || f_a.width() != width_) {
    require_same_shape(clean_unit_, f_a);
  }
  require_finite(f_a, "adversarial feature map");
  const auto& k = simd::active();
  const std::size_t n = pixels_;
  const auto c = static_cast<std::size_t>(channels_);
  const auto adv = normalize(f_a, kNormEpsilon);
  const auto adv_t = transpose(adv.unit);

  ObjectiveValue out;
  out.count_k = count_k_;
  out.empty_mask = count_k_ == 0;

  double ex_sum = 0.0;
  for (int ch = 0; ch < channels_; ++ch) ex_sum += k.dot(clean_unit_.channel(ch), adv.unit.channel(ch), n);
  out.l_ex = ex_sum / static_cast<double>(n);

  const bool want_grad = grad != nullptr;
  const bool need_internal = !out.empty_mask;
  const bool internal_grad = want_grad && need_internal && weights.internal != 0.0;
  // Rows of sum_q M_B(p,q) * unit_a(q), stored N x C.
  std::vector<double> pull_t;
  if (need_internal) {
    const std::size_t tile = effective_tile(opts_, n);
    std::vector<double> mask_rows(tile * n);
    std::vector<double> sim_rows(tile * n);
    if (internal_grad) pull_t.assign(n * c, 0.0);
    double in_sum = 0.0;
    for (std::size_t r0 = 0; r0 < n; r0 += tile) {
      const std::size_t nrows = std::min(tile, n - r0);
      cosine_rows(clean_unit_, clean_unit_t_, r0, nrows, mask_rows.data());
      cosine_rows(adv.unit, adv_t, r0, nrows, sim_rows.data());
      for (std::size_t r = 0; r < nrows; ++r) {
        in_sum += k.masked_sum(mask_rows.data() + r * n, sim_rows.data() + r * n, tau_, n, nullptr);
      }
      if (internal_grad) {
        for (std::size_t r = 0; r < nrows; ++r) {
          double* row = mask_rows.data() + r * n;
          k.threshold(row, tau_, row, n);
        }
        k.gemm_nn(nrows, c, n, mask_rows.data(), n, adv_t.data(), c, pull_t.data() + r0 * c, c);
      }
    }
    out.l_in = 0.5 * in_sum / static_cast<double>(count_k_);
  }
  out.objective = weights.external * out.l_ex + weights.internal * out.l_in;

  if (want_grad) {
    // d/d unit_a(:,p): external contributes w_ex * unit_x(:,p) / N; internal
    // contributes w_in / (2K) * sum_q (M(p,q) + M(q,p)) unit_a(:,q), which is
    // w_in / K * pull(:,p) because M is symmetric.
    FeatureMap g(channels_, height_, width_);
    const double ex_scale = weights.external / static_cast<double>(n);
    const double in_scale = internal_grad ? weights.internal / static_cast<double>(count_k_) : 0.0;
    for (int ch = 0; ch < channels_; ++ch) {
      double* gr = g.channel(ch);
      const double* xr = clean_unit_.channel(ch);
      for (std::size_t i = 0; i < n; ++i) {
        double v = ex_scale * xr[i];
        if (in_scale != 0.0) v += in_scale * pull_t[i * c + static_cast<std::size_t>(ch)];
        gr[i] = v;
      }
    }
    // Chain through u = f / max(|f|, eps): for |f| >= eps the Jacobian is
    // (I - u u^T) / |f|, below it is I / eps.
    std::vector<double> radial(n, 0.0);
    for (int ch = 0; ch < channels_; ++ch) {
      const double* u = adv.unit.channel(ch);
      const double* gr = g.channel(ch);
      for (std::size_t i = 0; i < n; ++i) radial[i] += u[i] * gr[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (adv.clamped[i] != 0) radial[i] = 0.0;
    }
    for (int ch = 0; ch < channels_; ++ch) {
      const double* u = adv.unit.channel(ch);
      double* gr = g.channel(ch);
      for (std::size_t i = 0; i < n; ++i) gr[i] = (gr[i] - u[i] * radial[i]) / adv.divisor[i];
    }
    *grad = std::move(g);
  }
  return out;
}

}  // namespace segattack::simcore

#include "segattack/attacker.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <random>
#include <sstream>

#include "segattack/error.hpp"
#include "segattack/nn/cross_entropy.hpp"
#include "segattack/simd/kernels.hpp"

namespace segattack::attacker {
namespace {

void record_bounds(const Tensor3& adv, const Tensor3& x, StepRecord& rec) {
  double md = 0.0;
  double lo = 1.0;
  double hi = 0.0;
  const auto a = adv.values();
  const auto c = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    md = std::max(md, std::abs(a[i] - c[i]));
    lo = std::min(lo, a[i]);
    hi = std::max(hi, a[i]);
  }
  rec.max_delta = md;
  rec.min_pixel = lo;
  rec.max_pixel = hi;
}

void check_image(const Tensor3& x) {
  if (x.empty()) fail(ErrorKind::shape, "empty image");
  for (double v : x.values()) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) fail(ErrorKind::invalid_input, "image pixels must lie in [0,1]");
  }
}

adapters::LossFunction cross_entropy_loss(const LabelMap& y) {
  return [&y](const Tensor3& logits, const FeatureMap*) {
    adapters::LossValue lv;
    lv.value = nn::pixel_cross_entropy(logits, y, &lv.d_logits);
    return lv;
  };
}

// Re-raise numeric failures with the step that produced them.
template <typename F>
auto at_step(int t, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::numeric) throw;
    fail(ErrorKind::numeric, std::string(e.what()) + " at iteration " + std::to_string(t));
  }
}

class FgsmAttack final : public Attack {
 public:
  std::string name() const override { return "fgsm"; }
  bool needs_labels() const override { return true; }
  AttackTrace run(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap* labels,
                  const AttackConfig& cfg) const override {
    if (labels == nullptr) fail(ErrorKind::config, "fgsm needs ground-truth labels");
    AttackTrace trace;
    trace.attack = name();
    trace.objective = "cross_entropy";
    trace.adversarial = fgsm(model, x, *labels, cfg.epsilon);
    return trace;
  }
};

class PgdAttack final : public Attack {
 public:
  std::string name() const override { return "pgd"; }
  bool needs_labels() const override { return true; }
  AttackTrace run(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap* labels,
                  const AttackConfig& cfg) const override {
    if (labels == nullptr) fail(ErrorKind::config, "pgd needs ground-truth labels");
    return pgd(model, x, *labels, cfg);
  }
};

class FspgdAttack final : public Attack {
 public:
  std::string name() const override { return "fspgd"; }
  bool needs_labels() const override { return false; }
  AttackTrace run(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap*,
                  const AttackConfig& cfg) const override {
    return fspgd(model, x, cfg);
  }
};

struct Registry {
  std::mutex mutex;
  std::map<std::string, AttackFactory, std::less<>> factories;

  Registry() {
    factories["fgsm"] = [] { return std::make_unique<FgsmAttack>(); };
    factories["pgd"] = [] { return std::make_unique<PgdAttack>(); };
    factories["fspgd"] = [] { return std::make_unique<FspgdAttack>(); };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

std::string LossMode::name() const {
  switch (kind) {
    case Kind::fspgd_dynamic:
      return "dynamic";
    case Kind::ex_only:
      return "ex_only";
    case Kind::in_only:
      return "in_only";
    case Kind::ex_plus_scaled_in: {
      std::ostringstream s;
      s << "const:" << scale;
      return s.str();
    }
  }
  return "dynamic";
}

LossMode LossMode::parse(std::string_view text) {
  if (text == "dynamic" || text == "fspgd_dynamic") return dynamic();
  if (text == "ex_only") return external_only();
  if (text == "in_only") return internal_only();
  constexpr std::string_view prefix = "const:";
  if (text.substr(0, prefix.size()) == prefix) {
    const std::string rest(text.substr(prefix.size()));
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == rest.size() && used > 0 && std::isfinite(v)) return ex_plus_scaled_in(v);
  }
  fail(ErrorKind::config, "unknown loss mode '" + std::string(text) +
                              "' (expected dynamic, ex_only, in_only or const:<scale>)");
}

simcore::ObjectiveWeights LossMode::weights(int t, int total_steps) const {
  switch (kind) {
    case Kind::fspgd_dynamic: {
      const double lambda = static_cast<double>(t) / static_cast<double>(total_steps);
      return {lambda, 1.0 - lambda};
    }
    case Kind::ex_only:
      return {1.0, 0.0};
    case Kind::in_only:
      return {0.0, 1.0};
    case Kind::ex_plus_scaled_in:
      return {1.0, scale};
  }
  return {};
}

void AttackConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0) fail(ErrorKind::config, "epsilon must be >= 0");
  if (!std::isfinite(alpha) || alpha <= 0.0) fail(ErrorKind::config, "alpha must be > 0");
  if (epsilon > 0.0 && alpha > 2.0 * epsilon) {
    fail(ErrorKind::config, "alpha exceeds the ball diameter 2 * epsilon");
  }
  if (iterations < 0) fail(ErrorKind::config, "iterations must be >= 0");
  if (!(tau < 1.0)) fail(ErrorKind::config, "tau must be < 1");
  if (tiling.tile_rows == 0) fail(ErrorKind::config, "tile_rows must be positive");
  if (loss_mode.kind == LossMode::Kind::ex_plus_scaled_in && !std::isfinite(loss_mode.scale)) {
    fail(ErrorKind::config, "loss-mode scale must be finite");
  }
}

Tensor3 random_init(const Tensor3& x, double epsilon, std::uint64_t seed, bool pixel_clamp) {
  if (!(epsilon >= 0.0)) fail(ErrorKind::config, "epsilon must be >= 0");
  Tensor3 out = x;
  if (epsilon == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& v : out.values()) {
    v += epsilon * (2.0 * unit(rng) - 1.0);
    if (pixel_clamp) v = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

Tensor3 project_linf(const Tensor3& x_adv, const Tensor3& x, double epsilon, bool pixel_clamp) {
  if (!x_adv.same_shape(x)) fail(ErrorKind::shape, "adversarial and clean images differ in shape");
  Tensor3 out = x_adv;
  simd::active().project_linf(out.data(), x.data(), epsilon, pixel_clamp, out.size());
  return out;
}

Tensor3 fgsm(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap& y, double epsilon) {
  check_image(x);
  if (!(epsilon >= 0.0)) fail(ErrorKind::config, "epsilon must be >= 0");
  const Tensor3 grad = model.input_gradient(x, cross_entropy_loss(y));
  Tensor3 out = x;
  simd::active().sign_step(out.data(), grad.data(), epsilon, out.size());
  simd::active().project_linf(out.data(), x.data(), epsilon, true, out.size());
  return out;
}

AttackTrace pgd(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap& y, const AttackConfig& cfg) {
  cfg.validate();
  check_image(x);
  const auto& k = simd::active();
  AttackTrace trace;
  trace.attack = "pgd";
  trace.objective = "cross_entropy";

  Tensor3 adv = project_linf(random_init(x, cfg.epsilon, cfg.seed, cfg.pixel_clamp), x, cfg.epsilon, cfg.pixel_clamp);
  {
    StepRecord init;
    record_bounds(adv, x, init);
    trace.init_max_delta = init.max_delta;
  }
  const auto loss = cross_entropy_loss(y);
  trace.steps.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int t = 0; t < cfg.iterations; ++t) {
    StepRecord rec;
    rec.t = t;
    const Tensor3 grad = at_step(t, [&] { return model.input_gradient(adv, loss, {}, &rec.combined); });
    k.sign_step(adv.data(), grad.data(), cfg.alpha, adv.size());
    k.project_linf(adv.data(), x.data(), cfg.epsilon, cfg.pixel_clamp, adv.size());
    record_bounds(adv, x, rec);
    trace.steps.push_back(rec);
  }
  trace.adversarial = std::move(adv);
  return trace;
}

AttackTrace fspgd(const adapters::ModelAdapter& model, const Tensor3& x, const AttackConfig& cfg) {
  cfg.validate();
  check_image(x);
  const auto& k = simd::active();
  const std::string layer = cfg.layer_id.empty() ? model.recommended_layer() : cfg.layer_id;
  if (layer.empty()) fail(ErrorKind::adapter, "model " + model.model_id() + " has no attack layer");
  model.layer_index(layer);

  AttackTrace trace;
  trace.attack = "fspgd";
  trace.objective = cfg.loss_mode.name();
  trace.layer_id = layer;

  Tensor3 adv = project_linf(random_init(x, cfg.epsilon, cfg.seed, cfg.pixel_clamp), x, cfg.epsilon, cfg.pixel_clamp);
  {
    StepRecord init;
    record_bounds(adv, x, init);
    trace.init_max_delta = init.max_delta;
  }
  if (cfg.iterations == 0) {
    trace.adversarial = std::move(adv);
    return trace;
  }

  // Clean features are fixed for the whole attack; no gradient reaches them.
  const FeatureMap f_x = model.forward_with_features(x, layer).features;
  const simcore::FeatureSimilarity similarity(f_x, cfg.tau, cfg.tiling);
  if (similarity.count_k() == 0) trace.warnings.push_back("similarity mask is empty (K = 0); L_in treated as 0");

  trace.steps.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int t = 0; t < cfg.iterations; ++t) {
    StepRecord rec;
    rec.t = t;
    rec.lambda_t = static_cast<double>(t) / static_cast<double>(cfg.iterations);
    const simcore::ObjectiveWeights w = cfg.loss_mode.weights(t, cfg.iterations);
    const adapters::LossFunction loss = [&](const Tensor3&, const FeatureMap* f_a) {
      adapters::LossValue lv;
      const simcore::ObjectiveValue v = similarity.evaluate(*f_a, w, &lv.d_features);
      lv.value = v.objective;
      rec.l_ex = v.l_ex;
      rec.l_in = v.l_in;
      rec.count_k = v.count_k;
      rec.empty_mask = v.empty_mask;
      return lv;
    };
    const Tensor3 grad = at_step(t, [&] { return model.input_gradient(adv, loss, layer, &rec.combined); });
    // Descend the similarity.
    k.sign_step(adv.data(), grad.data(), -cfg.alpha, adv.size());
    k.project_linf(adv.data(), x.data(), cfg.epsilon, cfg.pixel_clamp, adv.size());
    record_bounds(adv, x, rec);
    trace.steps.push_back(rec);
  }
  trace.adversarial = std::move(adv);
  return trace;
}

void register_attack(const std::string& name, AttackFactory factory) {
  if (name.empty() || !factory) fail(ErrorKind::config, "attack registration needs a name and a factory");
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

std::unique_ptr<Attack> make_attack(std::string_view name) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  const auto it = r.factories.find(name);
  if (it == r.factories.end()) {
    std::string known;
    for (const auto& [n, f] : r.factories) known += " " + n;
    fail(ErrorKind::config, "unknown attack '" + std::string(name) + "'; registered:" + known);
  }
  return it->second();
}

std::vector<std::string> registered_attacks() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> out;
  for (const auto& [n, f] : r.factories) out.push_back(n);
  return out;
}

}  // namespace segattack::attacker

#pragma once

// Iterative L-infinity attacks on segmentation models: FGSM, PGD on pixel
// cross-entropy, and FSPGD on intermediate-feature similarity. All attacks
// work in [0,1] pixel space on one image at a time and hold no state between
// calls.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "segattack/adapters.hpp"
#include "segattack/simcore.hpp"
#include "segattack/tensor.hpp"

namespace segattack::attacker {

inline constexpr double kDefaultEpsilon = 8.0 / 255.0;
inline constexpr double kDefaultAlpha = 2.0 / 255.0;

// How FSPGD weighs the two similarities at step t of T.
struct LossMode {
  enum class Kind { fspgd_dynamic, ex_only, in_only, ex_plus_scaled_in };

  Kind kind = Kind::fspgd_dynamic;
  double scale = 1.0;  // only for ex_plus_scaled_in: L_ex + scale * L_in

  static LossMode dynamic() { return {}; }
  static LossMode external_only() { return {Kind::ex_only, 1.0}; }
  static LossMode internal_only() { return {Kind::in_only, 1.0}; }
  static LossMode ex_plus_scaled_in(double scale) { return {Kind::ex_plus_scaled_in, scale}; }

  // "dynamic", "ex_only", "in_only", "const:<scale>".
  std::string name() const;
  static LossMode parse(std::string_view text);

  simcore::ObjectiveWeights weights(int t, int total_steps) const;

  bool operator==(const LossMode&) const = default;
};

struct AttackConfig {
  double epsilon = kDefaultEpsilon;
  double alpha = kDefaultAlpha;
  int iterations = simcore::kDefaultIterations;
  double tau = simcore::kDefaultTau;
  // Empty selects the source model's recommended layer.
  std::string layer_id;
  std::uint64_t seed = 0;
  LossMode loss_mode;
  bool pixel_clamp = true;
  simcore::TilingOptions tiling;

  // Throws a config error. alpha <= 2 * epsilon is enforced only when
  // epsilon > 0, so that an epsilon = 0 run is a valid no-op attack.
  void validate() const;
};

struct StepRecord {
  int t = 0;
  double lambda_t = 0.0;
  double l_ex = 0.0;
  double l_in = 0.0;
  // The value the step was taken on: the scheduled blend for FSPGD, the
  // pixel cross-entropy for PGD.
  double combined = 0.0;
  std::size_t count_k = 0;
  bool empty_mask = false;
  // Measured on the iterate produced by this step.
  double max_delta = 0.0;
  double min_pixel = 0.0;
  double max_pixel = 0.0;
};

struct AttackTrace {
  std::string attack;
  std::string objective;  // "cross_entropy" or the FSPGD loss-mode name
  std::string layer_id;
  double init_max_delta = 0.0;
  std::vector<StepRecord> steps;
  std::vector<std::string> warnings;
  Tensor3 adversarial;
};

// x + u with u ~ U(-eps, eps) elementwise, clamped to [0,1] when
// pixel_clamp is set. The uniform draws do not depend on eps, so the noise
// for budget eps' is the noise for eps scaled by eps'/eps.
Tensor3 random_init(const Tensor3& x, double epsilon, std::uint64_t seed, bool pixel_clamp = true);

// clamp(x_adv, x - eps, x + eps), then clamp to [0,1] when pixel_clamp.
Tensor3 project_linf(const Tensor3& x_adv, const Tensor3& x, double epsilon, bool pixel_clamp = true);

Tensor3 fgsm(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap& y, double epsilon);

AttackTrace pgd(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap& y, const AttackConfig& cfg);

// Label-free: only the clean image defines the targets.
AttackTrace fspgd(const adapters::ModelAdapter& model, const Tensor3& x, const AttackConfig& cfg);

// Harness-facing interface. `labels` may be null for attacks that do not
// need ground truth.
class Attack {
 public:
  virtual ~Attack() = default;
  virtual std::string name() const = 0;
  virtual bool needs_labels() const = 0;
  virtual AttackTrace run(const adapters::ModelAdapter& model, const Tensor3& x, const LabelMap* labels,
                          const AttackConfig& cfg) const = 0;
};

using AttackFactory = std::function<std::unique_ptr<Attack>()>;

// fgsm, pgd and fspgd are registered on first use. Re-registering a name
// replaces it.
void register_attack(const std::string& name, AttackFactory factory);
std::unique_ptr<Attack> make_attack(std::string_view name);
std::vector<std::string> registered_attacks();

}  // namespace segattack::attacker

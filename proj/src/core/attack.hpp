#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/tensor.hpp"

namespace st {

enum class AttackStart { kBenign, kUniformRandom };
enum class AttackLoss { kCe, kCwMargin };
enum class AttackDirection { kAscend, kDescend };

struct AttackConfig {
  float epsilon = 0.0f;  // l-inf budget in input units
  float alpha = 0.0f;    // step size
  int steps = 1;
  AttackStart start = AttackStart::kBenign;
  AttackLoss loss = AttackLoss::kCe;
  AttackDirection direction = AttackDirection::kAscend;
  uint64_t seed = 0;

  void validate() const;
};

struct CraftedBatch {
  Tensor examples;
  std::vector<float> final_loss;  // per example, at the returned iterate
  Tensor perturbation;            // examples - benign
};

// Counts constraint checks during crafting; zero violations is the
// expected steady state and is asserted by the acceptance suite.
struct FeasibilityAudit {
  long long checks = 0;
  long long ball_violations = 0;
  long long range_violations = 0;
  float worst_linf = 0.0f;

  void inspect(const Tensor& x, const Tensor& x0, float epsilon);
};

// Elementwise clamp of x into [x0 - eps, x0 + eps] intersected with [0,1].
Tensor project(const Tensor& x, const Tensor& x0, float epsilon);

// max_{i != label} logits[i] - logits[label]; positive iff misclassified,
// a tie counting as misclassified.
float cw_margin(const Tensor& logits_row, int label);

// Per-example loss and its input gradient for an arbitrary sub-batch; the
// gradient pointer is null when only values are needed.
using BatchLossFn =
    std::function<void(const Tensor& x, std::vector<float>* loss, Tensor* grad)>;

// Sign-gradient crafting loop over any loss surface. Per-example randomness
// is keyed by (seed, base_index + row), so results are invariant to how a
// batch is sharded.
CraftedBatch craft_with(const BatchLossFn& fn, const Tensor& x0, const AttackConfig& cfg,
                        FeasibilityAudit* audit = nullptr, int64_t base_index = 0);

// Same loop from an explicit start iterate (already inside the feasible set).
CraftedBatch craft_from(const BatchLossFn& fn, const Tensor& x_start, const Tensor& x0,
                        const AttackConfig& cfg, FeasibilityAudit* audit = nullptr);

// Model-based crafting per the configured loss/direction.
CraftedBatch craft(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch,
                   const std::vector<int>& y_batch, const AttackConfig& cfg,
                   FeasibilityAudit* audit = nullptr, int workers = 1, int64_t base_index = 0);

// steps=1, benign start, ascend, alpha=epsilon.
CraftedBatch fgsm(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch,
                  const std::vector<int>& y_batch, float epsilon);

// TRADES-style inner maximization: starting from x + init_sigma*N(0,I),
// ascend KL(f(x'), f(x)) by sign steps with projection. The benign outputs
// are constants here; only x' carries gradient.
struct KlInnerConfig {
  int steps = 10;
  float alpha = 0.0f;
  float epsilon = 0.0f;
  float init_sigma = 0.001f;
  uint64_t seed = 0;

  void validate() const;
};

Tensor kl_ascent(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch,
                 const KlInnerConfig& cfg, FeasibilityAudit* audit = nullptr, int workers = 1,
                 int64_t base_index = 0);

}  // namespace st

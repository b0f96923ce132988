#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/attack.hpp"
#include "core/dataset.hpp"
#include "core/metrics.hpp"
#include "core/model.hpp"
#include "core/squeeze.hpp"

namespace st {

// Training objectives:
//   standard  mean CE on benign examples
//   at        mean CE on PGD-ascended examples
//   trades    mean CE(benign) + beta * mean KL(f(x'), f(x)), x' from KL ascent
//   collab    mean CE(benign) + beta * mean KL(f(x_col), f(x)), x_col descended
//   st        mean CE(benign) + beta * mean reg(f(x_adv), f(x_col)), squeezed pair
enum class Method { kStandard, kAt, kTrades, kCollab, kSt };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct TrainConfig {
  Method method = Method::kStandard;
  float beta = 6.0f;
  RegKind reg = RegKind::kSymKl;

  // Inner crafting (shared budget across methods).
  int inner_steps = 10;
  float inner_alpha = 0.0f;
  float epsilon = 0.0f;
  float init_sigma = 0.001f;
  AttackStart at_start = AttackStart::kUniformRandom;  // vanilla AT inner start
  bool final_reselect = false;

  // Optimizer and schedule.
  int epochs = 1;
  int batch = 128;
  float lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 0.0005f;
  std::vector<int> lr_decay_epochs;
  float lr_decay_factor = 0.1f;

  // Checkpoint selection (PGD-20 on the held-out selection subset).
  AttackConfig eval_attack;
  int select_n = 1000;
  bool track_collab_ratio = false;

  uint64_t seed = 1;
  int workers = 1;

  // Optional audit sinks, borrowed.
  TripletAudit* triplet_audit = nullptr;
  FeasibilityAudit* feas_audit = nullptr;

  void validate() const;
};

// Outer loss expression for one batch. Inner crafting runs here with the
// parameters treated as constants; crafted tensors enter the expression as
// bound inputs, so the expression's gradient has no second-order terms.
struct BatchLoss {
  Expr loss;          // scalar
  Bindings bindings;  // params + x (+ crafted slots)
};

BatchLoss batch_loss(Method method, const ModelSpec& spec, const Parameters& params,
                     const Tensor& x_batch, const std::vector<int>& y_batch,
                     const TrainConfig& cfg, uint64_t inner_seed);

struct OptimizerState {
  std::map<std::string, Tensor> velocity;
  float lr = 0.0f;
  float momentum = 0.0f;
  int epoch = 0;
};

// v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v
void sgd_step(Parameters& params, const GradientMap& grads, OptimizerState& state,
              float weight_decay);

float lr_at_epoch(const TrainConfig& cfg, int epoch);

struct CheckpointMeta {
  int epoch = 0;
  float clean_acc = 0.0f;
  float pgd20_acc = 0.0f;
  bool is_best = false;
};

struct TrainResult {
  Parameters best;
  Parameters final;
  CheckpointMeta best_meta;
  std::vector<MetricsRecord> series;  // epoch 0 (pre-training) through epochs
};

// Runs the full protocol: per-epoch shuffle keyed by (seed, epoch), SGD with
// momentum/weight decay, step LR schedule, per-epoch clean + PGD-20
// evaluation on `select_data`, best-by-robust-accuracy tracking.
TrainResult train(const ModelSpec& spec, const Dataset& train_data, const Dataset& select_data,
                  const TrainConfig& cfg, bool verbose = false);

}  // namespace st

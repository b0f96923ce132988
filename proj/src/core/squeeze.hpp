#pragma once

#include <cstdint>
#include <vector>

#include "core/attack.hpp"
#include "core/divergence.hpp"
#include "core/model.hpp"
#include "core/tensor.hpp"

namespace st {

// Inner optimization settings for squeeze training. `steps` is K: the loop
// body runs while K >= 0, i.e. K+1 triplet selections. The regularizer must
// be symmetric so both pair members are treated equally.
struct InnerConfig {
  int steps = 10;
  float alpha = 0.0f;
  float epsilon = 0.0f;
  RegKind reg = RegKind::kSymKl;
  float init_sigma = 0.001f;
  uint64_t seed = 0;
  // Off by default: Algorithm 1's final x'/x'' updates are never re-selected;
  // enabling this adds one post-loop selection over the final triplet.
  bool final_reselect = false;

  void validate() const;
};

// Per-step, per-example record of the selection state.
struct SqueezeStepTrace {
  std::vector<float> ce_adv;
  std::vector<float> ce_col;
  std::vector<float> ce_benign;
  std::vector<float> g_inner;
};

struct SqueezePair {
  Tensor x_adv;
  Tensor x_col;
  std::vector<SqueezeStepTrace> trace;
};

// Counts violations of the selection chain CE(col) <= CE(benign) <= CE(adv).
struct TripletAudit {
  long long selections = 0;
  long long chain_violations = 0;
};

// Algorithm: draw x', x'' = x + sigma*N(0,I) (projected into the ball and
// [0,1]); each iteration re-selects x_adv/x_col as the CE argmax/argmin over
// the triplet {x, x', x''}, then steps both along the sign gradient of
// g_inner = reg(f(x_adv), f(x_col)). Returns the pair selected in the final
// iteration. Deterministic per example given (seed, base_index + row).
SqueezePair squeeze_pair(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                         const std::vector<int>& y, const InnerConfig& cfg,
                         TripletAudit* triplet_audit = nullptr,
                         FeasibilityAudit* feas_audit = nullptr, int workers = 1,
                         int64_t base_index = 0);

enum class NeighborClass { kCollaborative, kAdversarial, kNeutral };

// Classifies neighbors by CE relative to the benign example with tolerance
// tau = 1e-6.
std::vector<NeighborClass> classify_neighbor(const ModelSpec& spec, const Parameters& params,
                                             const Tensor& x, const std::vector<int>& y,
                                             const Tensor& x_neighbor);

// Per-example CE values of a batch, via the graph path used everywhere else.
std::vector<float> ce_values(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                             const std::vector<int>& y);

}  // namespace st

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/attack.hpp"
#include "core/dataset.hpp"
#include "core/model.hpp"

namespace st {

// Exact fraction n_correct/n_total; counts are integers summed across
// shards and divided once.
float accuracy(const ModelSpec& spec, const Parameters& params, const Tensor& inputs,
               const std::vector<int>& labels, int workers = 1);

struct NamedAttack {
  std::string name;
  AttackConfig cfg;
};

struct RobustReport {
  float clean_acc = 0.0f;
  std::vector<std::pair<std::string, float>> robust;  // (attack name, accuracy)
  std::vector<NamedAttack> attacks;                   // configs used
};

RobustReport robust_eval(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                         const std::vector<NamedAttack>& attacks, int workers = 1);

// Loss-vs-budget valley curve: collaborative descent at each budget, mean
// and (population) std of per-example CE. The epsilon=0 point is always
// present and equals the benign loss.
struct ValleyCurve {
  std::vector<float> budgets;
  std::vector<float> mean_ce;
  std::vector<float> std_ce;
};

ValleyCurve valley_curve(const ModelSpec& spec, const Parameters& params, const Dataset& data,
                         std::vector<float> budgets, int steps = 100, float alpha = 1.0f / 255.0f,
                         int workers = 1);

struct RatioCounts {
  int collaborative = 0;
  int adversarial = 0;
  int neutral = 0;
  double ratio = 0.0;  // collaborative fraction of the dataset
};

// Runs the TRADES inner maximization per example and classifies each result
// against the benign example.
RatioCounts collab_ratio_probe(const ModelSpec& spec, const Parameters& params,
                               const Dataset& data, const KlInnerConfig& inner, int workers = 1);

// Angle in degrees between two perturbations; empty if either has zero norm.
std::optional<double> angle_between_deg(std::span<const float> a, std::span<const float> b);

struct AngleHistogram {
  std::vector<double> angles_deg;  // per measured example
  std::vector<int> bin_counts;
  double bin_width = 0.0;
  int skipped = 0;  // zero-norm perturbations
  int adv_steps = 0;
  int col_steps = 0;
};

// Angles between adversarial and collaborative perturbations, measured at
// the final step of both crafting runs. Configs must share epsilon.
AngleHistogram perturbation_angles(const ModelSpec& spec, const Parameters& params,
                                   const Dataset& data, const AttackConfig& adv_cfg,
                                   const AttackConfig& col_cfg, int bins = 36, int workers = 1);

// 2-D CE slice around one example: u is the normalized collaborative
// direction, v a seeded random direction orthogonalized against u. Grid
// points are clamped to [0,1]; there is no ball projection.
struct LandscapeSlice {
  std::vector<float> axis;  // shared a/b axis, length grid
  std::vector<float> ce;    // row-major (a, b)
  int grid = 0;
  double uv_dot = 0.0;
};

LandscapeSlice landscape_slice(const ModelSpec& spec, const Parameters& params,
                               const Tensor& x_row, int y, const AttackConfig& u_cfg, int grid,
                               float extent, uint64_t v_seed, int workers = 1);

// CSV emitters (header row; comment lines start with '#').
void write_report_csv(const std::string& path, const RobustReport& report);
void write_valley_csv(const std::string& path, const ValleyCurve& curve);
void write_angles_csv(const std::string& path, const AngleHistogram& hist);
void write_landscape_csv(const std::string& path, const LandscapeSlice& slice);

}  // namespace st

#include "core/attack.hpp"

#include <algorithm>
#include <cmath>

#include "core/divergence.hpp"
#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace st {

void AttackConfig::validate() const {
  if (epsilon < 0.0f) throw Error::usage("attack: epsilon must be >= 0");
  if (alpha <= 0.0f) throw Error::usage("attack: alpha must be > 0");
  if (steps < 1) throw Error::usage("attack: steps must be >= 1");
}

void KlInnerConfig::validate() const {
  if (epsilon < 0.0f) throw Error::usage("kl_ascent: epsilon must be >= 0");
  if (alpha <= 0.0f) throw Error::usage("kl_ascent: alpha must be > 0");
  if (steps < 0) throw Error::usage("kl_ascent: steps must be >= 0");
  if (init_sigma < 0.0f) throw Error::usage("kl_ascent: init_sigma must be >= 0");
}

void FeasibilityAudit::inspect(const Tensor& x, const Tensor& x0, float epsilon) {
  ++checks;
  const int64_t n = x.size();
  float linf = 0.0f;
  bool range_ok = true;
  for (int64_t i = 0; i < n; ++i) {
    linf = std::max(linf, std::fabs(x[i] - x0[i]));
    if (x[i] < 0.0f || x[i] > 1.0f) range_ok = false;
  }
  worst_linf = std::max(worst_linf, linf);
  if (linf > epsilon + 1e-6f) ++ball_violations;
  if (!range_ok) ++range_violations;
}

Tensor project(const Tensor& x, const Tensor& x0, float epsilon) {
  if (!x.same_shape(x0))
    throw Error::numeric("project: shape " + shape_str(x.shape()) + " vs " +
                         shape_str(x0.shape()));
  Tensor out = x;
  for (int64_t i = 0; i < out.size(); ++i) {
    const float lo = std::max(x0[i] - epsilon, 0.0f);
    const float hi = std::min(x0[i] + epsilon, 1.0f);
    out[i] = std::min(std::max(out[i], lo), hi);
  }
  return out;
}

float cw_margin(const Tensor& logits_row, int label) {
  const int64_t c = logits_row.size();
  if (c < 2) throw Error::numeric("cw_margin: needs at least 2 classes");
  if (label < 0 || label >= c)
    throw Error::numeric("cw_margin: label " + std::to_string(label) + " out of range");
  float best = -std::numeric_limits<float>::infinity();
  for (int64_t i = 0; i < c; ++i) {
    if (i == label) continue;
    best = std::max(best, logits_row[i]);
  }
  return best - logits_row[label];
}

namespace {

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

Tensor uniform_ball_start(const Tensor& x0, float epsilon, uint64_t seed, int64_t base_index) {
  Tensor x = x0;
  const int batch = x0.dim(0);
  const int64_t per = x0.size() / batch;
  for (int r = 0; r < batch; ++r) {
    Rng rng(derive_stream(seed, static_cast<uint64_t>(base_index + r)));
    float* row = x.data() + static_cast<int64_t>(r) * per;
    for (int64_t i = 0; i < per; ++i) row[i] += rng.uniform(-epsilon, epsilon);
  }
  return project(x, x0, epsilon);
}

Tensor gaussian_start(const Tensor& x0, float sigma, float epsilon, uint64_t seed,
                      int64_t base_index) {
  Tensor x = x0;
  if (sigma > 0.0f && epsilon > 0.0f) {
    const int batch = x0.dim(0);
    const int64_t per = x0.size() / batch;
    for (int r = 0; r < batch; ++r) {
      Rng rng(derive_stream(seed, static_cast<uint64_t>(base_index + r)));
      float* row = x.data() + static_cast<int64_t>(r) * per;
      for (int64_t i = 0; i < per; ++i) row[i] += sigma * rng.gaussian();
    }
  }
  return project(x, x0, epsilon);
}

}  // namespace

CraftedBatch craft_from(const BatchLossFn& fn, const Tensor& x_start, const Tensor& x0,
                        const AttackConfig& cfg, FeasibilityAudit* audit) {
  cfg.validate();
  if (x0.rank() < 1) throw Error::numeric("craft: batch tensor required");
  const float dir = cfg.direction == AttackDirection::kAscend ? 1.0f : -1.0f;

  Tensor x = x_start;
  if (audit) audit->inspect(x, x0, cfg.epsilon);
  Tensor grad;
  for (int t = 0; t < cfg.steps; ++t) {
    fn(x, nullptr, &grad);
    for (int64_t i = 0; i < x.size(); ++i) x[i] += dir * cfg.alpha * sign_of(grad[i]);
    x = project(x, x0, cfg.epsilon);
    if (audit) audit->inspect(x, x0, cfg.epsilon);
  }

  CraftedBatch out;
  fn(x, &out.final_loss, nullptr);
  out.perturbation = Tensor(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) out.perturbation[i] = x[i] - x0[i];
  out.examples = std::move(x);
  return out;
}

CraftedBatch craft_with(const BatchLossFn& fn, const Tensor& x0, const AttackConfig& cfg,
                        FeasibilityAudit* audit, int64_t base_index) {
  cfg.validate();
  const Tensor start = cfg.start == AttackStart::kUniformRandom && cfg.epsilon > 0.0f
                           ? uniform_ball_start(x0, cfg.epsilon, cfg.seed, base_index)
                           : project(x0, x0, cfg.epsilon);
  return craft_from(fn, start, x0, cfg, audit);
}

namespace {

// Loss surface of the configured model objective for a sub-batch.
BatchLossFn model_loss_fn(const ModelSpec& spec, const Parameters& params,
                          std::vector<int> labels, AttackLoss loss) {
  return [&spec, &params, labels = std::move(labels), loss](
             const Tensor& x, std::vector<float>* out_loss, Tensor* out_grad) {
    const int batch = x.dim(0);
    const auto slots = param_exprs(spec);
    const Expr xe = input_batch(spec, "x", batch);
    const Expr lg = build_logits(spec, xe, slots);
    const Expr vec = loss == AttackLoss::kCe ? ce_rows(lg, labels) : cw_rows(lg, labels);
    Bindings b = bind_params(params);
    b.emplace("x", x);
    Session session(b);
    if (out_loss) {
      const Tensor& v = session.value(vec);
      out_loss->assign(v.data(), v.data() + v.size());
    }
    if (out_grad) {
      GradientMap g = session.gradients(sum(vec), {"x"});
      *out_grad = std::move(g.at("x"));
    }
  };
}

void merge_audit(FeasibilityAudit* into, const std::vector<FeasibilityAudit>& parts) {
  if (!into) return;
  for (const auto& a : parts) {
    into->checks += a.checks;
    into->ball_violations += a.ball_violations;
    into->range_violations += a.range_violations;
    into->worst_linf = std::max(into->worst_linf, a.worst_linf);
  }
}

}  // namespace

CraftedBatch craft(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch,
                   const std::vector<int>& y_batch, const AttackConfig& cfg,
                   FeasibilityAudit* audit, int workers, int64_t base_index) {
  cfg.validate();
  const int batch = x_batch.dim(0);
  if (static_cast<int>(y_batch.size()) != batch)
    throw Error::numeric("craft: label count does not match batch");

  if (workers <= 1 || batch < 2 * workers) {
    return craft_with(model_loss_fn(spec, params, y_batch, cfg.loss), x_batch, cfg, audit,
                      base_index);
  }

  const int shards = std::min(workers, batch);
  std::vector<CraftedBatch> parts(static_cast<size_t>(shards));
  std::vector<FeasibilityAudit> audits(static_cast<size_t>(shards));
  parallel_rows(batch, shards, [&](int lo, int hi, int s) {
    const Tensor xs = rows_slice(x_batch, lo, hi);
    std::vector<int> ys(y_batch.begin() + lo, y_batch.begin() + hi);
    parts[static_cast<size_t>(s)] =
        craft_with(model_loss_fn(spec, params, std::move(ys), cfg.loss), xs, cfg,
                   audit ? &audits[static_cast<size_t>(s)] : nullptr, base_index + lo);
  });

  CraftedBatch out;
  out.examples = Tensor(x_batch.shape());
  out.perturbation = Tensor(x_batch.shape());
  out.final_loss.resize(static_cast<size_t>(batch));
  const int64_t per = x_batch.size() / batch;
  int row = 0;
  for (const auto& part : parts) {
    const int rows = part.examples.dim(0);
    std::copy(part.examples.data(), part.examples.data() + rows * per,
              out.examples.data() + row * per);
    std::copy(part.perturbation.data(), part.perturbation.data() + rows * per,
              out.perturbation.data() + row * per);
    std::copy(part.final_loss.begin(), part.final_loss.end(), out.final_loss.begin() + row);
    row += rows;
  }
  merge_audit(audit, audits);
  return out;
}

CraftedBatch fgsm(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch,
                  const std::vector<int>& y_batch, float epsilon) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.alpha = epsilon > 0.0f ? epsilon : 1.0f;
  cfg.steps = 1;
  cfg.start = AttackStart::kBenign;
  cfg.loss = AttackLoss::kCe;
  cfg.direction = AttackDirection::kAscend;
  return craft(spec, params, x_batch, y_batch, cfg);
}

namespace {

Tensor kl_ascent_block(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                       const KlInnerConfig& cfg, FeasibilityAudit* audit, int64_t base_index) {
  const Tensor benign_probs = probs(spec, params, x);

  const int batch = x.dim(0);
  const auto slots = param_exprs(spec);
  const Expr xe = input_batch(spec, "x", batch);
  const Expr p_adv = softmax_rows(build_logits(spec, xe, slots));
  const Expr vec = kl_rows(p_adv, constant(benign_probs));
  const Expr total = sum(vec);
  const Bindings param_bind = bind_params(params);

  Tensor xp = gaussian_start(x, cfg.init_sigma, cfg.epsilon, cfg.seed, base_index);
  if (audit) audit->inspect(xp, x, cfg.epsilon);
  for (int t = 0; t < cfg.steps; ++t) {
    Bindings b = param_bind;
    b.emplace("x", xp);
    Session session(b);
    GradientMap g = session.gradients(total, {"x"});
    const Tensor& gx = g.at("x");
    for (int64_t i = 0; i < xp.size(); ++i) xp[i] += cfg.alpha * sign_of(gx[i]);
    xp = project(xp, x, cfg.epsilon);
    if (audit) audit->inspect(xp, x, cfg.epsilon);
  }
  return xp;
}

}  // namespace

Tensor kl_ascent(const ModelSpec& spec, const Parameters& params, const Tensor& x_batch,
                 const KlInnerConfig& cfg, FeasibilityAudit* audit, int workers,
                 int64_t base_index) {
  cfg.validate();
  const int batch = x_batch.dim(0);
  if (workers <= 1 || batch < 2 * workers) {
    return kl_ascent_block(spec, params, x_batch, cfg, audit, base_index);
  }
  const int shards = std::min(workers, batch);
  Tensor out(x_batch.shape());
  std::vector<FeasibilityAudit> audits(static_cast<size_t>(shards));
  const int64_t per = x_batch.size() / batch;
  parallel_rows(batch, shards, [&](int lo, int hi, int s) {
    const Tensor xs = rows_slice(x_batch, lo, hi);
    const Tensor part = kl_ascent_block(spec, params, xs, cfg,
                                        audit ? &audits[static_cast<size_t>(s)] : nullptr,
                                        base_index + lo);
    std::copy(part.data(), part.data() + part.size(), out.data() + lo * per);
  });
  merge_audit(audit, audits);
  return out;
}

}  // namespace st

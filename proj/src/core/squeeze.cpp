#include "core/squeeze.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace st {

void InnerConfig::validate() const {
  if (steps < 0) throw Error::usage("squeeze: K must be >= 0");
  if (alpha <= 0.0f) throw Error::usage("squeeze: alpha must be > 0");
  if (epsilon < 0.0f) throw Error::usage("squeeze: epsilon must be >= 0");
  if (init_sigma < 0.0f) throw Error::usage("squeeze: init_sigma must be >= 0");
  if (!reg_is_symmetric(reg))
    throw Error::usage("squeeze: regularizer must be symmetric (kl is not)");
}

std::vector<float> ce_values(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                             const std::vector<int>& y) {
  const auto slots = param_exprs(spec);
  const Expr xe = input_batch(spec, "x", x.dim(0));
  const Expr vec = ce_rows(build_logits(spec, xe, slots), y);
  Bindings b = bind_params(params);
  b.emplace("x", x);
  const Tensor v = forward(vec, b);
  return {v.data(), v.data() + v.size()};
}

namespace {

float sign_of(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

void copy_row(const Tensor& src, int src_row, Tensor& dst, int dst_row) {
  const int64_t per = src.size() / src.dim(0);
  std::copy(src.data() + src_row * per, src.data() + (src_row + 1) * per,
            dst.data() + dst_row * per);
}

// argmax of CE over the triplet with tie preference x' > x > x''; argmin
// with preference x'' > x > x'. Keeping the benign example out of the pair
// whenever a perturbed candidate ties it.
int select_max(float ce_x, float ce_p, float ce_pp) {
  // candidate order: x'(1), x(0), x''(2)
  int best = 1;
  float val = ce_p;
  if (ce_x > val) {
    best = 0;
    val = ce_x;
  }
  if (ce_pp > val) best = 2;
  return best;
}

int select_min(float ce_x, float ce_p, float ce_pp) {
  // candidate order: x''(2), x(0), x'(1)
  int best = 2;
  float val = ce_pp;
  if (ce_x < val) {
    best = 0;
    val = ce_x;
  }
  if (ce_p < val) best = 1;
  return best;
}

SqueezePair squeeze_pair_block(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                               const std::vector<int>& y, const InnerConfig& cfg,
                               TripletAudit* triplet_audit, FeasibilityAudit* feas_audit,
                               int64_t base_index) {
  const int batch = x.dim(0);
  const int64_t per = x.size() / batch;

  // Gaussian inits, independent per member, projected immediately so the
  // feasibility invariant holds from step 0.
  Tensor xp = x, xpp = x;
  if (cfg.init_sigma > 0.0f && cfg.epsilon > 0.0f) {
    for (int r = 0; r < batch; ++r) {
      Rng rng(derive_stream(cfg.seed, static_cast<uint64_t>(base_index + r)));
      float* p = xp.data() + r * per;
      float* pp = xpp.data() + r * per;
      for (int64_t i = 0; i < per; ++i) p[i] += cfg.init_sigma * rng.gaussian();
      for (int64_t i = 0; i < per; ++i) pp[i] += cfg.init_sigma * rng.gaussian();
    }
  }
  xp = project(xp, x, cfg.epsilon);
  xpp = project(xpp, x, cfg.epsilon);

  const std::vector<float> ce_x = ce_values(spec, params, x, y);

  SqueezePair out;
  out.x_adv = Tensor(x.shape());
  out.x_col = Tensor(x.shape());

  // Graph for g_inner over the currently selected pair.
  const auto slots = param_exprs(spec);
  const Expr adv_in = input_batch(spec, "xadv", batch);
  const Expr col_in = input_batch(spec, "xcol", batch);
  const Expr p_adv = softmax_rows(build_logits(spec, adv_in, slots));
  const Expr p_col = softmax_rows(build_logits(spec, col_in, slots));
  const Expr g_vec = reg_rows(cfg.reg, p_adv, p_col);
  const Expr g_sum = sum(g_vec);
  const Bindings param_bind = bind_params(params);

  auto select_into = [&](const std::vector<float>& ce_p, const std::vector<float>& ce_pp,
                         SqueezeStepTrace& tr) {
    tr.ce_benign = ce_x;
    tr.ce_adv.resize(static_cast<size_t>(batch));
    tr.ce_col.resize(static_cast<size_t>(batch));
    for (int r = 0; r < batch; ++r) {
      const Tensor* members[3] = {&x, &xp, &xpp};
      const float ces[3] = {ce_x[static_cast<size_t>(r)], ce_p[static_cast<size_t>(r)],
                            ce_pp[static_cast<size_t>(r)]};
      const int mx = select_max(ces[0], ces[1], ces[2]);
      const int mn = select_min(ces[0], ces[1], ces[2]);
      copy_row(*members[mx], r, out.x_adv, r);
      copy_row(*members[mn], r, out.x_col, r);
      tr.ce_adv[static_cast<size_t>(r)] = ces[mx];
      tr.ce_col[static_cast<size_t>(r)] = ces[mn];
      if (triplet_audit) {
        ++triplet_audit->selections;
        if (!(ces[mn] <= ces[0] && ces[0] <= ces[mx])) ++triplet_audit->chain_violations;
      }
    }
  };

  for (int k = cfg.steps; k >= 0; --k) {
    SqueezeStepTrace tr;
    const std::vector<float> ce_p = ce_values(spec, params, xp, y);
    const std::vector<float> ce_pp = ce_values(spec, params, xpp, y);
    select_into(ce_p, ce_pp, tr);

    Bindings b = param_bind;
    b.emplace("xadv", out.x_adv);
    b.emplace("xcol", out.x_col);
    Session session(b);
    const Tensor& g = session.value(g_vec);
    tr.g_inner.assign(g.data(), g.data() + g.size());
    out.trace.push_back(std::move(tr));

    GradientMap grads = session.gradients(g_sum, {"xadv", "xcol"});
    const Tensor& ga = grads.at("xadv");
    const Tensor& gc = grads.at("xcol");
    Tensor next_p = out.x_adv, next_pp = out.x_col;
    for (int64_t i = 0; i < next_p.size(); ++i) next_p[i] += cfg.alpha * sign_of(ga[i]);
    for (int64_t i = 0; i < next_pp.size(); ++i) next_pp[i] += cfg.alpha * sign_of(gc[i]);
    xp = project(next_p, x, cfg.epsilon);
    xpp = project(next_pp, x, cfg.epsilon);
    if (feas_audit) {
      feas_audit->inspect(xp, x, cfg.epsilon);
      feas_audit->inspect(xpp, x, cfg.epsilon);
    }
  }

  if (cfg.final_reselect) {
    SqueezeStepTrace tr;
    const std::vector<float> ce_p = ce_values(spec, params, xp, y);
    const std::vector<float> ce_pp = ce_values(spec, params, xpp, y);
    select_into(ce_p, ce_pp, tr);
    Bindings b = param_bind;
    b.emplace("xadv", out.x_adv);
    b.emplace("xcol", out.x_col);
    const Tensor g = forward(g_vec, b);
    tr.g_inner.assign(g.data(), g.data() + g.size());
    out.trace.push_back(std::move(tr));
  }

  if (feas_audit) {
    feas_audit->inspect(out.x_adv, x, cfg.epsilon);
    feas_audit->inspect(out.x_col, x, cfg.epsilon);
  }
  return out;
}

}  // namespace

SqueezePair squeeze_pair(const ModelSpec& spec, const Parameters& params, const Tensor& x,
                         const std::vector<int>& y, const InnerConfig& cfg,
                         TripletAudit* triplet_audit, FeasibilityAudit* feas_audit, int workers,
                         int64_t base_index) {
  cfg.validate();
  const int batch = x.dim(0);
  if (static_cast<int>(y.size()) != batch)
    throw Error::numeric("squeeze_pair: label count does not match batch");

  if (workers <= 1 || batch < 2 * workers) {
    return squeeze_pair_block(spec, params, x, y, cfg, triplet_audit, feas_audit, base_index);
  }

  const int shards = std::min(workers, batch);
  std::vector<SqueezePair> parts(static_cast<size_t>(shards));
  std::vector<TripletAudit> taudits(static_cast<size_t>(shards));
  std::vector<FeasibilityAudit> faudits(static_cast<size_t>(shards));
  parallel_rows(batch, shards, [&](int lo, int hi, int s) {
    const Tensor xs = rows_slice(x, lo, hi);
    const std::vector<int> ys(y.begin() + lo, y.begin() + hi);
    parts[static_cast<size_t>(s)] = squeeze_pair_block(
        spec, params, xs, ys, cfg, triplet_audit ? &taudits[static_cast<size_t>(s)] : nullptr,
        feas_audit ? &faudits[static_cast<size_t>(s)] : nullptr, base_index + lo);
  });

  SqueezePair out;
  out.x_adv = Tensor(x.shape());
  out.x_col = Tensor(x.shape());
  const size_t steps = parts[0].trace.size();
  out.trace.resize(steps);
  const int64_t per = x.size() / batch;
  int row = 0;
  for (const auto& part : parts) {
    const int rows = part.x_adv.dim(0);
    std::copy(part.x_adv.data(), part.x_adv.data() + rows * per, out.x_adv.data() + row * per);
    std::copy(part.x_col.data(), part.x_col.data() + rows * per, out.x_col.data() + row * per);
    for (size_t t = 0; t < steps; ++t) {
      auto append = [](std::vector<float>& dst, const std::vector<float>& src) {
        dst.insert(dst.end(), src.begin(), src.end());
      };
      append(out.trace[t].ce_adv, part.trace[t].ce_adv);
      append(out.trace[t].ce_col, part.trace[t].ce_col);
      append(out.trace[t].ce_benign, part.trace[t].ce_benign);
      append(out.trace[t].g_inner, part.trace[t].g_inner);
    }
    row += rows;
  }
  if (triplet_audit) {
    for (const auto& a : taudits) {
      triplet_audit->selections += a.selections;
      triplet_audit->chain_violations += a.chain_violations;
    }
  }
  if (feas_audit) {
    for (const auto& a : faudits) {
      feas_audit->checks += a.checks;
      feas_audit->ball_violations += a.ball_violations;
      feas_audit->range_violations += a.range_violations;
      feas_audit->worst_linf = std::max(feas_audit->worst_linf, a.worst_linf);
    }
  }
  return out;
}

std::vector<NeighborClass> classify_neighbor(const ModelSpec& spec, const Parameters& params,
                                             const Tensor& x, const std::vector<int>& y,
                                             const Tensor& x_neighbor) {
  if (!x.same_shape(x_neighbor))
    throw Error::numeric("classify_neighbor: shape " + shape_str(x.shape()) + " vs " +
                         shape_str(x_neighbor.shape()));
  constexpr float kTau = 1e-6f;
  const std::vector<float> ce_x = ce_values(spec, params, x, y);
  const std::vector<float> ce_n = ce_values(spec, params, x_neighbor, y);
  std::vector<NeighborClass> out(ce_x.size());
  for (size_t i = 0; i < ce_x.size(); ++i) {
    if (ce_n[i] < ce_x[i] - kTau) {
      out[i] = NeighborClass::kCollaborative;
    } else if (ce_n[i] > ce_x[i] + kTau) {
      out[i] = NeighborClass::kAdversarial;
    } else {
      out[i] = NeighborClass::kNeutral;
    }
  }
  return out;
}

}  // namespace st

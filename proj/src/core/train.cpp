#include "core/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "core/error.hpp"
#include "core/eval.hpp"
#include "core/rng.hpp"

namespace st {

std::string method_name(Method m) {
  switch (m) {
    case Method::kStandard: return "standard";
    case Method::kAt: return "at";
    case Method::kTrades: return "trades";
    case Method::kCollab: return "collab";
    case Method::kSt: return "st";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "standard") return Method::kStandard;
  if (name == "at") return Method::kAt;
  if (name == "trades") return Method::kTrades;
  if (name == "collab") return Method::kCollab;
  if (name == "st") return Method::kSt;
  throw Error::usage("unknown training method '" + name +
                     "' (expected standard|at|trades|collab|st)");
}

void TrainConfig::validate() const {
  if (beta < 0.0f) throw Error::usage("train: beta must be >= 0");
  if (lr <= 0.0f) throw Error::usage("train: lr must be > 0");
  if (batch < 1) throw Error::usage("train: batch must be >= 1");
  if (epochs < 1) throw Error::usage("train: epochs must be >= 1");
  for (size_t i = 0; i + 1 < lr_decay_epochs.size(); ++i)
    if (lr_decay_epochs[i] >= lr_decay_epochs[i + 1])
      throw Error::usage("train: lr_decay_epochs must be strictly increasing");
  if (!lr_decay_epochs.empty() && lr_decay_epochs.back() >= epochs)
    throw Error::usage("train: lr_decay_epochs must be < epochs");
  if (method != Method::kStandard) {
    if (inner_alpha <= 0.0f) throw Error::usage("train: inner alpha must be > 0");
    if (epsilon < 0.0f) throw Error::usage("train: epsilon must be >= 0");
  }
  if (method == Method::kSt && !reg_is_symmetric(reg))
    throw Error::usage("train: st requires a symmetric regularizer");
}

namespace {

// Shared benign-CE subtree; identical construction across methods keeps the
// beta=0 degeneracy exact.
struct Pieces {
  std::map<std::string, Expr> slots;
  Expr mean_ce;
};

Pieces benign_ce(const ModelSpec& spec, int batch, const std::vector<int>& y) {
  Pieces p;
  p.slots = param_exprs(spec);
  const Expr x = input_batch(spec, "x", batch);
  p.mean_ce = mean(ce_rows(build_logits(spec, x, p.slots), y));
  return p;
}

Expr beta_tail(const Expr& vec, float beta, int batch) {
  return scale(sum(vec), beta / static_cast<float>(batch));
}

}  // namespace

BatchLoss batch_loss(Method method, const ModelSpec& spec, const Parameters& params,
                     const Tensor& x_batch, const std::vector<int>& y_batch,
                     const TrainConfig& cfg, uint64_t inner_seed) {
  const int batch = x_batch.dim(0);
  BatchLoss out;
  out.bindings = bind_params(params);
  out.bindings.emplace("x", x_batch);

  switch (method) {
    case Method::kStandard: {
      Pieces p = benign_ce(spec, batch, y_batch);
      out.loss = p.mean_ce;
      break;
    }
    case Method::kAt: {
      AttackConfig inner;
      inner.epsilon = cfg.epsilon;
      inner.alpha = cfg.inner_alpha;
      inner.steps = std::max(1, cfg.inner_steps);
      inner.start = cfg.at_start;
      inner.loss = AttackLoss::kCe;
      inner.direction = AttackDirection::kAscend;
      inner.seed = inner_seed;
      CraftedBatch adv =
          craft(spec, params, x_batch, y_batch, inner, cfg.feas_audit, cfg.workers);
      const auto slots = param_exprs(spec);
      const Expr xadv = input_batch(spec, "xadv", batch);
      out.loss = mean(ce_rows(build_logits(spec, xadv, slots), y_batch));
      out.bindings.emplace("xadv", std::move(adv.examples));
      break;
    }
    case Method::kTrades: {
      KlInnerConfig inner;
      inner.steps = cfg.inner_steps;
      inner.alpha = cfg.inner_alpha;
      inner.epsilon = cfg.epsilon;
      inner.init_sigma = cfg.init_sigma;
      inner.seed = inner_seed;
      Tensor xadv = kl_ascent(spec, params, x_batch, inner, cfg.feas_audit, cfg.workers);
      Pieces p = benign_ce(spec, batch, y_batch);
      const Expr x = input_batch(spec, "x", batch);
      const Expr xa = input_batch(spec, "xadv", batch);
      const Expr p_benign = softmax_rows(build_logits(spec, x, p.slots));
      const Expr p_adv = softmax_rows(build_logits(spec, xa, p.slots));
      out.loss = add(p.mean_ce, beta_tail(kl_rows(p_adv, p_benign), cfg.beta, batch));
      out.bindings.emplace("xadv", std::move(xadv));
      break;
    }
    case Method::kCollab: {
      AttackConfig inner;
      inner.epsilon = cfg.epsilon;
      inner.alpha = cfg.inner_alpha;
      inner.steps = std::max(1, cfg.inner_steps);
      inner.start = AttackStart::kBenign;
      inner.loss = AttackLoss::kCe;
      inner.direction = AttackDirection::kDescend;
      inner.seed = inner_seed;
      CraftedBatch col =
          craft(spec, params, x_batch, y_batch, inner, cfg.feas_audit, cfg.workers);
      Pieces p = benign_ce(spec, batch, y_batch);
      const Expr x = input_batch(spec, "x", batch);
      const Expr xc = input_batch(spec, "xcol", batch);
      const Expr p_benign = softmax_rows(build_logits(spec, x, p.slots));
      const Expr p_col = softmax_rows(build_logits(spec, xc, p.slots));
      out.loss = add(p.mean_ce, beta_tail(kl_rows(p_col, p_benign), cfg.beta, batch));
      out.bindings.emplace("xcol", std::move(col.examples));
      break;
    }
    case Method::kSt: {
      InnerConfig inner;
      inner.steps = cfg.inner_steps;
      inner.alpha = cfg.inner_alpha;
      inner.epsilon = cfg.epsilon;
      inner.reg = cfg.reg;
      inner.init_sigma = cfg.init_sigma;
      inner.seed = inner_seed;
      inner.final_reselect = cfg.final_reselect;
      SqueezePair pair = squeeze_pair(spec, params, x_batch, y_batch, inner, cfg.triplet_audit,
                                      cfg.feas_audit, cfg.workers);
      Pieces p = benign_ce(spec, batch, y_batch);
      const Expr xa = input_batch(spec, "xadv", batch);
      const Expr xc = input_batch(spec, "xcol", batch);
      const Expr p_adv = softmax_rows(build_logits(spec, xa, p.slots));
      const Expr p_col = softmax_rows(build_logits(spec, xc, p.slots));
      out.loss = add(p.mean_ce, beta_tail(reg_rows(cfg.reg, p_adv, p_col), cfg.beta, batch));
      out.bindings.emplace("xadv", std::move(pair.x_adv));
      out.bindings.emplace("xcol", std::move(pair.x_col));
      break;
    }
  }
  return out;
}

void sgd_step(Parameters& params, const GradientMap& grads, OptimizerState& state,
              float weight_decay) {
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw Error::numeric("sgd_step: missing gradient for '" + name + "'");
    const Tensor& g = git->second;
    if (!g.same_shape(p))
      throw Error::numeric("sgd_step: gradient shape mismatch for '" + name + "'");
    auto vit = state.velocity.find(name);
    if (vit == state.velocity.end()) vit = state.velocity.emplace(name, Tensor(p.shape())).first;
    Tensor& v = vit->second;
    for (int64_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + (g[i] + weight_decay * p[i]);
      p[i] -= state.lr * v[i];
    }
  }
}

float lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw Error::usage("lr_at_epoch: epoch " + std::to_string(epoch) + " out of range");
  float lr = cfg.lr;
  for (int decay : cfg.lr_decay_epochs)
    if (decay <= epoch) lr *= cfg.lr_decay_factor;
  return lr;
}

namespace {

struct EpochEval {
  float clean = 0.0f;
  float robust = 0.0f;
  float collab_ratio = 0.0f;
};

EpochEval evaluate_epoch(const ModelSpec& spec, const Parameters& params,
                         const Dataset& select_data, const TrainConfig& cfg, int epoch) {
  EpochEval ev;
  ev.clean = accuracy(spec, params, select_data.inputs, select_data.labels, cfg.workers);
  AttackConfig atk = cfg.eval_attack;
  atk.seed = derive_stream(atk.seed, 0x9e77u + static_cast<uint64_t>(epoch));
  CraftedBatch crafted =
      craft(spec, params, select_data.inputs, select_data.labels, atk, nullptr, cfg.workers);
  ev.robust = accuracy(spec, params, crafted.examples, select_data.labels, cfg.workers);
  if (cfg.track_collab_ratio) {
    KlInnerConfig inner;
    inner.steps = cfg.inner_steps;
    inner.alpha = cfg.inner_alpha;
    inner.epsilon = cfg.epsilon;
    inner.init_sigma = cfg.init_sigma;
    inner.seed = derive_stream(cfg.seed, 0xC0DE + static_cast<uint64_t>(epoch));
    ev.collab_ratio =
        static_cast<float>(collab_ratio_probe(spec, params, select_data, inner, cfg.workers).ratio);
  }
  return ev;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const Dataset& train_data, const Dataset& select_data,
                  const TrainConfig& cfg, bool verbose) {
  cfg.validate();
  if (train_data.size() == 0) throw Error::data("train: empty dataset");
  if (select_data.size() == 0) throw Error::data("train: empty selection subset");

  const int n = train_data.size();
  Parameters params = init_params(spec, cfg.seed);
  const std::vector<std::string> names = param_names(spec);

  OptimizerState state;
  state.momentum = cfg.momentum;

  TrainResult result;
  auto record = [&](int epoch, float lr, bool has_loss, float loss, const EpochEval& ev,
                    double secs) {
    MetricsRecord r;
    r.epoch = epoch;
    r.lr = lr;
    r.has_train_loss = has_loss;
    r.train_loss = loss;
    r.clean_acc = ev.clean;
    r.pgd20_acc = ev.robust;
    r.has_collab_ratio = cfg.track_collab_ratio;
    r.collab_ratio = ev.collab_ratio;
    r.wall_seconds = secs;
    result.series.push_back(r);
    if (!result.best_meta.is_best || ev.robust > result.best_meta.pgd20_acc) {
      result.best_meta = {epoch, ev.clean, ev.robust, true};
      result.best = params;
    }
    if (verbose) {
      std::printf("epoch %3d  lr %.4g  %s%s  clean %.4f  pgd20 %.4f  (%.1fs)\n", epoch, lr,
                  has_loss ? "loss " : "", has_loss ? format_g6(loss).c_str() : "", ev.clean,
                  ev.robust, secs);
      std::fflush(stdout);
    }
  };

  {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochEval ev = evaluate_epoch(spec, params, select_data, cfg, 0);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record(0, lr_at_epoch(cfg, 0), false, 0.0f, ev, secs);
  }

  const int64_t per = train_data.inputs.size() / n;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    state.lr = lr_at_epoch(cfg, epoch);
    state.epoch = epoch;

    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_stream(cfg.seed, 0xE70C4ull + static_cast<uint64_t>(epoch)));
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.below(static_cast<uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double loss_sum = 0.0;
    int batch_index = 0;
    for (int start = 0; start < n; start += cfg.batch, ++batch_index) {
      const int count = std::min(cfg.batch, n - start);
      Shape bshape = train_data.inputs.shape();
      bshape[0] = count;
      Tensor x(bshape);
      std::vector<int> y(static_cast<size_t>(count));
      for (int i = 0; i < count; ++i) {
        const int src = order[static_cast<size_t>(start + i)];
        std::copy(train_data.inputs.data() + src * per, train_data.inputs.data() + (src + 1) * per,
                  x.data() + static_cast<int64_t>(i) * per);
        y[static_cast<size_t>(i)] = train_data.labels[static_cast<size_t>(src)];
      }
      const uint64_t inner_seed = derive_stream(
          cfg.seed, 0xBA7C41ull + static_cast<uint64_t>(epoch) * 1000003ull +
                        static_cast<uint64_t>(batch_index));
      BatchLoss bl = batch_loss(cfg.method, spec, params, x, y, cfg, inner_seed);
      Session session(bl.bindings);
      const float loss_val = session.value(bl.loss)[0];
      if (!std::isfinite(loss_val))
        throw Error::numeric("train: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += static_cast<double>(loss_val) * count;
      GradientMap grads = session.gradients(bl.loss, names);
      sgd_step(params, grads, state, cfg.weight_decay);
    }

    const EpochEval ev = evaluate_epoch(spec, params, select_data, cfg, epoch + 1);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    record(epoch + 1, state.lr, true, static_cast<float>(loss_sum / n), ev, secs);
  }

  result.final = std::move(params);
  return result;
}

}  // namespace st

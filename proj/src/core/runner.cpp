#include "core/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/checkpoint.hpp"
#include "core/error.hpp"
#include "core/metrics.hpp"
#include "core/rng.hpp"

namespace st {

namespace {

namespace fs = std::filesystem;

std::string fmt(float v) { return format_g6(v); }

void set_default(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (!cfg.has(key)) cfg.set(key, value);
}

void ensure_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error::data("cannot create output directory '" + out_dir + "'");
}

void echo_config(const RunConfig& resolved, const std::string& out_dir) {
  std::ofstream f(fs::path(out_dir) / "config_resolved.txt", std::ios::binary);
  if (!f) throw Error::data("cannot write config echo under '" + out_dir + "'");
  f << resolved.serialized();
}

std::string path_under(const std::string& out_dir, const std::string& name) {
  return (fs::path(out_dir) / name).string();
}

}  // namespace

RunConfig resolve(const RunConfig& user) {
  RunConfig cfg = user;
  set_default(cfg, "seed", "1");
  set_default(cfg, "workers", "1");

  set_default(cfg, "data.kind", "digits");
  const std::string kind = cfg.get_str("data.kind", "digits");
  if (kind != "digits" && kind != "blobs" && kind != "idx" && kind != "cifar10")
    throw Error::usage("data.kind '" + kind + "' (expected digits|blobs|idx|cifar10)");
  set_default(cfg, "data.n", "2000");
  set_default(cfg, "data.test_n", "1000");
  if (kind == "blobs") {
    set_default(cfg, "data.classes", "4");
    set_default(cfg, "data.dim", "8");
    set_default(cfg, "data.separation", "0.5");
  }

  // Scale defaults per dataset kind.
  const bool cifar_scale = kind == "cifar10";
  const std::string def_eps = cifar_scale ? "8/255" : (kind == "blobs" ? "0.1" : "0.3");
  const std::string def_alpha = cifar_scale ? "2/255" : "0.01";
  set_default(cfg, "attack.epsilon", def_eps);
  set_default(cfg, "attack.alpha", def_alpha);
  set_default(cfg, "attack.steps", "20");
  set_default(cfg, "attack.start", "random");
  set_default(cfg, "attack.loss", "ce");
  set_default(cfg, "attack.direction", "ascend");
  set_default(cfg, "attack.seed", "7");

  set_default(cfg, "train.model", "mlp");
  set_default(cfg, "train.hidden", "256,256");
  set_default(cfg, "train.channels", "16,32");
  set_default(cfg, "train.method", "st");
  set_default(cfg, "train.epochs", "120");
  set_default(cfg, "train.batch", "128");
  set_default(cfg, "train.lr", "0.1");
  set_default(cfg, "train.momentum", "0.9");
  set_default(cfg, "train.weight_decay", "0.0005");
  set_default(cfg, "train.lr_decay_epochs", "80,100");
  set_default(cfg, "train.lr_decay_factor", "0.1");
  set_default(cfg, "train.beta", "6");
  set_default(cfg, "train.reg", "symkl");
  set_default(cfg, "train.epsilon", cfg.get_str("attack.epsilon", def_eps));
  // Inner step size: the 2/255-on-8/255 ratio scaled to this epsilon.
  {
    const float eps = cfg.get_float("train.epsilon", 0.3f);
    set_default(cfg, "train.alpha", fmt(eps / 4.0f));
  }
  set_default(cfg, "train.inner_steps", "10");
  set_default(cfg, "train.init_sigma", "0.001");
  set_default(cfg, "train.inner_start", "random");
  set_default(cfg, "train.final_reselect", "0");
  set_default(cfg, "train.track_ratio", "0");

  set_default(cfg, "eval.attacks", "fgsm,pgd20,pgd100,cw100");
  set_default(cfg, "eval.subset_n", "1000");
  set_default(cfg, "eval.select_n", "1000");
  set_default(cfg, "eval.seed", "7");
  {
    const float eps = cfg.get_float("attack.epsilon", 0.3f);
    std::ostringstream budgets;
    budgets << fmt(eps / 8) << "," << fmt(eps / 4) << "," << fmt(eps / 2) << "," << fmt(eps);
    set_default(cfg, "eval.budgets", budgets.str());
    set_default(cfg, "eval.extent", fmt(2 * eps));
  }
  set_default(cfg, "eval.grid", "41");
  set_default(cfg, "eval.bins", "36");
  set_default(cfg, "eval.index", "0");
  return cfg;
}

Dataset open_dataset(const RunConfig& cfg, const std::string& role) {
  const std::string kind = cfg.get_str("data.kind", "digits");
  const uint64_t seed = cfg.get_u64("seed", 1);
  const int n = cfg.get_int(role == "train" ? "data.n" : "data.test_n", 1000);
  Dataset d;
  if (kind == "digits") {
    d = synth_digits(derive_stream(seed, fnv1a64(role)), n);
  } else if (kind == "blobs") {
    d = synth_blobs(derive_stream(seed, fnv1a64(role)), n, cfg.get_int("data.classes", 4),
                    cfg.get_int("data.dim", 8), cfg.get_float("data.separation", 0.5f));
  } else if (kind == "idx") {
    const std::string img = role == "train" ? cfg.get_str("data.images", "")
                                            : cfg.get_str("data.test_images", "");
    const std::string lab = role == "train" ? cfg.get_str("data.labels", "")
                                            : cfg.get_str("data.test_labels", "");
    if (img.empty() || lab.empty())
      throw Error::usage("data.kind=idx requires data." + std::string(role == "train" ? "" : "test_") +
                         "images and matching labels paths");
    d = load_idx(img, lab);
    if (d.size() > n) d = subset(d, 0, n);
  } else {
    const std::string dir = cfg.get_str("data.dir", "");
    if (dir.empty()) throw Error::usage("data.kind=cifar10 requires data.dir");
    std::vector<std::string> paths;
    if (role == "train") {
      for (int i = 1; i <= 5; ++i)
        paths.push_back((fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string());
    } else {
      paths.push_back((fs::path(dir) / "test_batch.bin").string());
    }
    d = load_cifar10_bin(paths);
    if (d.size() > n) d = subset(d, 0, n);
  }
  d.split = role;
  return d;
}

ModelSpec model_spec_from(const RunConfig& cfg, const Dataset& data) {
  Shape input(data.inputs.shape().begin() + 1, data.inputs.shape().end());
  const std::string kind = cfg.get_str("train.model", "mlp");
  if (kind == "mlp")
    return ModelSpec::mlp(input, cfg.get_int_list("train.hidden", {256, 256}), data.classes);
  if (kind == "small_cnn")
    return ModelSpec::small_cnn(input, cfg.get_int_list("train.channels", {16, 32}),
                                data.classes);
  throw Error::usage("train.model '" + kind + "' (expected mlp|small_cnn)");
}

namespace {

AttackStart start_from(const std::string& s, const std::string& key) {
  if (s == "benign") return AttackStart::kBenign;
  if (s == "random") return AttackStart::kUniformRandom;
  throw Error::usage(key + ": '" + s + "' (expected benign|random)");
}

}  // namespace

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.method = method_from_name(cfg.get_str("train.method", "st"));
  tc.beta = cfg.get_float("train.beta", 6.0f);
  tc.reg = reg_kind_from_name(cfg.get_str("train.reg", "symkl"));
  tc.inner_steps = cfg.get_int("train.inner_steps", 10);
  tc.epsilon = cfg.get_float("train.epsilon", 0.3f);
  tc.inner_alpha = cfg.get_float("train.alpha", tc.epsilon / 4.0f);
  tc.init_sigma = cfg.get_float("train.init_sigma", 0.001f);
  tc.at_start = start_from(cfg.get_str("train.inner_start", "random"), "train.inner_start");
  tc.final_reselect = cfg.get_bool("train.final_reselect", false);
  tc.epochs = cfg.get_int("train.epochs", 120);
  tc.batch = cfg.get_int("train.batch", 128);
  tc.lr = cfg.get_float("train.lr", 0.1f);
  tc.momentum = cfg.get_float("train.momentum", 0.9f);
  tc.weight_decay = cfg.get_float("train.weight_decay", 0.0005f);
  tc.lr_decay_epochs = cfg.get_int_list("train.lr_decay_epochs", {80, 100});
  tc.lr_decay_factor = cfg.get_float("train.lr_decay_factor", 0.1f);
  tc.select_n = cfg.get_int("eval.select_n", 1000);
  tc.track_collab_ratio = cfg.get_bool("train.track_ratio", false);
  tc.seed = cfg.get_u64("seed", 1);
  tc.workers = cfg.get_int("workers", 1);

  tc.eval_attack.epsilon = cfg.get_float("attack.epsilon", tc.epsilon);
  tc.eval_attack.alpha = cfg.get_float("attack.alpha", 0.01f);
  tc.eval_attack.steps = 20;
  tc.eval_attack.start = AttackStart::kUniformRandom;
  tc.eval_attack.loss = AttackLoss::kCe;
  tc.eval_attack.direction = AttackDirection::kAscend;
  tc.eval_attack.seed = cfg.get_u64("eval.seed", 7);
  return tc;
}

AttackConfig attack_config_from(const RunConfig& cfg) {
  AttackConfig ac;
  ac.epsilon = cfg.get_float("attack.epsilon", 0.3f);
  ac.alpha = cfg.get_float("attack.alpha", 0.01f);
  ac.steps = cfg.get_int("attack.steps", 20);
  ac.start = start_from(cfg.get_str("attack.start", "random"), "attack.start");
  const std::string loss = cfg.get_str("attack.loss", "ce");
  if (loss == "ce") {
    ac.loss = AttackLoss::kCe;
  } else if (loss == "cw") {
    ac.loss = AttackLoss::kCwMargin;
  } else {
    throw Error::usage("attack.loss '" + loss + "' (expected ce|cw)");
  }
  const std::string dir = cfg.get_str("attack.direction", "ascend");
  if (dir == "ascend") {
    ac.direction = AttackDirection::kAscend;
  } else if (dir == "descend") {
    ac.direction = AttackDirection::kDescend;
  } else {
    throw Error::usage("attack.direction '" + dir + "' (expected ascend|descend)");
  }
  ac.seed = cfg.get_u64("attack.seed", 7);
  return ac;
}

std::vector<NamedAttack> attack_suite_from(const RunConfig& cfg) {
  const float eps = cfg.get_float("attack.epsilon", 0.3f);
  const float alpha = cfg.get_float("attack.alpha", 0.01f);
  const uint64_t seed = cfg.get_u64("eval.seed", 7);
  std::vector<NamedAttack> suite;
  std::stringstream ss(cfg.get_str("eval.attacks", "fgsm,pgd20,pgd100,cw100"));
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    NamedAttack atk;
    atk.name = name;
    AttackConfig& c = atk.cfg;
    c.epsilon = eps;
    c.alpha = alpha;
    c.seed = seed;
    c.loss = AttackLoss::kCe;
    c.direction = AttackDirection::kAscend;
    if (name == "fgsm") {
      c.steps = 1;
      c.alpha = eps > 0.0f ? eps : alpha;
      c.start = AttackStart::kBenign;
    } else if (name == "pgd20") {
      c.steps = 20;
      c.start = AttackStart::kUniformRandom;
    } else if (name == "pgd100") {
      c.steps = 100;
      c.start = AttackStart::kUniformRandom;
    } else if (name == "cw100") {
      c.steps = 100;
      c.start = AttackStart::kUniformRandom;
      c.loss = AttackLoss::kCwMargin;
    } else {
      throw Error::usage("eval.attacks: unknown attack '" + name +
                         "' (expected fgsm|pgd20|pgd100|cw100)");
    }
    suite.push_back(std::move(atk));
  }
  if (suite.empty()) throw Error::usage("eval.attacks: empty attack list");
  return suite;
}

void run_train(const RunConfig& user, const std::string& out_dir) {
  const RunConfig cfg = resolve(user);
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);

  const Dataset train_data = open_dataset(cfg, "train");
  Dataset test_data = open_dataset(cfg, "test");
  const int select_n = std::min(cfg.get_int("eval.select_n", 1000), test_data.size());
  const Dataset select_data = subset(test_data, 0, select_n);
  const ModelSpec spec = model_spec_from(cfg, train_data);
  const TrainConfig tc = train_config_from(cfg);

  const TrainResult result = train(spec, train_data, select_data, tc, /*verbose=*/true);

  write_metrics(path_under(out_dir, "metrics.csv"), result.series);
  const std::string echo = cfg.serialized();
  save_checkpoint(path_under(out_dir, "best.stck"),
                  make_model_checkpoint(spec, result.best, echo, result.best_meta.epoch,
                                        result.best_meta.clean_acc, result.best_meta.pgd20_acc,
                                        true));
  const MetricsRecord& last = result.series.back();
  save_checkpoint(path_under(out_dir, "final.stck"),
                  make_model_checkpoint(spec, result.final, echo, last.epoch, last.clean_acc,
                                        last.pgd20_acc, false));
  std::printf("best epoch %d: clean %.4f pgd20 %.4f\n", result.best_meta.epoch,
              result.best_meta.clean_acc, result.best_meta.pgd20_acc);
}

namespace {

struct LoadedModel {
  ModelSpec spec;
  Parameters params;
};

LoadedModel load_model(const std::string& checkpoint) {
  if (checkpoint.empty()) throw Error::usage("missing --checkpoint");
  const Checkpoint cp = load_checkpoint(checkpoint);
  return {checkpoint_spec(cp), checkpoint_params(cp)};
}

Dataset probe_data(const RunConfig& cfg) {
  Dataset test = open_dataset(cfg, "test");
  const int n = std::min(cfg.get_int("eval.subset_n", 1000), test.size());
  return subset(test, 0, n);
}

}  // namespace

void run_eval(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir) {
  const RunConfig cfg = resolve(user);
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  const LoadedModel model = load_model(checkpoint);
  const Dataset data = probe_data(cfg);
  const int workers = cfg.get_int("workers", 1);

  const RobustReport report = robust_eval(model.spec, model.params, data,
                                          attack_suite_from(cfg), workers);
  write_report_csv(path_under(out_dir, "robust_report.csv"), report);
  std::printf("clean %.4f", report.clean_acc);
  for (const auto& [name, acc] : report.robust) std::printf("  %s %.4f", name.c_str(), acc);
  std::printf("  (n=%d)\n", data.size());
}

void run_attack(const RunConfig& user, const std::string& checkpoint,
                const std::string& out_dir) {
  const RunConfig cfg = resolve(user);
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  const LoadedModel model = load_model(checkpoint);
  const Dataset data = probe_data(cfg);
  const AttackConfig ac = attack_config_from(cfg);
  const int workers = cfg.get_int("workers", 1);

  const CraftedBatch crafted =
      craft(model.spec, model.params, data.inputs, data.labels, ac, nullptr, workers);

  Checkpoint dump;
  dump.descriptor = "{\"kind\":\"tensors\"}";
  dump.tensors.emplace("benign", data.inputs);
  dump.tensors.emplace("crafted", crafted.examples);
  dump.tensors.emplace("perturbation", crafted.perturbation);
  dump.trailer = "{}";
  save_checkpoint(path_under(out_dir, "crafted.stck"), dump);

  std::ofstream f(path_under(out_dir, "attack_losses.csv"), std::ios::binary);
  if (!f) throw Error::data("cannot write attack_losses.csv");
  f << "index,label,final_loss,linf\n";
  const int64_t per = data.inputs.size() / data.size();
  for (int i = 0; i < data.size(); ++i) {
    float linf = 0.0f;
    for (int64_t k = 0; k < per; ++k)
      linf = std::max(linf, std::fabs(crafted.perturbation[i * per + k]));
    f << i << "," << data.labels[static_cast<size_t>(i)] << ","
      << format_g6(crafted.final_loss[static_cast<size_t>(i)]) << "," << format_g6(linf) << "\n";
  }
  std::printf("crafted %d examples (epsilon %.5g)\n", data.size(), ac.epsilon);
}

void run_valley(const RunConfig& user, const std::string& checkpoint,
                const std::string& out_dir) {
  const RunConfig cfg = resolve(user);
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  const LoadedModel model = load_model(checkpoint);
  const Dataset data = probe_data(cfg);
  const std::vector<float> budgets = cfg.get_float_list("eval.budgets", {});
  const ValleyCurve curve =
      valley_curve(model.spec, model.params, data, budgets, 100,
                   cfg.get_float("attack.alpha", 1.0f / 255.0f), cfg.get_int("workers", 1));
  write_valley_csv(path_under(out_dir, "valley.csv"), curve);
  std::printf("valley: benign mean ce %.5g, mean ce at largest budget %.5g\n",
              curve.mean_ce.front(), curve.mean_ce.back());
}

void run_ratio(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir) {
  const RunConfig cfg = resolve(user);
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  const LoadedModel model = load_model(checkpoint);
  const Dataset data = probe_data(cfg);
  KlInnerConfig inner;
  inner.steps = cfg.get_int("attack.steps", 10);
  inner.alpha = cfg.get_float("attack.alpha", 0.01f);
  inner.epsilon = cfg.get_float("attack.epsilon", 0.3f);
  inner.init_sigma = cfg.get_float("train.init_sigma", 0.001f);
  inner.seed = cfg.get_u64("attack.seed", 7);
  const RatioCounts counts =
      collab_ratio_probe(model.spec, model.params, data, inner, cfg.get_int("workers", 1));
  std::ofstream f(path_under(out_dir, "ratio.csv"), std::ios::binary);
  if (!f) throw Error::data("cannot write ratio.csv");
  f << "n,collaborative,adversarial,neutral,ratio\n";
  f << data.size() << "," << counts.collaborative << "," << counts.adversarial << ","
    << counts.neutral << "," << format_g6(counts.ratio) << "\n";
  std::printf("collaborative ratio %.4f over %d examples\n", counts.ratio, data.size());
}

void run_angle(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir) {
  const RunConfig cfg = resolve(user);
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  const LoadedModel model = load_model(checkpoint);
  const Dataset data = probe_data(cfg);
  AttackConfig adv = attack_config_from(cfg);
  adv.direction = AttackDirection::kAscend;
  AttackConfig col = adv;
  col.direction = AttackDirection::kDescend;
  const AngleHistogram hist = perturbation_angles(model.spec, model.params, data, adv, col,
                                                  cfg.get_int("eval.bins", 36),
                                                  cfg.get_int("workers", 1));
  write_angles_csv(path_under(out_dir, "angles.csv"), hist);
  std::printf("angles: %zu measured, %d skipped\n", hist.angles_deg.size(), hist.skipped);
}

void run_landscape(const RunConfig& user, const std::string& checkpoint,
                   const std::string& out_dir) {
  const RunConfig cfg = resolve(user);
  ensure_dir(out_dir);
  echo_config(cfg, out_dir);
  const LoadedModel model = load_model(checkpoint);
  const Dataset data = probe_data(cfg);
  const int index = cfg.get_int("eval.index", 0);
  if (index < 0 || index >= data.size())
    throw Error::usage("eval.index out of range for subset of " + std::to_string(data.size()));
  const Dataset one = subset(data, index, 1);
  AttackConfig u_cfg = attack_config_from(cfg);
  const LandscapeSlice slice = landscape_slice(
      model.spec, model.params, one.inputs, one.labels[0], u_cfg, cfg.get_int("eval.grid", 41),
      cfg.get_float("eval.extent", 2 * u_cfg.epsilon), cfg.get_u64("eval.seed", 7),
      cfg.get_int("workers", 1));
  write_landscape_csv(path_under(out_dir, "landscape.csv"), slice);
  std::printf("landscape: %dx%d grid, center ce %.5g\n", slice.grid, slice.grid,
              slice.ce[static_cast<size_t>(slice.grid / 2) * slice.grid + slice.grid / 2]);
}

}  // namespace st

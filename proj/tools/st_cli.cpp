// Command-line front end; talks to the core exclusively through the C API.
#include <cstdio>
#include <deque>
#include <string>

#include <CLI11.hpp>

#include "squeezetrain.h"

namespace {

struct KeyFlag {
  CLI::Option* opt = nullptr;
  std::string key;
  std::string value;
};

class Command {
 public:
  Command(CLI::App* app, std::string name) : app_(app), name_(std::move(name)) {
    app_->add_option("--config", config_file_, "key=value config file");
    app_->add_option("--out", out_dir_, "output directory")->capture_default_str();
  }

  // deque keeps element addresses stable; CLI11 holds references into them
  void flag(const std::string& flag_name, const std::string& key, const std::string& help) {
    flags_.push_back(KeyFlag{nullptr, key, ""});
    KeyFlag& kf = flags_.back();
    kf.opt = app_->add_option(flag_name, kf.value, help);
  }

  void need_checkpoint() {
    app_->add_option("--checkpoint", checkpoint_, "model checkpoint (.stck)")->required();
  }

  bool selected() const { return app_->parsed(); }
  const std::string& name() const { return name_; }
  const std::string& out_dir() const { return out_dir_; }
  const std::string& checkpoint() const { return checkpoint_; }

  st_status fill(st_config* cfg) const {
    for (const auto& kf : flags_) {
      if (kf.opt->count() == 0) continue;
      const st_status s = st_config_set(cfg, kf.key.c_str(), kf.value.c_str());
      if (s != ST_OK) return s;
    }
    if (!config_file_.empty()) return st_config_load_file(cfg, config_file_.c_str());
    return ST_OK;
  }

 private:
  CLI::App* app_;
  std::string name_;
  std::string config_file_;
  std::string out_dir_ = "st_out";
  std::string checkpoint_;
  std::deque<KeyFlag> flags_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"squeeze-training toolkit"};
  app.require_subcommand(1);

  std::deque<Command> commands;

  auto add = [&](const std::string& name, const std::string& help) -> Command& {
    CLI::App* sub = app.add_subcommand(name, help);
    commands.emplace_back(sub, name);
    Command& c = commands.back();
    c.flag("--seed", "seed", "run seed");
    c.flag("--workers", "workers", "per-example work shards");
    return c;
  };

  {
    Command& c = add("train", "train a classifier with one of the five objectives");
    c.flag("--method", "train.method", "standard|at|trades|collab|st");
    c.flag("--epochs", "train.epochs", "training epochs");
    c.flag("--batch", "train.batch", "batch size");
    c.flag("--lr", "train.lr", "initial learning rate");
    c.flag("--epsilon", "train.epsilon", "inner perturbation budget");
    c.flag("--alpha", "train.alpha", "inner step size");
    c.flag("--steps", "train.inner_steps", "inner steps K");
    c.flag("--beta", "train.beta", "regularization weight");
    c.flag("--reg", "train.reg", "kl|symkl|js|l2");
    c.flag("--data", "data.kind", "digits|blobs|idx|cifar10");
  }
  {
    Command& c = add("eval", "robust evaluation of a checkpoint");
    c.need_checkpoint();
    c.flag("--attack", "eval.attacks", "attack list, e.g. pgd20 or fgsm,pgd20,cw100");
    c.flag("--epsilon", "attack.epsilon", "attack budget");
    c.flag("--alpha", "attack.alpha", "attack step size");
    c.flag("--n", "eval.subset_n", "evaluation subset size");
    c.flag("--data", "data.kind", "digits|blobs|idx|cifar10");
  }
  {
    Command& c = add("attack", "craft a batch and dump tensors + losses");
    c.need_checkpoint();
    c.flag("--epsilon", "attack.epsilon", "budget");
    c.flag("--alpha", "attack.alpha", "step size");
    c.flag("--steps", "attack.steps", "iterations");
    c.flag("--direction", "attack.direction", "ascend|descend");
    c.flag("--loss", "attack.loss", "ce|cw");
    c.flag("--start", "attack.start", "benign|random");
    c.flag("--n", "eval.subset_n", "batch size");
    c.flag("--data", "data.kind", "digits|blobs|idx|cifar10");
  }
  {
    Command& c = add("valley", "loss-vs-budget valley curve (collaborative descent)");
    c.need_checkpoint();
    c.flag("--budgets", "eval.budgets", "comma list of epsilon budgets");
    c.flag("--alpha", "attack.alpha", "descent step size");
    c.flag("--n", "eval.subset_n", "subset size");
    c.flag("--data", "data.kind", "digits|blobs|idx|cifar10");
  }
  {
    Command& c = add("ratio", "collaborative ratio of the TRADES inner maximization");
    c.need_checkpoint();
    c.flag("--epsilon", "attack.epsilon", "budget");
    c.flag("--alpha", "attack.alpha", "step size");
    c.flag("--steps", "attack.steps", "inner steps");
    c.flag("--n", "eval.subset_n", "subset size");
    c.flag("--data", "data.kind", "digits|blobs|idx|cifar10");
  }
  {
    Command& c = add("angle", "angles between adversarial and collaborative perturbations");
    c.need_checkpoint();
    c.flag("--epsilon", "attack.epsilon", "shared budget");
    c.flag("--alpha", "attack.alpha", "step size");
    c.flag("--steps", "attack.steps", "crafting steps");
    c.flag("--bins", "eval.bins", "histogram bins");
    c.flag("--n", "eval.subset_n", "subset size");
    c.flag("--data", "data.kind", "digits|blobs|idx|cifar10");
  }
  {
    Command& c = add("landscape", "2-D cross-entropy slice around one example");
    c.need_checkpoint();
    c.flag("--epsilon", "attack.epsilon", "collaborative direction budget");
    c.flag("--grid", "eval.grid", "grid resolution per axis");
    c.flag("--extent", "eval.extent", "half-width of the slice");
    c.flag("--index", "eval.index", "example index");
    c.flag("--data", "data.kind", "digits|blobs|idx|cifar10");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return ST_ERR_USAGE;
  }

  const Command* cmd = nullptr;
  for (const auto& c : commands)
    if (c.selected()) cmd = &c;
  if (!cmd) {
    std::fprintf(stderr, "error: no subcommand\n");
    return ST_ERR_USAGE;
  }

  st_config* cfg = st_config_new();
  st_status status = cmd->fill(cfg);
  if (status == ST_OK) {
    const char* out = cmd->out_dir().c_str();
    const char* ckpt = cmd->checkpoint().c_str();
    if (cmd->name() == "train") {
      status = st_run_train(cfg, out);
    } else if (cmd->name() == "eval") {
      status = st_run_eval(cfg, ckpt, out);
    } else if (cmd->name() == "attack") {
      status = st_run_attack(cfg, ckpt, out);
    } else if (cmd->name() == "valley") {
      status = st_run_valley(cfg, ckpt, out);
    } else if (cmd->name() == "ratio") {
      status = st_run_ratio(cfg, ckpt, out);
    } else if (cmd->name() == "angle") {
      status = st_run_angle(cfg, ckpt, out);
    } else if (cmd->name() == "landscape") {
      status = st_run_landscape(cfg, ckpt, out);
    }
  }
  if (status != ST_OK) std::fprintf(stderr, "error: %s\n", st_last_error());
  st_config_free(cfg);
  return static_cast<int>(status);
}

#pragma once

#include <string>

#include "core/config.hpp"
#include "core/dataset.hpp"
#include "core/eval.hpp"
#include "core/model.hpp"
#include "core/train.hpp"

namespace st {

// Fills every key a run reads with its default, so the echoed config fully
// determines the run. Scale defaults follow the dataset kind: idx/digits use
// epsilon 0.3 / alpha 0.01, cifar10 uses 8/255 / 2/255.
RunConfig resolve(const RunConfig& user);

Dataset open_dataset(const RunConfig& resolved, const std::string& role);  // "train" | "test"
ModelSpec model_spec_from(const RunConfig& resolved, const Dataset& data);
TrainConfig train_config_from(const RunConfig& resolved);
AttackConfig attack_config_from(const RunConfig& resolved);
std::vector<NamedAttack> attack_suite_from(const RunConfig& resolved);

// Subcommand bodies. Each writes only under out_dir and echoes the resolved
// config there as config_resolved.txt. Errors are reported by throwing
// st::Error.
void run_train(const RunConfig& user, const std::string& out_dir);
void run_eval(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir);
void run_attack(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir);
void run_valley(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir);
void run_ratio(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir);
void run_angle(const RunConfig& user, const std::string& checkpoint, const std::string& out_dir);
void run_landscape(const RunConfig& user, const std::string& checkpoint,
                   const std::string& out_dir);

}  // namespace st

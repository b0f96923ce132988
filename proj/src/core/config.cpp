#include "core/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "core/error.hpp"

namespace st {

namespace {

// The full key registry; every key a subcommand reads is declared here.
const std::vector<std::string>& registry() {
  static const std::vector<std::string> keys = {
      // top level
      "seed", "workers",
      // data
      "data.kind",          // blobs | digits | idx | cifar10
      "data.images", "data.labels",              // idx train files
      "data.test_images", "data.test_labels",    // idx test files
      "data.dir",                                // cifar10 batch directory
      "data.n", "data.test_n",                   // synthetic sizes / subset caps
      "data.classes", "data.dim", "data.separation",  // blobs
      // model + training
      "train.model",        // mlp | small_cnn
      "train.hidden", "train.channels",
      "train.method",       // standard | at | trades | collab | st
      "train.epochs", "train.batch", "train.lr", "train.momentum", "train.weight_decay",
      "train.lr_decay_epochs", "train.lr_decay_factor",
      "train.beta", "train.reg",
      "train.epsilon", "train.alpha", "train.inner_steps", "train.init_sigma",
      "train.inner_start",  // benign | random (vanilla AT inner)
      "train.final_reselect", "train.track_ratio",
      // attack/probe parameters
      "attack.epsilon", "attack.alpha", "attack.steps",
      "attack.start",       // benign | random
      "attack.loss",        // ce | cw
      "attack.direction",   // ascend | descend
      "attack.seed",
      // evaluation
      "eval.attacks",       // comma list of fgsm,pgd20,pgd100,cw100
      "eval.subset_n", "eval.select_n", "eval.seed",
      "eval.budgets",       // valley budgets
      "eval.grid", "eval.extent",  // landscape
      "eval.bins",          // angle histogram
      "eval.index",         // landscape example index
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

bool RunConfig::is_known_key(const std::string& key) {
  const auto& keys = registry();
  return std::find(keys.begin(), keys.end(), key) != keys.end();
}

std::vector<std::string> RunConfig::known_keys() { return registry(); }

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error::usage("cannot open config file '" + path + "'");
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error::usage("config '" + path + "' line " + std::to_string(lineno) +
                         ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!is_known_key(key)) throw Error::usage("unknown config key '" + key + "'");
  kv_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string RunConfig::get_str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

int RunConfig::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (...) {
    throw Error::usage("config key '" + key + "': bad integer '" + it->second + "'");
  }
}

uint64_t RunConfig::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (...) {
    throw Error::usage("config key '" + key + "': bad integer '" + it->second + "'");
  }
}

float parse_float(const std::string& text, const std::string& what) {
  try {
    const size_t slash = text.find('/');
    if (slash != std::string::npos) {
      const float num = std::stof(text.substr(0, slash));
      const float den = std::stof(text.substr(slash + 1));
      if (den == 0.0f) throw std::invalid_argument("division by zero");
      return num / den;
    }
    return std::stof(text);
  } catch (...) {
    throw Error::usage(what + ": bad number '" + text + "'");
  }
}

float RunConfig::get_float(const std::string& key, float fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  return parse_float(it->second, "config key '" + key + "'");
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw Error::usage("config key '" + key + "': bad boolean '" + v + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key,
                                         std::vector<int> fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw Error::usage("config key '" + key + "': bad integer '" + item + "'");
    }
  }
  return out;
}

std::vector<float> RunConfig::get_float_list(const std::string& key,
                                             std::vector<float> fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<float> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_float(item, "config key '" + key + "'"));
  }
  return out;
}

std::string RunConfig::serialized() const {
  std::ostringstream os;
  for (const auto& [key, value] : kv_) os << key << "=" << value << "\n";
  return os.str();
}

}  // namespace st

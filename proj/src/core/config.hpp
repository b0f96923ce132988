#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace st {

// Flat key=value run configuration. Keys live in fixed sections (train.,
// attack., data., eval.) plus the top-level `seed` and `workers`; unknown
// keys are rejected so a typo cannot silently fall back to a default.
class RunConfig {
 public:
  RunConfig() = default;

  static RunConfig from_file(const std::string& path);
  static bool is_known_key(const std::string& key);
  static std::vector<std::string> known_keys();

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_str(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  // Accepts plain decimals and a/b fractions ("8/255").
  float get_float(const std::string& key, float fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;
  std::vector<float> get_float_list(const std::string& key, std::vector<float> fallback) const;

  // Canonical text form: sorted key=value lines. Echoed into every run's
  // output directory.
  std::string serialized() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

float parse_float(const std::string& text, const std::string& what);

}  // namespace st

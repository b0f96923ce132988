#pragma once

#include <stdexcept>
#include <string>

namespace st {

// Error taxonomy mirrors the process exit codes: 1 usage, 2 data/format,
// 3 numeric failure.
enum class ErrorKind { kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  static Error usage(const std::string& m) { return {ErrorKind::kUsage, m}; }
  static Error data(const std::string& m) { return {ErrorKind::kData, m}; }
  static Error numeric(const std::string& m) { return {ErrorKind::kNumeric, m}; }

 private:
  ErrorKind kind_;
};

}  // namespace st

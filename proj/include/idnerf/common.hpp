#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace idnerf {

// Contract violations (bad shapes, out-of-range arguments, misuse of a
// frozen module). CLI maps these to exit code 1.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failures. CLI maps these to exit code 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace idnerf

#pragma once
#include <stdexcept>
#include <string>

namespace rdbinn {

// Bad inputs: malformed files, out-of-domain points, invalid configs.
// Maps to CLI exit code 2.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: solver instability, non-finite losses, SR collapse.
// Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rdbinn

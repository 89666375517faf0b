#pragma once

#include <stdexcept>
#include <string>

namespace h2o {

// Bad configs, malformed files, shape mismatches. CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf escapes, diverged training. CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace h2o

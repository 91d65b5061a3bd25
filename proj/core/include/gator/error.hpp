#pragma once

#include <stdexcept>
#include <string>

namespace gator {

// Malformed user input: IR documents, weight containers, configs, datasets.
// The CLI maps this to exit status 2.
class InvalidInput : public std::runtime_error {
 public:
  explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

// Failures that happen while running on valid input (non-finite loss,
// equivalence check mismatch, timing failure). Exit status 1.
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gator

// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace restpose {

// Error categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kInvalidParameter,
  kDimension,
  kConfig,
  kFormat,
  kData,
  kParse,
  kIo,
  kDependency,
  kOptimization,
  kDegenerate,
  kEmptyInput,
  kInvariant,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Raised by iterative solvers; carries the iteration at which things went wrong.
class OptimizationError : public Error {
 public:
  OptimizationError(int iteration, const std::string& what)
      : Error(ErrorKind::kOptimization, what + " (iteration " + std::to_string(iteration) + ")"),
        iteration_(iteration) {}

  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace restpose

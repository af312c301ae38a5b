// Copyright 2026 The MergeForge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mergeforge {

// Coarse failure class, used by the CLI to choose an exit code.
enum class ErrorCategory { Config, Numeric, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

#define MERGEFORGE_DEFINE_ERROR(Name, Category)                   \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what)                        \
        : Error(ErrorCategory::Category, #Name ": " + what) {}    \
  };

MERGEFORGE_DEFINE_ERROR(DimensionMismatch, Config)
MERGEFORGE_DEFINE_ERROR(MetaMismatch, Config)
MERGEFORGE_DEFINE_ERROR(MissingModule, Config)
MERGEFORGE_DEFINE_ERROR(MissingConfigCell, Config)
MERGEFORGE_DEFINE_ERROR(OutOfRange, Config)
MERGEFORGE_DEFINE_ERROR(EmptySplit, Config)
MERGEFORGE_DEFINE_ERROR(EmptyInput, Config)
MERGEFORGE_DEFINE_ERROR(ZeroMatrix, Numeric)
MERGEFORGE_DEFINE_ERROR(Divergence, Numeric)
MERGEFORGE_DEFINE_ERROR(FormatError, Io)
MERGEFORGE_DEFINE_ERROR(ShapeError, Io)
MERGEFORGE_DEFINE_ERROR(IoError, Io)

#undef MERGEFORGE_DEFINE_ERROR

// Thrown when a symmetric matrix cannot be factorized even after the
// diagonal jitter ladder has been exhausted.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(const std::string& what, double last_jitter)
      : Error(ErrorCategory::Numeric, "NotPositiveDefinite: " + what),
        last_jitter_(last_jitter) {}

  double last_jitter() const noexcept { return last_jitter_; }

 private:
  double last_jitter_;
};

}  // namespace mergeforge

// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include <stdexcept>
#include <string>

namespace convtran {

/// Root of every error the kit throws. Each subclass names a failure family
/// so callers (and the CLI exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not agree (matmul inner dims, LN width, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid architecture / hyperparameter settings.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN or otherwise non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Operation called in the wrong state (eval BN without stats, missing grad).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Bad user-supplied values (labels out of range, unknown domain).
class InputError : public Error {
 public:
  using Error::Error;
};

/// API misuse (backward on a non-scalar, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Degenerate input for a statistic (instance norm over a single pixel).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk content.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace convtran

#pragma once

#include <stdexcept>
#include <string>

namespace dinet {

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

/// Shapes or preconditions of a call were not met.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A numeric parameter is outside its domain (e.g. non-positive scale).
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// Missing asset, bad config key, mismatched checkpoint config.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Undecodable video, bad landmark file, degenerate face box.
class IngestionError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// Not enough eligible frames to draw references from.
class SamplingError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

/// NaN/Inf loss during training.
class TrainingDivergence : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 5; }
};

/// Checkpoint or file-format version does not match what this build reads.
class VersionMismatch : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace dinet

#pragma once

#include <stdexcept>
#include <string>

namespace csi_djscc {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid scenario, spec, or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or matrix dimensions disagree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An operation was called on an input in the wrong state
/// (e.g. truncating an already truncated matrix).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Numerically degenerate input: zero-norm codeword, zero-gain channel,
/// min == max normalization statistics, zero-norm reference.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Persisted artifact is unreadable: corrupt manifest, size mismatch,
/// unknown version tag.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Failure inside one stage of an experiment run. `stage()` names it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace csi_djscc

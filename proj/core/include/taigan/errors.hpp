#pragma once

#include <stdexcept>
#include <string>

namespace taigan {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value or object violates a documented invariant or precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A container or config file is malformed. `field()` names the offending entry.
class ParseError : public Error {
 public:
  ParseError(std::string field, const std::string& what)
      : Error("parse error in '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Filesystem read/write failure.
class PersistenceError : public Error {
 public:
  using Error::Error;
};

/// No frame satisfies the LVBP >= RVBP crossing; the study is excluded.
class NoEqFrameError : public Error {
 public:
  using Error::Error;
};

/// Every start of an iterative solver failed.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace taigan

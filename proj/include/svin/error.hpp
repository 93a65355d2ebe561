#pragma once

#include <stdexcept>
#include <string>

namespace svin {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mismatched grid dimensions or channel counts.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain (non-finite values, bad factors, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Operation is undefined for the requested input (e.g. t at an endpoint).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// File system failures (missing file, unwritable directory).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data.
class ParseError : public Error {
 public:
  enum class Kind { bad_magic, truncated, payload_size, bad_header };

  ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace svin

#pragma once

#include <stdexcept>
#include <string>

namespace repaintlab {

inline constexpr const char* kToolVersion = "0.3.0";

/// Base of every error the library throws. Subsystems derive from it so the
/// CLI can map failures onto exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shape contract violated; `axis` names the offending dimension.
class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const std::string& axis, const std::string& detail)
      : Error(op + ": shape mismatch on axis '" + axis + "': " + detail), axis_(axis) {}

  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

/// A NaN or Inf surfaced where finite values are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration value; `pointer` is a JSON pointer to the field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& pointer, const std::string& detail)
      : Error("invalid config at " + pointer + ": " + detail), pointer_(pointer), detail_(detail) {}

  const std::string& pointer() const noexcept { return pointer_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string pointer_;
  std::string detail_;
};

/// Input data missing or malformed (files, corpora, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace repaintlab

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sowpic {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite particle or field value; carries the offending particle id.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::uint64_t particle_id)
      : Error(what + " (particle " + std::to_string(particle_id) + ")"), id_(particle_id) {}
  std::uint64_t particle_id() const noexcept { return id_; }

 private:
  std::uint64_t id_;
};

/// A stencil reached outside the guard-extended arrays of the owner.
class OwnershipError : public Error {
 public:
  using Error::Error;
};

/// Layout contract violated (mixed-cell batch, swap with pending frames, ...).
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Ordered and disordered cursors collided inside a tile buffer.
class OverflowError : public LayoutError {
 public:
  using LayoutError::LayoutError;
};

/// A particle moved further than one cell in one step.
class MigrationError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class ComparisonError : public Error {
 public:
  using Error::Error;
};

}  // namespace sowpic

#pragma once

#include <stdexcept>
#include <string>

namespace pacr {

/// Base class for all pacr errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration (bad weights, group size < 2, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Trajectory has no usable reasoning content (empty rollout, zero steps).
class DegenerateTrajectoryError : public Error {
 public:
  using Error::Error;
};

/// A probability computation left its numeric domain (log-prob > 0, NaN,
/// conditioning on a null event, non-finite gradient).
class NumericalDomainError : public Error {
 public:
  using Error::Error;
};

/// Prefix or step content not producible by the environment's transition
/// structure.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked on an object missing required state (e.g. confidence
/// series absent).
class StateError : public Error {
 public:
  using Error::Error;
};

/// File, schema, or serialization problem.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pacr

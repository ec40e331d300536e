#pragma once

#include <stdexcept>
#include <string>

namespace wheelbot {

/// Invalid physical parameter (non-positive mass, inconsistent geometry, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent configuration document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mass matrix too ill-conditioned to solve at the given configuration.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linearization produced coupling that the model structure forbids.
class ModelInconsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Riccati iteration failed or the pair is not stabilizable.
class SynthesisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least-squares gravity estimate too small to define a tilt.
class DegenerateGravityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calibration data was collected while the robot was moving.
class NotStaticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wheelbot

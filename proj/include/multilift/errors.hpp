#pragma once

#include <stdexcept>
#include <string>

namespace multilift {

/// Invalid or inconsistent configuration (unknown keys, out-of-range values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint or scenario does not match the configuration it is used with.
class ConfigMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// File system or serialization failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN/Inf appeared in the simulated state.
class SimulationDiverged : public std::runtime_error {
 public:
  SimulationDiverged(int body_index, const std::string& what)
      : std::runtime_error(what + " (body " + std::to_string(body_index) + ")"), body_index_(body_index) {}
  int body_index() const noexcept { return body_index_; }

 private:
  int body_index_;
};

/// Non-finite loss or gradient during an optimization step.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace multilift

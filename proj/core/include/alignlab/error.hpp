#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace alignlab {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidTokenError : public Error {
 public:
  using Error::Error;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Rollouts inside one group were produced by different generator snapshots.
class MixedSnapshotError : public Error {
 public:
  using Error::Error;
};

// A group has no correct or no incorrect response where both are required.
class DegenerateGroupError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient or parameter; carries the offending training step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::int64_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

// Configuration problem tied to a single key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& message)
      : Error(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace alignlab

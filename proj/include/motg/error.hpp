#pragma once

#include <stdexcept>
#include <string>

namespace motg {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Input that is well-formed but carries no mass (all-zero vector, zero matrix).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class ContextOverflow : public Error {
 public:
  using Error::Error;
};

// A computation produced a non-finite value. `where` names the first offending op.
class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& what, std::string where)
      : Error(what + " (at " + where + ")"), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

// Request exceeds what an exact routine is able to enumerate.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace motg

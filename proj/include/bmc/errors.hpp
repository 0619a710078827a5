#pragma once

#include <stdexcept>
#include <string>

namespace bmc {

// Every error carries a short machine-parsable class name; the CLI prints it
// as the first token of its one-line error message.
class Error : public std::runtime_error {
 public:
  Error(std::string error_class, const std::string& what)
      : std::runtime_error(what), class_(std::move(error_class)) {}
  const std::string& error_class() const noexcept { return class_; }

 private:
  std::string class_;
};

struct DomainError : Error {
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

struct InputError : Error {
  explicit InputError(const std::string& what) : Error("input", what) {}
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& what) : Error("divergence", what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error("io", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace bmc

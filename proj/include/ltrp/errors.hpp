#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ltrp {

/// Raised for inputs that violate an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A training loop produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what_arg, std::size_t step)
      : std::runtime_error(what_arg + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StageFailure : public std::runtime_error {
 public:
  StageFailure(std::string stage, const std::string& what_arg)
      : std::runtime_error("stage '" + stage + "' failed: " + what_arg), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace ltrp

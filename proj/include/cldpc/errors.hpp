#pragma once

#include <stdexcept>
#include <string>

namespace cldpc {

// Invalid configuration or violated precondition on parameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite state in the Burgers solver. `step` is the solver substep (or
// control step, when raised from a rollout) at which the state went bad.
class EnvironmentBlowup : public std::runtime_error {
 public:
  EnvironmentBlowup(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cldpc

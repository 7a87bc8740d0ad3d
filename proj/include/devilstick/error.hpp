#pragma once

#include <stdexcept>
#include <string>

namespace devilstick {

enum class ErrorCode {
  InvalidArgument,
  SingularMatrix,
  NoConvergence,
  NotStabilizable,
  NotControllable,
  SingularVhc,
  DegenerateForce,
  BelowPotential,
  NotPropeller,
  NonFiniteState,
  NoCrossing,
  EpisodeTimeout,
  Config,
};

const char* toString(ErrorCode code);

/// Single exception type for the library; `code()` tells callers which
/// failure mode they hit.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(toString(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace devilstick

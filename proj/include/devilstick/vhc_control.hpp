// Circular virtual holonomic constraint q1 = Phi(q2) and the
// feedback-linearizing controller that makes the constraint manifold
// invariant.
#pragma once

#include <limits>
#include <numbers>

#include "devilstick/dynamics.hpp"
#include "devilstick/numerics.hpp"

namespace devilstick {

/// |sin(phase)| below this makes the decoupling matrix singular.
inline constexpr double kSingularPhaseTolerance = 1e-9;
/// |F_c| below this leaves the point of application undefined.
inline constexpr double kDegenerateForceFloor = 1e-6;

struct VhcSpec {
  double radius = 1.0;                    // m
  double phase = std::numbers::pi / 2.0;  // rad, in (-pi, pi]
  Mat2 kp{Vec2{40.0, 0.0}, Vec2{0.0, 40.0}};
  Mat2 kd{Vec2{5.5, 0.0}, Vec2{0.0, 5.5}};

  /// Throws InvalidArgument for R <= 0, phase outside (-pi, pi] or gains that
  /// are not symmetric positive-definite, and SingularVhc for phase in {0, pi}.
  void validate() const;
};

/// Phi(q2) and its first two derivatives with respect to q2.
struct VhcCurve {
  Vec2 value{};
  Vec2 first{};
  Vec2 second{};
};

VhcCurve phiAndDerivatives(double q2, const VhcSpec& spec);

struct ConstraintError {
  Vec2 rho{};
  Vec2 rhoDot{};
};

ConstraintError constraintError(const FullState& s, const VhcSpec& spec);

/// State on the constraint manifold with the given (q2, dq2).
FullState stateOnManifold(double q2, double dq2, const VhcSpec& spec);

struct DecouplingMatrix {
  numerics::Matrix matrix;  // B - (dPhi/dq2) D
  double determinant = 0.0;
};

/// Throws SingularVhc when |sin(phase)| < kSingularPhaseTolerance.
DecouplingMatrix decouplingMatrix(double q2, const VhcSpec& spec, const StickParams& p);

/// u_c = [F_c, F_c r_c]; obtained by a linear solve, never by dividing by F_c.
Vec2 continuousControlEffort(const FullState& s, const VhcSpec& spec, const StickParams& p);

/// F_c and r_c. Throws DegenerateForce when |F_c| < forceFloor.
ControlInput continuousControl(const FullState& s, const VhcSpec& spec, const StickParams& p,
                               double forceFloor = kDegenerateForceFloor);

/// Closed forms for F_c and r_c valid on the constraint manifold.
ControlInput onManifoldControl(double q2, double dq2, const VhcSpec& spec, const StickParams& p);

struct FeasibilityReport {
  bool forceSignConstant = true;  // dq2^2 > (g/R) sin(q2 - phase)
  bool rInside = true;            // r_c in (-l/2, l/2)
};

FeasibilityReport contactFeasibility(const FullState& sample, const VhcSpec& spec, const StickParams& p);

/// Accumulates contact diagnostics over a trajectory. Nothing here is
/// enforced; violations are only counted.
class FeasibilityMonitor {
 public:
  FeasibilityMonitor(VhcSpec spec, StickParams params) : spec_(spec), params_(params) {}

  /// `force` and `arm` are the total applied values at this sample.
  void observe(double t, const FullState& s, double force, double arm);

  const FeasibilityReport& report() const { return report_; }
  /// True while the applied force has kept one sign and never vanished.
  bool appliedForceSignConstant() const { return appliedSignConstant_; }
  double minForce() const { return minForce_; }
  double maxForce() const { return maxForce_; }
  double maxAbsArm() const { return maxAbsArm_; }
  long violations() const { return violations_; }
  /// Time of the first violation, NaN if none.
  double firstViolationTime() const { return firstViolation_; }

 private:
  VhcSpec spec_;
  StickParams params_;
  FeasibilityReport report_;
  bool appliedSignConstant_ = true;
  int forceSign_ = 0;
  double minForce_ = std::numeric_limits<double>::infinity();
  double maxForce_ = -std::numeric_limits<double>::infinity();
  double maxAbsArm_ = 0.0;
  long violations_ = 0;
  double firstViolation_ = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace devilstick

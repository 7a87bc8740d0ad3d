// Impulse-controlled Poincare map: fixed point on the section, forward
// difference linearization, LQR gain synthesis and the closed-loop run in
// which each impulse is realized by a high-gain episode.
#pragma once

#include <array>
#include <complex>
#include <functional>
#include <vector>

#include "devilstick/hybrid_sim.hpp"
#include "devilstick/numerics.hpp"
#include "devilstick/zero_dynamics.hpp"

namespace devilstick {

using Vec5 = std::array<double, 5>;

/// Fixed point z* of the map, built analytically from the orbit level set.
/// Throws NotPropeller unless the orbit is a propeller orbit.
SectionState fixedPoint(const OrbitSpec& orbit, const SectionSpec& section, const StickParams& p);

/// First-return map P(z, I) under u_c.
class PoincareMap {
 public:
  PoincareMap(Plant plant, SectionSpec section, SimConfig cfg);

  /// Impulse I applied at z (arm taken from u_c at z), then flow to the next crossing.
  SectionState operator()(const SectionState& z, double impulse) const;
  /// Flow from z (placed on the section) to the next crossing, no impulse.
  SectionState flow(const SectionState& z) const;

  /// Velocity jump S = [0, 0, B(q2*) eta, D(q2*) eta] for eta = [I, I r].
  Vec5 impulseJump(double impulse, double arm) const;
  /// r_c at a section state.
  double armAt(const SectionState& z) const;

  const Plant& plant() const { return plant_; }
  const SectionSpec& section() const { return section_; }
  const SimConfig& config() const { return cfg_; }

 private:
  Plant plant_;
  SectionSpec section_;
  SimConfig cfg_;
};

struct LinearizedMap {
  numerics::Matrix a;  // 5x5
  numerics::Vector b;  // 5
  double eps1 = 0.0;
  double eps2 = 0.0;
  double rStar = 0.0;
  SectionState zStar;
};

using ReturnMap = std::function<Vec5(const Vec5&)>;

/// Forward differences around the fixed point zStar:
///   A_i = (flow(z* + eps1 e_i) - z*) / eps1,   B = (flow(z* + S) - z*) / eps2,
/// where `jump` is S for an impulse of size eps2. Columns are evaluated
/// concurrently; `flow` must be safe to call from several threads.
LinearizedMap linearizeReturnMap(const ReturnMap& flow, const SectionState& zStar, const Vec5& jump, double eps1,
                                 double eps2);

LinearizedMap linearizeMap(const PoincareMap& map, const SectionState& zStar, double rStar, double eps1, double eps2);

/// Largest entrywise change of (A, B) against `ref`, in units of
/// max(relTol |ref|, absFloor). A value <= 1 means every entry agrees.
double sweepDeviation(const LinearizedMap& lin, const LinearizedMap& ref, double relTol = 0.01,
                      double absFloor = 5e-5);

struct IcpmGains {
  numerics::Vector k;     // I(k) = K e(k); closed loop A + B K
  numerics::Vector kLqr;  // LQR convention, K = -kLqr
  numerics::Matrix q;
  double rWeight = 0.0;
  double closedLoopSpectralRadius = 0.0;
  std::vector<std::complex<double>> openLoopEigenvalues;
  std::vector<std::complex<double>> closedLoopEigenvalues;
  /// Diagnostic only; see stabilizabilityMargin for the acceptance test.
  numerics::Vector controllabilitySingularValues;
  /// Smallest PBH margin over the modes with |lambda| >= 1.
  double stabilizabilityMargin = 0.0;
  double dareResidual = 0.0;
};

numerics::Matrix controllabilityMatrix(const numerics::Matrix& a, std::span<const double> b);

/// Smallest PBH margin accepted for a mode that does not contract.
inline constexpr double kControllabilityTolerance = 1e-8;

/// PBH test restricted to the modes with |lambda| >= threshold: the smallest
/// singular value of [A - lambda I, b] (real embedding for complex pairs),
/// scaled by max(1, |[A b]|inf). Returns +inf when every mode contracts.
/// Contracting modes may be uncontrollable without harming stabilization,
/// which is the case for the symmetric transverse block of the map.
double stabilizabilityMargin(const numerics::Matrix& a, std::span<const double> b,
                             const std::vector<std::complex<double>>& eigenvalues, double threshold = 1.0);

/// Throws NotControllable when a non-contracting mode fails the PBH test and
/// NotStabilizable when the Riccati iteration or the closed loop fails.
IcpmGains synthesizeGain(const LinearizedMap& lin, const numerics::Matrix& q, double rWeight);

/// Spectral radius of A + B K.
double closedLoopSpectralRadius(const numerics::Matrix& a, std::span<const double> b, std::span<const double> k);

struct StabilizationRun {
  TrajectoryLog log;
  double duration = 0.0;
  FullState finalState;
  double finalEnergy = 0.0;
  FeasibilityMonitor feasibility;
  /// Largest k with an active high-gain episode, 0 if none.
  int lastActiveCrossing = 0;
  /// Times at which the unwrapped angle completed each rotation.
  std::vector<double> rotationTimes;
};

struct StabilizeOptions {
  int rotations = 8;
  /// All-zero gain disables the discrete feedback (u_c alone).
  numerics::Vector gain;
};

/// Closed-loop run: at each crossing k, e(k) = z(k) - z*, I(k) = K e(k) and,
/// when |I r / J| > eps3, a high-gain episode drives dtheta to
/// dtheta(k) + I r(k) / J. Stops once theta has advanced by 2 pi * rotations.
StabilizationRun stabilizeRun(const FullState& initial, const PoincareMap& map, const SectionState& zStar,
                              const StabilizeOptions& options);

}  // namespace devilstick

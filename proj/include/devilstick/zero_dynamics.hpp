// Reduced dynamics of the passive angle on the constraint manifold,
//   q2'' = -(g sin q2) / (R sin phase) + cot(phase) q2'^2,
// its integral of motion and the orbit classification built on it.
#pragma once

#include "devilstick/dynamics.hpp"
#include "devilstick/vhc_control.hpp"

namespace devilstick {

struct ReducedState {
  double q2 = 0.0;   // rad, unwrapped
  double dq2 = 0.0;  // rad/s
};

struct OrbitSpec {
  double energy = 0.0;  // level c* of the integral of motion, 1/s^2
  VhcSpec vhc;
};

enum class OrbitClass { Propeller, Oscillation, Separatrix, Aperiodic };

const char* toString(OrbitClass c);

/// True when cot(phase) vanishes, i.e. phase = +-pi/2 up to rounding.
bool hasPeriodicOrbits(const VhcSpec& vhc);

double reducedAccel(const ReducedState& s, const VhcSpec& vhc, const StickParams& p);
double reducedMass(double q2, const VhcSpec& vhc);
double reducedPotential(double q2, const VhcSpec& vhc, const StickParams& p);
double energy(const ReducedState& s, const VhcSpec& vhc, const StickParams& p);

/// Structural: Aperiodic whenever cot(phase) != 0.
OrbitClass classifyOrbit(const OrbitSpec& orbit, const StickParams& p);

/// Positive-branch rate on the level set E = c* at angle q2.
/// Throws BelowPotential when c* < P(q2).
double dq2OnOrbit(double q2, const OrbitSpec& orbit, const StickParams& p);

}  // namespace devilstick

#include "devilstick/zero_dynamics.hpp"

#include <cmath>
#include <sstream>

#include "devilstick/error.hpp"

namespace devilstick {

namespace {

constexpr double kCotZero = 1e-12;
constexpr double kSeparatrixTolerance = 1e-9;

double sinPhaseChecked(const VhcSpec& vhc) {
  const double s = std::sin(vhc.phase);
  if (std::abs(s) < kSingularPhaseTolerance) {
    throw Error(ErrorCode::SingularVhc, "reduced dynamics undefined for phase in {0, pi}");
  }
  return s;
}

double cotPhase(const VhcSpec& vhc) {
  const double c = std::cos(vhc.phase) / sinPhaseChecked(vhc);
  return std::abs(c) < kCotZero ? 0.0 : c;
}

}  // namespace

const char* toString(OrbitClass c) {
  switch (c) {
    case OrbitClass::Propeller: return "Propeller";
    case OrbitClass::Oscillation: return "Oscillation";
    case OrbitClass::Separatrix: return "Separatrix";
    case OrbitClass::Aperiodic: return "Aperiodic";
  }
  return "Unknown";
}

bool hasPeriodicOrbits(const VhcSpec& vhc) { return cotPhase(vhc) == 0.0; }

double reducedAccel(const ReducedState& s, const VhcSpec& vhc, const StickParams& p) {
  const double sinPhase = sinPhaseChecked(vhc);
  return -p.gravity * std::sin(s.q2) / (vhc.radius * sinPhase) + cotPhase(vhc) * s.dq2 * s.dq2;
}

double reducedMass(double q2, const VhcSpec& vhc) {
  return std::exp(-2.0 * q2 * cotPhase(vhc));
}

double reducedPotential(double q2, const VhcSpec& vhc, const StickParams& p) {
  const double sinPhase = sinPhaseChecked(vhc);
  const double cot = cotPhase(vhc);
  return -p.gravity * std::exp(-2.0 * q2 * cot) * (2.0 * std::sin(q2) * cot + std::cos(q2)) /
         (vhc.radius * sinPhase * (4.0 * cot * cot + 1.0));
}

double energy(const ReducedState& s, const VhcSpec& vhc, const StickParams& p) {
  return 0.5 * reducedMass(s.q2, vhc) * s.dq2 * s.dq2 + reducedPotential(s.q2, vhc, p);
}

OrbitClass classifyOrbit(const OrbitSpec& orbit, const StickParams& p) {
  if (!hasPeriodicOrbits(orbit.vhc)) return OrbitClass::Aperiodic;
  // max of P over a period: g/R for phase = pi/2, and likewise for -pi/2
  const double potentialMax = p.gravity / orbit.vhc.radius;
  if (std::abs(orbit.energy - potentialMax) <= kSeparatrixTolerance) return OrbitClass::Separatrix;
  return orbit.energy > potentialMax ? OrbitClass::Propeller : OrbitClass::Oscillation;
}

double dq2OnOrbit(double q2, const OrbitSpec& orbit, const StickParams& p) {
  const double potential = reducedPotential(q2, orbit.vhc, p);
  const double kinetic = orbit.energy - potential;
  if (kinetic < 0.0) {
    // exact separatrix apex up to rounding
    if (kinetic > -1e-12 * std::max(1.0, std::abs(orbit.energy))) return 0.0;
    std::ostringstream os;
    os << "level " << orbit.energy << " lies below the potential " << potential << " at q2 = " << q2;
    throw Error(ErrorCode::BelowPotential, os.str());
  }
  return std::sqrt(2.0 * kinetic / reducedMass(q2, orbit.vhc));
}

}  // namespace devilstick

// Fixed-step RK4 integration of the closed loop with bisection-refined
// event detection, plus the high-gain episodes that realize impulses.
#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "devilstick/dynamics.hpp"
#include "devilstick/vhc_control.hpp"

namespace devilstick {

/// The physical stick together with the constraint being enforced.
struct Plant {
  StickParams params;
  VhcSpec vhc;
};

/// Maps a state to the generalized input u = [F, F r].
using ControlLaw = std::function<Vec2(const FullState&)>;

/// u_c alone.
ControlLaw continuousLaw(const Plant& plant);

/// Wraps an angle to (-pi, pi].
double wrapAngle(double a);

/// Poincare section {theta mod 2pi = q2Star, dtheta > 0}.
struct SectionSpec {
  double q2Star = 0.0;  // rad, in [0, 2pi)

  /// theta - q2Star wrapped to (-pi, pi]; crosses zero upward on the section.
  double eventValue(double theta) const { return wrapAngle(theta - q2Star); }
  void validate() const;
};

/// z = [h_x, h_y, dh_x, dh_y, dtheta]; theta is pinned by the section.
struct SectionState {
  std::array<double, 5> z{};

  double h_x() const { return z[0]; }
  double h_y() const { return z[1]; }
  double dh_x() const { return z[2]; }
  double dh_y() const { return z[3]; }
  double dtheta() const { return z[4]; }

  static SectionState fromFullState(const FullState& s) { return {{s.h_x, s.h_y, s.dh_x, s.dh_y, s.dtheta}}; }
  FullState toFullState(double theta) const { return {z[0], z[1], theta, z[2], z[3], z[4]}; }
};

struct HighGainConfig {
  double mu = 0.0005;     // s
  double eps3 = 0.001;    // rad/s
  double timeout = 0.1;   // s of simulated time
};

struct SimConfig {
  double stepSize = 1e-5;        // s
  double eventTolerance = 1e-14; // s, final bisection bracket width
  double maxTime = 60.0;         // s per integration segment
  std::size_t logStride = 100;   // steps between logged samples
  HighGainConfig highGain;

  void validate() const;
};

struct TrajectorySample {
  double t = 0.0;
  FullState state;
  double force = 0.0;
  double arm = 0.0;  // NaN when the force vanishes
  Vec2 rho{};
  Vec2 rhoDot{};
  double energy = 0.0;
};

struct CrossingEvent {
  int k = 0;
  double time = 0.0;
  SectionState z;               // immediately before the impulse
  double energy = 0.0;
  double arm = 0.0;             // r(k)
  double impulse = 0.0;         // I(k)
  double dq2Desired = 0.0;
  bool highGainActive = false;
  double highGainDuration = 0.0;
  double dq2AfterEpisode = 0.0;
  double peakHighGainForce = 0.0;
};

struct TrajectoryLog {
  std::vector<TrajectorySample> samples;
  std::vector<CrossingEvent> crossings;

  /// Appends unless `s.t` does not advance past the last sample.
  void append(const TrajectorySample& s);
  /// Columns: t,h_x,h_y,theta,dh_x,dh_y,dtheta,F,r,rho1,rho2,E,theta_wrapped
  void writeCsv(std::ostream& os) const;
};

TrajectorySample makeSample(const Plant& plant, double t, const FullState& s, const Vec2& u);

/// Classical RK4 step; the law is re-evaluated at every stage.
/// Throws NonFiniteState on a non-finite result.
FullState rk4Step(const FullState& s, const ControlLaw& law, const StickParams& p, double dt);

/// Called once per accepted step with the step-start time, state and input.
using StepObserver = std::function<void(double t, const FullState& s, const Vec2& u)>;

enum class StopReason { Section, ThetaLimit };

struct MarchOptions {
  double t0 = 0.0;
  const SectionSpec* section = nullptr;
  /// Also stop when the unwrapped angle reaches this value from below.
  std::optional<double> thetaStop;
  TrajectoryLog* log = nullptr;
  StepObserver observer;
};

struct MarchResult {
  FullState state;
  double time = 0.0;
  StopReason reason = StopReason::Section;
  /// Set when the stop angle was reached, including the case where it
  /// coincides with a section crossing (reason stays Section then).
  bool thetaStopReached = false;
};

/// Integrates until the first requested event; throws NoCrossing after
/// cfg.maxTime without one.
MarchResult march(const Plant& plant, const ControlLaw& law, const FullState& start, const SimConfig& cfg,
                  const MarchOptions& opts);

struct SectionCrossing {
  SectionState z;
  double time = 0.0;
  FullState state;
};

SectionCrossing integrateToSection(const Plant& plant, const ControlLaw& law, const FullState& start,
                                   const SectionSpec& section, const SimConfig& cfg, double t0 = 0.0,
                                   TrajectoryLog* log = nullptr);

struct EpisodeResult {
  FullState state;
  double duration = 0.0;
  double endTime = 0.0;
  double peakHighGainForce = 0.0;
};

/// Runs u_c plus F_hg = J/(mu rK) (dq2Desired - dtheta) applied at the frozen
/// arm rK until |dq2Desired - dtheta| <= eps3.
EpisodeResult highGainEpisode(const Plant& plant, const FullState& start, double rK, double dq2Desired,
                              const SimConfig& cfg, double t0 = 0.0, TrajectoryLog* log = nullptr,
                              const StepObserver& observer = {});

}  // namespace devilstick

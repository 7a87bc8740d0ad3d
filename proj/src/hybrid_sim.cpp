#include "devilstick/hybrid_sim.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>

#include "devilstick/error.hpp"
#include "devilstick/zero_dynamics.hpp"

namespace devilstick {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct EventHit {
  double tau;  // offset into the step
  FullState state;
};

// Bisects the step [0, dt] from `s` on an event function that is negative at
// 0 and non-negative at dt.
template <typename EventFn>
EventHit bisect(const FullState& s, const ControlLaw& law, const StickParams& p, double dt, double tol,
                EventFn&& event, const FullState& endState) {
  double lo = 0.0;
  double hi = dt;
  FullState hiState = endState;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const FullState m = rk4Step(s, law, p, mid);
    if (event(m) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
      hiState = m;
    }
  }
  return {hi, hiState};
}

}  // namespace

ControlLaw continuousLaw(const Plant& plant) {
  return [plant](const FullState& s) { return continuousControlEffort(s, plant.vhc, plant.params); };
}

double wrapAngle(double a) {
  double w = std::fmod(a, kTwoPi);
  if (w <= -std::numbers::pi) w += kTwoPi;
  if (w > std::numbers::pi) w -= kTwoPi;
  return w;
}

void SectionSpec::validate() const {
  if (!(q2Star >= 0.0 && q2Star < kTwoPi)) throw Error(ErrorCode::InvalidArgument, "section angle must lie in [0, 2pi)");
}

void SimConfig::validate() const {
  if (!(stepSize > 0.0)) throw Error(ErrorCode::InvalidArgument, "step size must be positive");
  if (!(eventTolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "event tolerance must be positive");
  if (!(maxTime > 0.0)) throw Error(ErrorCode::InvalidArgument, "max time must be positive");
  if (logStride == 0) throw Error(ErrorCode::InvalidArgument, "log stride must be at least 1");
  if (!(highGain.mu > 0.0) || !(highGain.eps3 > 0.0) || !(highGain.timeout > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "high-gain mu, eps3 and timeout must be positive");
  }
}

void TrajectoryLog::append(const TrajectorySample& s) {
  if (!samples.empty() && !(s.t > samples.back().t)) return;
  samples.push_back(s);
}

void TrajectoryLog::writeCsv(std::ostream& os) const {
  os << "t,h_x,h_y,theta,dh_x,dh_y,dtheta,F,r,rho1,rho2,E,theta_wrapped\n";
  const auto flags = os.flags();
  const auto precision = os.precision();
  os << std::setprecision(12);
  for (const TrajectorySample& s : samples) {
    os << s.t << ',' << s.state.h_x << ',' << s.state.h_y << ',' << s.state.theta << ',' << s.state.dh_x << ','
       << s.state.dh_y << ',' << s.state.dtheta << ',' << s.force << ',' << s.arm << ',' << s.rho[0] << ','
       << s.rho[1] << ',' << s.energy << ',' << wrapAngle(s.state.theta) << '\n';
  }
  os.flags(flags);
  os.precision(precision);
}

TrajectorySample makeSample(const Plant& plant, double t, const FullState& s, const Vec2& u) {
  TrajectorySample out;
  out.t = t;
  out.state = s;
  out.force = u[0];
  out.arm = std::abs(u[0]) >= kDegenerateForceFloor ? u[1] / u[0] : std::numeric_limits<double>::quiet_NaN();
  const ConstraintError err = constraintError(s, plant.vhc);
  out.rho = err.rho;
  out.rhoDot = err.rhoDot;
  out.energy = energy({s.theta, s.dtheta}, plant.vhc, plant.params);
  return out;
}

FullState rk4Step(const FullState& s, const ControlLaw& law, const StickParams& p, double dt) {
  const FullState k1 = stateDerivative(s, law(s), p);
  const FullState s2 = s + (0.5 * dt) * k1;
  const FullState k2 = stateDerivative(s2, law(s2), p);
  const FullState s3 = s + (0.5 * dt) * k2;
  const FullState k3 = stateDerivative(s3, law(s3), p);
  const FullState s4 = s + dt * k3;
  const FullState k4 = stateDerivative(s4, law(s4), p);
  FullState next = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!next.isFinite()) throw Error(ErrorCode::NonFiniteState, "RK4 step produced a non-finite state");
  return next;
}

MarchResult march(const Plant& plant, const ControlLaw& law, const FullState& start, const SimConfig& cfg,
                  const MarchOptions& opts) {
  if (opts.section == nullptr && !opts.thetaStop) {
    throw Error(ErrorCode::InvalidArgument, "march needs a section or a stop angle");
  }
  const double dt = cfg.stepSize;
  const auto maxSteps = static_cast<std::size_t>(std::ceil(cfg.maxTime / dt));
  const auto sectionEvent = [&](const FullState& s) { return opts.section->eventValue(s.theta); };
  const auto stopEvent = [&](const FullState& s) { return s.theta - *opts.thetaStop; };

  FullState s = start;
  for (std::size_t i = 0; i < maxSteps; ++i) {
    const double t = opts.t0 + static_cast<double>(i) * dt;
    if (opts.log != nullptr || opts.observer) {
      const Vec2 u = law(s);
      if (opts.observer) opts.observer(t, s, u);
      if (opts.log != nullptr && i % cfg.logStride == 0) opts.log->append(makeSample(plant, t, s, u));
    }
    const FullState next = rk4Step(s, law, plant.params, dt);

    std::optional<EventHit> sectionHit;
    if (opts.section != nullptr) {
      const double g0 = sectionEvent(s);
      const double g1 = sectionEvent(next);
      if (g0 < 0.0 && g1 >= 0.0 && g1 - g0 < std::numbers::pi) {
        EventHit h = bisect(s, law, plant.params, dt, cfg.eventTolerance, sectionEvent, next);
        if (h.state.dtheta > 0.0) sectionHit = h;
      }
    }
    std::optional<EventHit> stopHit;
    if (opts.thetaStop && stopEvent(s) < 0.0 && stopEvent(next) >= 0.0) {
      stopHit = bisect(s, law, plant.params, dt, cfg.eventTolerance, stopEvent, next);
    }
    if (sectionHit || stopHit) {
      MarchResult out;
      const double tieWindow = std::max(10.0 * cfg.eventTolerance, 1e-12);
      if (sectionHit && stopHit && std::abs(sectionHit->tau - stopHit->tau) <= tieWindow) {
        out = {sectionHit->state, t + sectionHit->tau, StopReason::Section, true};
      } else if (sectionHit && (!stopHit || sectionHit->tau < stopHit->tau)) {
        out = {sectionHit->state, t + sectionHit->tau, StopReason::Section, false};
      } else {
        out = {stopHit->state, t + stopHit->tau, StopReason::ThetaLimit, true};
      }
      if (opts.log != nullptr) opts.log->append(makeSample(plant, out.time, out.state, law(out.state)));
      return out;
    }
    s = next;
  }
  std::ostringstream os;
  os << "no event within " << cfg.maxTime << " s (theta = " << s.theta << ")";
  throw Error(ErrorCode::NoCrossing, os.str());
}

SectionCrossing integrateToSection(const Plant& plant, const ControlLaw& law, const FullState& start,
                                   const SectionSpec& section, const SimConfig& cfg, double t0,
                                   TrajectoryLog* log) {
  MarchOptions opts;
  opts.t0 = t0;
  opts.section = &section;
  opts.log = log;
  const MarchResult r = march(plant, law, start, cfg, opts);
  return {SectionState::fromFullState(r.state), r.time, r.state};
}

EpisodeResult highGainEpisode(const Plant& plant, const FullState& start, double rK, double dq2Desired,
                              const SimConfig& cfg, double t0, TrajectoryLog* log, const StepObserver& observer) {
  if (std::abs(rK) < kDegenerateForceFloor) {
    throw Error(ErrorCode::DegenerateForce, "high-gain episode needs a nonzero moment arm");
  }
  const HighGainConfig& hg = cfg.highGain;
  const double gain = plant.params.inertia / (hg.mu * rK);
  const auto highGainForce = [&](const FullState& s) { return gain * (dq2Desired - s.dtheta); };
  const ControlLaw law = [&](const FullState& s) {
    Vec2 u = continuousControlEffort(s, plant.vhc, plant.params);
    const double fhg = highGainForce(s);
    u[0] += fhg;
    u[1] += fhg * rK;
    return u;
  };

  EpisodeResult out{start, 0.0, t0, 0.0};
  FullState s = start;
  const double dt = cfg.stepSize;
  const auto maxSteps = static_cast<std::size_t>(std::ceil(hg.timeout / dt));
  std::size_t i = 0;
  while (std::abs(dq2Desired - s.dtheta) > hg.eps3) {
    if (i >= maxSteps) {
      std::ostringstream os;
      os << "high-gain episode still " << std::abs(dq2Desired - s.dtheta) << " rad/s away after " << hg.timeout
         << " s";
      throw Error(ErrorCode::EpisodeTimeout, os.str());
    }
    const double t = t0 + static_cast<double>(i) * dt;
    out.peakHighGainForce = std::max(out.peakHighGainForce, std::abs(highGainForce(s)));
    if (log != nullptr || observer) {
      const Vec2 u = law(s);
      if (observer) observer(t, s, u);
      if (log != nullptr && i % cfg.logStride == 0) log->append(makeSample(plant, t, s, u));
    }
    s = rk4Step(s, law, plant.params, dt);
    ++i;
  }
  out.state = s;
  out.duration = static_cast<double>(i) * dt;
  out.endTime = t0 + out.duration;
  return out;
}

}  // namespace devilstick

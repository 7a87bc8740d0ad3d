#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <sstream>

#include "devilstick/error.hpp"
#include "devilstick/hybrid_sim.hpp"
#include "devilstick/zero_dynamics.hpp"
#include "reference_values.hpp"

using namespace devilstick;

namespace {

constexpr double kPi = std::numbers::pi;

double norm(const Vec2& v) { return std::hypot(v[0], v[1]); }

SimConfig fastConfig(double dt = 1e-4) {
  SimConfig cfg;
  cfg.stepSize = dt;
  cfg.maxTime = 5.0;
  return cfg;
}

FullState integrate(const Plant& plant, FullState s, double duration, double dt) {
  const ControlLaw law = continuousLaw(plant);
  const auto steps = static_cast<int>(std::lround(duration / dt));
  for (int i = 0; i < steps; ++i) s = rk4Step(s, law, plant.params, dt);
  return s;
}

// Rotation period of the pendulum orbit at level c: integral of dq / sqrt(2 (c + g cos q)).
double rotationPeriod(double c, double g) {
  const int n = 20000;
  const double h = 2.0 * kPi / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    sum += w / std::sqrt(2.0 * (c + g * std::cos(i * h)));
  }
  return sum * h / 3.0;
}

ErrorCode codeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(WrapAngle, Examples) {
  EXPECT_DOUBLE_EQ(wrapAngle(0.5), 0.5);
  EXPECT_NEAR(wrapAngle(2.0 * kPi + 0.5), 0.5, 1e-15);
  EXPECT_NEAR(wrapAngle(-2.0 * kPi - 0.5), -0.5, 1e-15);
  EXPECT_DOUBLE_EQ(wrapAngle(kPi), kPi);
  EXPECT_NEAR(wrapAngle(-kPi), kPi, 1e-15);
  EXPECT_NEAR(wrapAngle(3.0 * kPi / 2.0), -kPi / 2.0, 1e-15);
}

TEST(Rk4Step, BallisticFlightIsExact) {
  const StickParams p;
  const ControlLaw none = [](const FullState&) { return Vec2{0.0, 0.0}; };
  FullState s{0.0, 1.0, 0.2, 0.5, 3.0, 4.0};
  const FullState s0 = s;
  const double dt = 0.01;
  for (int i = 0; i < 100; ++i) s = rk4Step(s, none, p, dt);
  const double t = 1.0;
  EXPECT_NEAR(s.h_x, s0.h_x + s0.dh_x * t, 1e-12);
  EXPECT_NEAR(s.h_y, s0.h_y + s0.dh_y * t - 0.5 * p.gravity * t * t, 1e-12);
  EXPECT_NEAR(s.dh_y, s0.dh_y - p.gravity * t, 1e-12);
  EXPECT_NEAR(s.theta, s0.theta + s0.dtheta * t, 1e-12);
}

TEST(Rk4Step, NonFiniteStateRaises) {
  const ControlLaw bad = [](const FullState&) { return Vec2{std::numeric_limits<double>::quiet_NaN(), 0.0}; };
  EXPECT_EQ(codeOf([&] { rk4Step(FullState{}, bad, StickParams{}, 1e-3); }), ErrorCode::NonFiniteState);
}

TEST(Rk4Step, FourthOrderOnClosedLoop) {
  const Plant plant;
  const FullState start = FullState::fromArray(reference::kPeriodicInitial);
  const double horizon = 0.5;
  const FullState exact = integrate(plant, start, horizon, 1e-5);
  std::vector<double> errors;
  for (double dt : {2e-3, 1e-3, 5e-4}) {
    const FullState s = integrate(plant, start, horizon, dt);
    errors.push_back(std::abs(s.theta - exact.theta) + std::abs(s.h_x - exact.h_x) + std::abs(s.h_y - exact.h_y));
  }
  EXPECT_NEAR(errors[0] / errors[1], 16.0, 3.0);
  EXPECT_NEAR(errors[1] / errors[2], 16.0, 3.0);
}

TEST(Rk4Step, EnergyConservedOnManifold) {
  const Plant plant;
  const ControlLaw law = continuousLaw(plant);
  FullState s = stateOnManifold(0.0, 8.0, plant.vhc);
  const double e0 = energy({s.theta, s.dtheta}, plant.vhc, plant.params);
  double prev = e0;
  double worstStep = 0.0;
  for (int i = 0; i < 10000; ++i) {
    s = rk4Step(s, law, plant.params, 1e-4);
    const double e = energy({s.theta, s.dtheta}, plant.vhc, plant.params);
    worstStep = std::max(worstStep, std::abs(e - prev));
    prev = e;
  }
  EXPECT_LE(worstStep, 1e-10);
  EXPECT_LE(std::abs(prev - e0), 1e-8);
}

TEST(Section, CrossingOnManifoldLandsOnFixedPoint) {
  const Plant plant;
  const OrbitSpec orbit{reference::kOrbitEnergy, plant.vhc};
  const double q0 = kPi / 6.0 - 0.01;
  const FullState start = stateOnManifold(q0, dq2OnOrbit(q0, orbit, plant.params), plant.vhc);
  const SectionSpec section{kPi / 6.0};
  const SectionCrossing c = integrateToSection(plant, continuousLaw(plant), start, section, fastConfig());
  const FullState expected = stateOnManifold(kPi / 6.0, dq2OnOrbit(kPi / 6.0, orbit, plant.params), plant.vhc);
  EXPECT_NEAR(c.z.h_x(), expected.h_x, 1e-9);
  EXPECT_NEAR(c.z.h_y(), expected.h_y, 1e-9);
  EXPECT_NEAR(c.z.dh_x(), expected.dh_x, 1e-8);
  EXPECT_NEAR(c.z.dh_y(), expected.dh_y, 1e-8);
  EXPECT_NEAR(c.z.dtheta(), expected.dtheta, 1e-8);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(c.z.z[i], reference::kZStar[i], 1e-4);
}

TEST(Section, FullRotationMatchesQuadraturePeriod) {
  const Plant plant;
  const OrbitSpec orbit{reference::kOrbitEnergy, plant.vhc};
  const SectionSpec section{kPi / 6.0};
  const FullState start = stateOnManifold(kPi / 6.0, dq2OnOrbit(kPi / 6.0, orbit, plant.params), plant.vhc);
  const SectionCrossing c = integrateToSection(plant, continuousLaw(plant), start, section, fastConfig(1e-5));
  EXPECT_NEAR(c.time, rotationPeriod(reference::kOrbitEnergy, plant.params.gravity), 1e-7);
  EXPECT_NEAR(c.time, 0.99, 0.01);
  EXPECT_NEAR(c.state.theta, kPi / 6.0 + 2.0 * kPi, 1e-9);
}

TEST(Section, EventLocalizedToTolerance) {
  const Plant plant;
  const SectionSpec section{1.0};
  SimConfig cfg = fastConfig(1e-3);
  cfg.eventTolerance = 1e-12;
  const FullState start = stateOnManifold(0.0, 8.0, plant.vhc);
  const SectionCrossing c = integrateToSection(plant, continuousLaw(plant), start, section, cfg);
  EXPECT_GE(section.eventValue(c.state.theta), 0.0);
  EXPECT_LE(section.eventValue(c.state.theta), c.state.dtheta * 1e-9);
}

TEST(Section, DownwardCrossingIgnored) {
  const Plant plant;
  const SectionSpec section{kPi / 6.0};
  FullState start = stateOnManifold(kPi / 6.0 + 0.1, -8.0, plant.vhc);
  SimConfig cfg = fastConfig();
  cfg.maxTime = 0.5;
  EXPECT_EQ(codeOf([&] { integrateToSection(plant, continuousLaw(plant), start, section, cfg); }),
            ErrorCode::NoCrossing);
}

TEST(Section, NoCrossingRaises) {
  const Plant plant;
  const SectionSpec section{kPi / 6.0};
  const ControlLaw none = [](const FullState&) { return Vec2{0.0, 0.0}; };
  SimConfig cfg = fastConfig();
  cfg.maxTime = 0.01;
  EXPECT_EQ(codeOf([&] { integrateToSection(plant, none, FullState{}, section, cfg); }), ErrorCode::NoCrossing);
}

TEST(March, NeedsAnEvent) {
  const Plant plant;
  EXPECT_EQ(codeOf([&] { march(plant, continuousLaw(plant), FullState{}, fastConfig(), MarchOptions{}); }),
            ErrorCode::InvalidArgument);
}

TEST(March, CoincidentSectionAndStopReportBoth) {
  const Plant plant;
  const SectionSpec section{0.0};
  MarchOptions opts;
  opts.section = &section;
  opts.thetaStop = 2.0 * kPi;
  const FullState start = stateOnManifold(2.0 * kPi - 0.05, 8.0, plant.vhc);
  const MarchResult r = march(plant, continuousLaw(plant), start, fastConfig(), opts);
  EXPECT_EQ(r.reason, StopReason::Section);
  EXPECT_TRUE(r.thetaStopReached);
  EXPECT_NEAR(r.state.theta, 2.0 * kPi, 1e-9);
}

TEST(March, StopBeforeSection) {
  const Plant plant;
  const SectionSpec section{1.0};
  MarchOptions opts;
  opts.section = &section;
  opts.thetaStop = 0.5;
  const MarchResult r = march(plant, continuousLaw(plant), stateOnManifold(0.0, 8.0, plant.vhc), fastConfig(), opts);
  EXPECT_EQ(r.reason, StopReason::ThetaLimit);
  EXPECT_TRUE(r.thetaStopReached);
  EXPECT_NEAR(r.state.theta, 0.5, 1e-9);
}

TEST(HighGainEpisode, ZeroDurationInsideDeadBand) {
  const Plant plant;
  const FullState s = stateOnManifold(kPi / 6.0, 7.834, plant.vhc);
  const EpisodeResult r = highGainEpisode(plant, s, 0.02, s.dtheta + 0.0005, fastConfig(1e-5));
  EXPECT_EQ(r.duration, 0.0);
  EXPECT_EQ(r.state.dtheta, s.dtheta);
}

TEST(HighGainEpisode, RealizesVelocityJump) {
  const Plant plant;
  const FullState s = stateOnManifold(kPi / 6.0, 7.834, plant.vhc);
  const double arm = continuousControl(s, plant.vhc, plant.params).arm;
  const double impulse = 0.1;
  const double jump = impulse * arm / plant.params.inertia;
  const SimConfig cfg = fastConfig(1e-5);
  const EpisodeResult r = highGainEpisode(plant, s, arm, s.dtheta + jump, cfg);
  EXPECT_LE(std::abs(r.state.dtheta - (s.dtheta + jump)), cfg.highGain.eps3);
  EXPECT_GT(r.duration, 0.0);
  EXPECT_LT(r.duration, 0.02);
  // Positions stay where the unperturbed flow would have put them.
  const FullState coast = integrate(plant, s, r.duration, cfg.stepSize);
  EXPECT_LE(std::abs(r.state.h_x - coast.h_x), 1e-3);
  EXPECT_LE(std::abs(r.state.h_y - coast.h_y), 1e-3);
  EXPECT_LE(std::abs(r.state.theta - coast.theta), 1e-3);
  EXPECT_GT(r.peakHighGainForce, 0.0);
}

TEST(HighGainEpisode, SmallerTimeConstantIsShorterAndStronger) {
  const Plant plant;
  const FullState s = stateOnManifold(kPi / 6.0, 7.834, plant.vhc);
  const double arm = continuousControl(s, plant.vhc, plant.params).arm;
  const double target = s.dtheta + 0.1 * arm / plant.params.inertia;
  double prevDuration = 0.0;
  double prevPeak = std::numeric_limits<double>::infinity();
  for (double mu : {1.25e-4, 2.5e-4, 5e-4, 1e-3}) {
    SimConfig cfg = fastConfig(1e-5);
    cfg.highGain.mu = mu;
    const EpisodeResult r = highGainEpisode(plant, s, arm, target, cfg);
    EXPECT_GT(r.duration, prevDuration) << "mu " << mu;
    EXPECT_LT(r.peakHighGainForce, prevPeak) << "mu " << mu;
    prevDuration = r.duration;
    prevPeak = r.peakHighGainForce;
  }
}

TEST(HighGainEpisode, Errors) {
  const Plant plant;
  const FullState s = stateOnManifold(kPi / 6.0, 7.834, plant.vhc);
  EXPECT_EQ(codeOf([&] { highGainEpisode(plant, s, 0.0, s.dtheta + 1.0, fastConfig(1e-5)); }),
            ErrorCode::DegenerateForce);
  SimConfig cfg = fastConfig(1e-5);
  cfg.highGain.timeout = 1e-4;
  EXPECT_EQ(codeOf([&] { highGainEpisode(plant, s, 0.021, s.dtheta + 1.0, cfg); }), ErrorCode::EpisodeTimeout);
}

TEST(ClosedLoop, ConstraintErrorDecaysExponentially) {
  const Plant plant;
  const ControlLaw law = continuousLaw(plant);
  FullState s = FullState::fromArray(reference::kPeriodicInitial);
  const double dt = 1e-4;
  double early = 0.0;
  double late = 0.0;
  double firstSmall = -1.0;
  double prevForce = law(s)[0];
  double prevArm = law(s)[1] / prevForce;
  double worstForceJump = 0.0;
  double worstArmJump = 0.0;
  for (int i = 1; i <= 40000; ++i) {
    s = rk4Step(s, law, plant.params, dt);
    const double t = i * dt;
    const double rho = norm(constraintError(s, plant.vhc).rho);
    if (t >= 1.0 && t < 1.5) early = std::max(early, rho);
    if (t >= 3.0 && t < 3.5) late = std::max(late, rho);
    if (firstSmall < 0.0 && rho < 1e-4) firstSmall = t;
    const Vec2 u = law(s);
    worstForceJump = std::max(worstForceJump, std::abs(u[0] - prevForce));
    worstArmJump = std::max(worstArmJump, std::abs(u[1] / u[0] - prevArm));
    prevForce = u[0];
    prevArm = u[1] / u[0];
  }
  ASSERT_GT(firstSmall, 0.0);
  EXPECT_LT(firstSmall, 4.0);
  // Error dynamics s^2 + 5.5 s + 40: envelope exp(-2.75 t) over two seconds.
  EXPECT_NEAR(std::log(late / early) / 2.0, -2.75, 0.5);
  EXPECT_LT(worstForceJump, 0.05);
  EXPECT_LT(worstArmJump, 1e-3);
}

TEST(ClosedLoop, EnergyPerRotationSettlesOnceConverged) {
  const Plant plant;
  const SectionSpec section{kPi / 6.0};
  SimConfig cfg = fastConfig(1e-4);
  cfg.maxTime = 10.0;
  FullState s = FullState::fromArray(reference::kPeriodicInitial);
  double t = 0.0;
  std::vector<double> energies;
  for (int k = 0; k < 10; ++k) {
    const SectionCrossing c = integrateToSection(plant, continuousLaw(plant), s, section, cfg, t);
    s = c.state;
    t = c.time;
    if (norm(constraintError(s, plant.vhc).rho) < 1e-6) {
      energies.push_back(energy({s.theta, s.dtheta}, plant.vhc, plant.params));
    }
  }
  ASSERT_GE(energies.size(), 2u);
  for (std::size_t i = 1; i < energies.size(); ++i) EXPECT_LE(std::abs(energies[i] - energies[i - 1]), 1e-4);
}

TEST(TrajectoryLog, TimestampsIncreaseAndCsvHeader) {
  const Plant plant;
  const SectionSpec section{kPi / 6.0};
  SimConfig cfg = fastConfig(1e-4);
  cfg.logStride = 10;
  TrajectoryLog log;
  integrateToSection(plant, continuousLaw(plant), stateOnManifold(0.0, 8.0, plant.vhc), section, cfg, 0.0, &log);
  ASSERT_GT(log.samples.size(), 5u);
  for (std::size_t i = 1; i < log.samples.size(); ++i) EXPECT_GT(log.samples[i].t, log.samples[i - 1].t);
  const std::size_t before = log.samples.size();
  log.append(log.samples.front());
  EXPECT_EQ(log.samples.size(), before);
  std::ostringstream os;
  log.writeCsv(os);
  const std::string csv = os.str();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,h_x,h_y,theta,dh_x,dh_y,dtheta,F,r,rho1,rho2,E,theta_wrapped");
  const auto lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
  EXPECT_EQ(lines, log.samples.size() + 1);
}

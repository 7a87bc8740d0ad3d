#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>

#include "devilstick/error.hpp"
#include "devilstick/icpm.hpp"
#include "reference_values.hpp"

using namespace devilstick;
using numerics::Matrix;
using numerics::Vector;

namespace {

constexpr double kPi = std::numbers::pi;

ErrorCode codeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return ErrorCode::InvalidArgument;
}

Plant defaultPlant() { return Plant{}; }

// The linearization and the closed-loop runs are expensive; compute them once.
struct Propeller {
  Plant plant = defaultPlant();
  SectionSpec section{kPi / 6.0};
  SimConfig cfg;
  OrbitSpec orbit{reference::kOrbitEnergy, plant.vhc};
  SectionState zStar = fixedPoint(orbit, section, plant.params);
  PoincareMap map{plant, section, cfg};
  double rStar = map.armAt(zStar);

  const LinearizedMap& lin() {
    if (!lin_) lin_ = linearizeMap(map, zStar, rStar, 1e-6, 1e-6);
    return *lin_;
  }
  const IcpmGains& gains() {
    if (!gains_) gains_ = synthesizeGain(lin(), Matrix::identity(5), 2.0);
    return *gains_;
  }
  const StabilizationRun& run() {
    if (!run_) {
      StabilizeOptions opts;
      opts.gain = gains().k;
      run_ = stabilizeRun(FullState::fromArray(reference::kPeriodicInitial), map, zStar, opts);
    }
    return *run_;
  }

 private:
  std::optional<LinearizedMap> lin_;
  std::optional<IcpmGains> gains_;
  std::optional<StabilizationRun> run_;
};

Propeller& propeller() {
  static Propeller p;
  return p;
}

double minSingularValue(const Vector& sv) { return *std::min_element(sv.begin(), sv.end()); }

}  // namespace

TEST(FixedPoint, MatchesClosedForm) {
  const StickParams p;
  const SectionState z = fixedPoint({22.19, VhcSpec{}}, SectionSpec{kPi / 6.0}, p);
  const double rate = std::sqrt(2.0 * (22.19 + 9.81 * std::cos(kPi / 6.0)));
  EXPECT_NEAR(z.h_x(), std::sin(kPi / 6.0), 1e-15);
  EXPECT_NEAR(z.h_y(), -std::cos(kPi / 6.0), 1e-15);
  EXPECT_NEAR(z.dh_x(), std::cos(kPi / 6.0) * rate, 1e-12);
  EXPECT_NEAR(z.dh_y(), std::sin(kPi / 6.0) * rate, 1e-12);
  EXPECT_NEAR(z.dtheta(), rate, 1e-12);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(z.z[i], reference::kZStar[i], 1e-4);
}

TEST(FixedPoint, BottomOfCircle) {
  const SectionState z = fixedPoint({22.19, VhcSpec{}}, SectionSpec{0.0}, StickParams{});
  const std::array<double, 5> expected{0.0, -1.0, 8.0, 0.0, 8.0};
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(z.z[i], expected[i], 1e-12);
}

TEST(FixedPoint, EnergyRoundTrip) {
  const StickParams p;
  const VhcSpec vhc;
  for (double q : {0.0, 0.5, 2.0, 4.0}) {
    const SectionState z = fixedPoint({30.0, vhc}, SectionSpec{q}, p);
    EXPECT_NEAR(energy({q, z.dtheta()}, vhc, p), 30.0, 1e-12);
  }
}

TEST(FixedPoint, RequiresPropellerOrbit) {
  const StickParams p;
  EXPECT_EQ(codeOf([&] { fixedPoint({5.0, VhcSpec{}}, SectionSpec{0.0}, p); }), ErrorCode::NotPropeller);
  VhcSpec tilted;
  tilted.phase = kPi / 2.0 - 0.01;
  EXPECT_EQ(codeOf([&] { fixedPoint({22.19, tilted}, SectionSpec{0.0}, p); }), ErrorCode::NotPropeller);
}

TEST(PoincareMap, FixedPointResidual) {
  Propeller& s = propeller();
  const SectionState next = s.map(s.zStar, 0.0);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(next.z[i], s.zStar.z[i], 1e-6);
}

TEST(PoincareMap, ImpulseJump) {
  Propeller& s = propeller();
  const double arm = -0.0015;
  const Vec5 jump = s.map.impulseJump(0.01, arm);
  EXPECT_EQ(jump[0], 0.0);
  EXPECT_EQ(jump[1], 0.0);
  EXPECT_NEAR(jump[2], -0.05, 1e-12);
  EXPECT_NEAR(jump[3], 0.0866025, 1e-6);
  EXPECT_NEAR(jump[4], 0.01 * arm / 0.0021, 1e-12);
}

TEST(PoincareMap, SmallImpulseFollowsLinearization) {
  Propeller& s = propeller();
  const LinearizedMap& lin = s.lin();
  const double impulse = 2e-4;
  const SectionState next = s.map(s.zStar, impulse);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(next.z[i], s.zStar.z[i] + lin.b[i] * impulse, 1e-6);
}

TEST(Linearize, RecoversLinearMap) {
  const Matrix a{{0.5, 0.1, 0, 0, 0}, {0, -0.3, 0.2, 0, 0}, {0, 0, 0.9, 0.1, 0}, {0.4, 0, 0, 0.2, 0}, {0, 0, 0, 0, 1.1}};
  const SectionState zStar{{1.0, -2.0, 3.0, 0.5, 7.0}};
  const ReturnMap flow = [&](const Vec5& z) {
    Vector d(5);
    for (std::size_t i = 0; i < 5; ++i) d[i] = z[i] - zStar.z[i];
    const Vector ad = a * d;
    Vec5 out{};
    for (std::size_t i = 0; i < 5; ++i) out[i] = zStar.z[i] + ad[i];
    return out;
  };
  const double eps2 = 1e-6;
  const Vec5 jump{0.0, 0.0, 2e-6, -1e-6, 3e-6};
  const LinearizedMap lin = linearizeReturnMap(flow, zStar, jump, 1e-6, eps2);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(lin.a(i, j), a(i, j), 1e-8);
    double expected = 0.0;
    for (std::size_t j = 0; j < 5; ++j) expected += a(i, j) * jump[j] / eps2;
    EXPECT_NEAR(lin.b[i], expected, 1e-8);
  }
  EXPECT_EQ(codeOf([&] { linearizeReturnMap(flow, zStar, jump, 0.0, eps2); }), ErrorCode::InvalidArgument);
}

TEST(Linearize, MatchesPublishedMatrices) {
  const LinearizedMap& lin = propeller().lin();
  const Matrix a = reference::linearizedA();
  const Vector b = reference::linearizedB();
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(lin.a(i, j), a(i, j), std::max(0.02, 0.1 * std::abs(a(i, j))));
    EXPECT_NEAR(lin.b[i], b[i], std::max(0.02, 0.1 * std::abs(b[i])));
  }
}

TEST(Linearize, InsensitiveToPerturbationSize) {
  Propeller& s = propeller();
  for (double eps : {1e-4, 1e-5, 1e-7}) {
    const LinearizedMap other = linearizeMap(s.map, s.zStar, s.rStar, eps, eps);
    EXPECT_LE(sweepDeviation(other, s.lin()), 1.0) << "eps " << eps;
  }
}

TEST(Linearize, TruncationErrorShrinksWithStep) {
  Propeller& s = propeller();
  std::vector<double> dev;
  for (double eps : {1e-3, 5e-4, 2.5e-4}) {
    const LinearizedMap other = linearizeMap(s.map, s.zStar, s.rStar, eps, eps);
    dev.push_back(sweepDeviation(other, s.lin(), 0.0, 1.0));
  }
  EXPECT_LE(dev[1] / dev[0], 0.6);
  EXPECT_LE(dev[2] / dev[1], 0.6);
}

TEST(SweepDeviation, Units) {
  LinearizedMap a;
  a.a = Matrix(1, 1, 1.0);
  a.b = {0.0};
  LinearizedMap b = a;
  b.a(0, 0) = 1.02;
  EXPECT_NEAR(sweepDeviation(b, a), 2.0, 1e-9);
  b.a(0, 0) = 1.0;
  b.b[0] = 1e-4;
  EXPECT_NEAR(sweepDeviation(b, a), 2.0, 1e-9);
  b.b = {0.0, 0.0};
  EXPECT_EQ(codeOf([&] { sweepDeviation(b, a); }), ErrorCode::InvalidArgument);
}

TEST(SynthesizeGain, StabilizesTheReturnMap) {
  const IcpmGains& g = propeller().gains();
  double openRadius = 0.0;
  for (const auto& l : g.openLoopEigenvalues) openRadius = std::max(openRadius, std::abs(l));
  EXPECT_GE(openRadius, 1.0);
  EXPECT_LT(g.closedLoopSpectralRadius, 1.0);
  EXPECT_LT(g.dareResidual, 1e-9);
  ASSERT_EQ(g.k.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(g.k[i], -g.kLqr[i]);
  const LinearizedMap& lin = propeller().lin();
  EXPECT_NEAR(closedLoopSpectralRadius(lin.a, lin.b, g.k), g.closedLoopSpectralRadius, 1e-12);
  const Vector ref = reference::gainK();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(g.k[i], ref[i], std::max(5e-4, 0.01 * std::abs(ref[i])));
}

TEST(SynthesizeGain, PublishedMatricesGivePublishedGain) {
  LinearizedMap lin;
  lin.a = reference::linearizedA();
  lin.b = reference::linearizedB();
  const IcpmGains g = synthesizeGain(lin, Matrix::identity(5), 2.0);
  const Vector ref = reference::gainK();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(g.k[i], ref[i], std::max(5e-4, 0.02 * std::abs(ref[i])));
}

TEST(SynthesizeGain, UnreachableUnstableModeRejected) {
  LinearizedMap lin;
  lin.a = Matrix{{1.5, 0.0}, {0.0, 0.5}};
  lin.b = {0.0, 1.0};
  EXPECT_EQ(codeOf([&] { synthesizeGain(lin, Matrix::identity(2), 1.0); }), ErrorCode::NotControllable);
}

TEST(SynthesizeGain, UnreachableContractingModeAccepted) {
  LinearizedMap lin;
  lin.a = Matrix{{1.5, 0.0}, {0.0, 0.5}};
  lin.b = {1.0, 0.0};
  const IcpmGains g = synthesizeGain(lin, Matrix::identity(2), 1.0);
  EXPECT_LT(g.closedLoopSpectralRadius, 1.0);
  EXPECT_LT(minSingularValue(g.controllabilitySingularValues), 1e-12);
  EXPECT_GT(g.stabilizabilityMargin, 0.1);
}

TEST(StabilizabilityMargin, ComplexPairs) {
  const Matrix a{{0.0, -1.2}, {1.2, 0.0}};
  const auto eig = numerics::eigenvaluesDense(a);
  EXPECT_GT(stabilizabilityMargin(a, std::vector<double>{1.0, 0.0}, eig), 0.1);
  const Matrix block{{0.0, -1.2, 0.0}, {1.2, 0.0, 0.0}, {0.0, 0.0, 0.3}};
  EXPECT_LT(stabilizabilityMargin(block, std::vector<double>{0.0, 0.0, 1.0}, numerics::eigenvaluesDense(block)), 1e-12);
  const Matrix stable{{0.5}};
  EXPECT_TRUE(std::isinf(stabilizabilityMargin(stable, std::vector<double>{0.0}, numerics::eigenvaluesDense(stable))));
}

TEST(Controllability, EqualChannelGainsLeaveTransverseModesUnreachable) {
  const IcpmGains& g = propeller().gains();
  EXPECT_LT(minSingularValue(g.controllabilitySingularValues), 1e-6);
  EXPECT_GT(g.stabilizabilityMargin, 1e-3);
}

TEST(Controllability, UnequalChannelGainsRestoreReachability) {
  Plant plant;
  plant.vhc.kp = Mat2{Vec2{40.0, 0.0}, Vec2{0.0, 41.0}};
  const SectionSpec section{kPi / 6.0};
  const PoincareMap map(plant, section, SimConfig{});
  const SectionState zStar = fixedPoint({reference::kOrbitEnergy, plant.vhc}, section, plant.params);
  const LinearizedMap lin = linearizeMap(map, zStar, map.armAt(zStar), 1e-6, 1e-6);
  const LinearizedMap& equal = propeller().lin();
  const double svUnequal = minSingularValue(numerics::singularValues(controllabilityMatrix(lin.a, lin.b)));
  const double svEqual = minSingularValue(numerics::singularValues(controllabilityMatrix(equal.a, equal.b)));
  EXPECT_GT(svUnequal, 1000.0 * svEqual);
  // Every mode, contracting or not, is tested here.
  const double pbhUnequal = stabilizabilityMargin(lin.a, lin.b, numerics::eigenvaluesDense(lin.a), 0.0);
  const double pbhEqual = stabilizabilityMargin(equal.a, equal.b, numerics::eigenvaluesDense(equal.a), 0.0);
  EXPECT_GT(pbhUnequal, 1000.0 * pbhEqual);
}

TEST(StabilizeRun, ConvergesToTheOrbit) {
  Propeller& s = propeller();
  const StabilizationRun& run = s.run();
  const auto& crossings = run.log.crossings;
  ASSERT_GE(crossings.size(), 6u);
  for (const CrossingEvent& c : crossings) EXPECT_GT(c.impulse, 0.0) << "k " << c.k;
  EXPECT_GT(run.feasibility.minForce(), 0.0);
  for (std::size_t i = 2; i < crossings.size(); ++i) {
    EXPECT_LT(std::abs(crossings[i].energy - reference::kOrbitEnergy),
              std::abs(crossings[i - 1].energy - reference::kOrbitEnergy));
  }
  const auto errorNorm = [&](const CrossingEvent& c) {
    double n = 0.0;
    for (std::size_t i = 0; i < 5; ++i) n = std::max(n, std::abs(c.z.z[i] - s.zStar.z[i]));
    return n;
  };
  EXPECT_LT(errorNorm(crossings.back()), errorNorm(crossings[1]));
  EXPECT_NEAR(run.duration, reference::kPeriodicDuration, 0.03 * reference::kPeriodicDuration);
  EXPECT_EQ(run.rotationTimes.size(), 8u);
  for (const CrossingEvent& c : crossings) {
    if (c.highGainActive) {
      EXPECT_LE(std::abs(c.dq2AfterEpisode - c.dq2Desired), s.cfg.highGain.eps3);
    }
  }
}

TEST(StabilizeRun, StartOnFixedPointStaysOnOrbit) {
  Propeller& s = propeller();
  StabilizeOptions opts;
  opts.rotations = 2;
  opts.gain = s.gains().k;
  const StabilizationRun run = stabilizeRun(s.zStar.toFullState(s.section.q2Star), s.map, s.zStar, opts);
  ASSERT_FALSE(run.log.crossings.empty());
  for (const CrossingEvent& c : run.log.crossings) {
    EXPECT_LT(std::abs(c.impulse), 1e-6);
    EXPECT_FALSE(c.highGainActive);
  }
  EXPECT_NEAR(run.finalEnergy, reference::kOrbitEnergy, 1e-6);
  EXPECT_EQ(run.lastActiveCrossing, 0);
}

TEST(StabilizeRun, WithoutFeedbackSettlesOnLowerLevel) {
  Propeller& s = propeller();
  StabilizeOptions opts;
  opts.gain = Vector(5, 0.0);
  const StabilizationRun run = stabilizeRun(FullState::fromArray(reference::kPeriodicInitial), s.map, s.zStar, opts);
  EXPECT_NEAR(run.finalEnergy, reference::kContinuousOnlyEnergy, 0.05);
  EXPECT_EQ(run.lastActiveCrossing, 0);
}

TEST(StabilizeRun, RejectsBadOptions) {
  Propeller& s = propeller();
  StabilizeOptions opts;
  opts.rotations = 0;
  EXPECT_EQ(codeOf([&] { stabilizeRun(FullState{}, s.map, s.zStar, opts); }), ErrorCode::InvalidArgument);
  opts.rotations = 1;
  opts.gain = {1.0, 2.0};
  EXPECT_EQ(codeOf([&] { stabilizeRun(FullState{}, s.map, s.zStar, opts); }), ErrorCode::InvalidArgument);
}

#include "devilstick/icpm.hpp"

#include <cmath>
#include <algorithm>
#include <future>
#include <limits>
#include <numbers>
#include <sstream>

#include "devilstick/error.hpp"

namespace devilstick {

using numerics::Matrix;
using numerics::Vector;

SectionState fixedPoint(const OrbitSpec& orbit, const SectionSpec& section, const StickParams& p) {
  const OrbitClass cls = classifyOrbit(orbit, p);
  if (cls != OrbitClass::Propeller) {
    std::ostringstream os;
    os << "orbit with level " << orbit.energy << " is " << toString(cls);
    throw Error(ErrorCode::NotPropeller, os.str());
  }
  const double dq2 = dq2OnOrbit(section.q2Star, orbit, p);
  return SectionState::fromFullState(stateOnManifold(section.q2Star, dq2, orbit.vhc));
}

PoincareMap::PoincareMap(Plant plant, SectionSpec section, SimConfig cfg)
    : plant_(plant), section_(section), cfg_(cfg) {}

double PoincareMap::armAt(const SectionState& z) const {
  return continuousControl(z.toFullState(section_.q2Star), plant_.vhc, plant_.params).arm;
}

Vec5 PoincareMap::impulseJump(double impulse, double arm) const {
  const StandardForm sf = standardFormMatrices(section_.q2Star, plant_.params);
  const Vec2 eta{impulse, impulse * arm};
  Vec5 s{};
  s[2] = sf.b[0][0] * eta[0] + sf.b[0][1] * eta[1];
  s[3] = sf.b[1][0] * eta[0] + sf.b[1][1] * eta[1];
  s[4] = sf.d[0] * eta[0] + sf.d[1] * eta[1];
  return s;
}

SectionState PoincareMap::flow(const SectionState& z) const {
  const FullState start = z.toFullState(section_.q2Star);
  return integrateToSection(plant_, continuousLaw(plant_), start, section_, cfg_).z;
}

SectionState PoincareMap::operator()(const SectionState& z, double impulse) const {
  if (impulse == 0.0) return flow(z);
  const Vec5 jump = impulseJump(impulse, armAt(z));
  SectionState jumped = z;
  for (std::size_t i = 0; i < 5; ++i) jumped.z[i] += jump[i];
  return flow(jumped);
}

LinearizedMap linearizeReturnMap(const ReturnMap& flow, const SectionState& zStar, const Vec5& jump, double eps1,
                                 double eps2) {
  if (!(eps1 > 0.0) || !(eps2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "perturbation sizes must be positive");
  const numerics::VectorFunction f = [&flow](std::span<const double> x) {
    Vec5 in{};
    for (std::size_t i = 0; i < 5; ++i) in[i] = x[i];
    const Vec5 out = flow(in);
    return Vector(out.begin(), out.end());
  };
  const Vector base(zStar.z.begin(), zStar.z.end());

  std::vector<std::future<Vector>> columns;
  for (std::size_t i = 0; i < 5; ++i) {
    columns.push_back(std::async(std::launch::async, [&, i] {
      return numerics::finiteDifferenceColumn(f, base, base, i, eps1);
    }));
  }
  auto bColumn = std::async(std::launch::async, [&] {
    Vec5 shifted = zStar.z;
    for (std::size_t i = 0; i < 5; ++i) shifted[i] += jump[i];
    const Vec5 out = flow(shifted);
    Vector col(5);
    for (std::size_t i = 0; i < 5; ++i) col[i] = (out[i] - zStar.z[i]) / eps2;
    return col;
  });

  LinearizedMap lin;
  lin.a = Matrix(5, 5);
  for (std::size_t i = 0; i < 5; ++i) lin.a.setColumn(i, columns[i].get());
  lin.b = bColumn.get();
  lin.eps1 = eps1;
  lin.eps2 = eps2;
  lin.zStar = zStar;
  return lin;
}

LinearizedMap linearizeMap(const PoincareMap& map, const SectionState& zStar, double rStar, double eps1,
                           double eps2) {
  const ReturnMap flow = [&map](const Vec5& z) { return map.flow(SectionState{z}).z; };
  LinearizedMap lin = linearizeReturnMap(flow, zStar, map.impulseJump(eps2, rStar), eps1, eps2);
  lin.rStar = rStar;
  return lin;
}

double sweepDeviation(const LinearizedMap& lin, const LinearizedMap& ref, double relTol, double absFloor) {
  if (lin.a.rows() != ref.a.rows() || lin.a.cols() != ref.a.cols() || lin.b.size() != ref.b.size()) {
    throw Error(ErrorCode::InvalidArgument, "linearizations differ in shape");
  }
  const auto scaled = [&](double x, double r) { return std::abs(x - r) / std::max(relTol * std::abs(r), absFloor); };
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.a.rows(); ++i) {
    for (std::size_t j = 0; j < ref.a.cols(); ++j) worst = std::max(worst, scaled(lin.a(i, j), ref.a(i, j)));
  }
  for (std::size_t i = 0; i < ref.b.size(); ++i) worst = std::max(worst, scaled(lin.b[i], ref.b[i]));
  return worst;
}

Matrix controllabilityMatrix(const Matrix& a, std::span<const double> b) {
  const std::size_t n = a.rows();
  Matrix c(n, n);
  Vector col(b.begin(), b.end());
  for (std::size_t j = 0; j < n; ++j) {
    c.setColumn(j, col);
    col = a * col;
  }
  return c;
}

double stabilizabilityMargin(const Matrix& a, std::span<const double> b,
                             const std::vector<std::complex<double>>& eigenvalues, double threshold) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) throw Error(ErrorCode::InvalidArgument, "PBH test needs square A and matching b");
  double scale = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = std::abs(b[i]);
    for (std::size_t j = 0; j < n; ++j) row += std::abs(a(i, j));
    scale = std::max(scale, row);
  }
  double margin = std::numeric_limits<double>::infinity();
  for (const std::complex<double>& lambda : eigenvalues) {
    if (std::abs(lambda) < threshold || lambda.imag() < 0.0) continue;
    const double re = lambda.real();
    const double im = lambda.imag();
    Matrix pbh;
    if (im == 0.0) {
      pbh = Matrix(n, n + 1);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) pbh(i, j) = a(i, j) - (i == j ? re : 0.0);
        pbh(i, n) = b[i];
      }
    } else {
      // [[A - re I, im I, b, 0], [-im I, A - re I, 0, b]]
      pbh = Matrix(2 * n, 2 * n + 2);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double v = a(i, j) - (i == j ? re : 0.0);
          pbh(i, j) = v;
          pbh(n + i, n + j) = v;
        }
        pbh(i, n + i) = im;
        pbh(n + i, i) = -im;
        pbh(i, 2 * n) = b[i];
        pbh(n + i, 2 * n + 1) = b[i];
      }
    }
    const Vector sv = numerics::singularValues(pbh);
    margin = std::min(margin, sv.back() / scale);
  }
  return margin;
}

double closedLoopSpectralRadius(const Matrix& a, std::span<const double> b, std::span<const double> k) {
  return numerics::spectralRadius(a + Matrix::columnVector(b) * Matrix::rowVector(k));
}

IcpmGains synthesizeGain(const LinearizedMap& lin, const Matrix& q, double rWeight) {
  IcpmGains g;
  g.q = q;
  g.rWeight = rWeight;
  g.openLoopEigenvalues = numerics::eigenvaluesDense(lin.a);
  g.controllabilitySingularValues = numerics::singularValues(controllabilityMatrix(lin.a, lin.b));
  g.stabilizabilityMargin = stabilizabilityMargin(lin.a, lin.b, g.openLoopEigenvalues);
  if (g.stabilizabilityMargin <= kControllabilityTolerance) {
    std::ostringstream os;
    os << "a mode with |lambda| >= 1 is not reachable by the impulse (PBH margin " << g.stabilizabilityMargin << ")";
    throw Error(ErrorCode::NotControllable, os.str());
  }
  const Matrix bMat = Matrix::columnVector(lin.b);
  const numerics::DareSolution dare = numerics::solveDare(lin.a, bMat, q, Matrix{{rWeight}});
  g.kLqr = dare.gain.row(0);
  g.k = g.kLqr;
  for (double& v : g.k) v = -v;
  g.dareResidual = dare.residualNorm;
  const Matrix closed = lin.a + bMat * Matrix::rowVector(g.k);
  g.closedLoopEigenvalues = numerics::eigenvaluesDense(closed);
  g.closedLoopSpectralRadius = numerics::spectralRadius(closed);
  if (g.closedLoopSpectralRadius >= 1.0) {
    throw Error(ErrorCode::NotStabilizable, "realized closed loop A + B K is not Schur");
  }
  return g;
}

StabilizationRun stabilizeRun(const FullState& initial, const PoincareMap& map, const SectionState& zStar,
                              const StabilizeOptions& options) {
  const Plant& plant = map.plant();
  const SimConfig& cfg = map.config();
  const SectionSpec& section = map.section();
  if (options.rotations <= 0) throw Error(ErrorCode::InvalidArgument, "rotation count must be positive");
  const bool feedback = std::any_of(options.gain.begin(), options.gain.end(), [](double v) { return v != 0.0; });
  if (feedback && options.gain.size() != 5) throw Error(ErrorCode::InvalidArgument, "gain must have 5 entries");

  StabilizationRun run{{}, 0.0, initial, 0.0, FeasibilityMonitor(plant.vhc, plant.params), 0, {}};
  const StepObserver observer = [&run](double t, const FullState& s, const Vec2& u) {
    const double arm = u[0] != 0.0 ? u[1] / u[0] : std::numeric_limits<double>::quiet_NaN();
    run.feasibility.observe(t, s, u[0], arm);
  };
  const ControlLaw law = continuousLaw(plant);

  FullState s = initial;
  double t = 0.0;
  int rotation = 1;
  int k = 0;
  for (;;) {
    MarchOptions opts;
    opts.t0 = t;
    opts.section = &section;
    opts.thetaStop = initial.theta + 2.0 * std::numbers::pi * rotation;
    opts.log = &run.log;
    opts.observer = observer;
    const MarchResult seg = march(plant, law, s, cfg, opts);
    s = seg.state;
    t = seg.time;
    if (seg.reason == StopReason::ThetaLimit) {
      run.rotationTimes.push_back(t);
      if (rotation == options.rotations) break;
      ++rotation;
      continue;
    }

    CrossingEvent ev;
    ev.k = ++k;
    ev.time = t;
    ev.z = SectionState::fromFullState(s);
    ev.energy = energy({s.theta, s.dtheta}, plant.vhc, plant.params);
    ev.arm = continuousControl(s, plant.vhc, plant.params).arm;
    if (feedback) {
      double impulse = 0.0;
      for (std::size_t i = 0; i < 5; ++i) impulse += options.gain[i] * (ev.z.z[i] - zStar.z[i]);
      ev.impulse = impulse;
    }
    ev.dq2Desired = s.dtheta + ev.impulse * ev.arm / plant.params.inertia;
    ev.dq2AfterEpisode = s.dtheta;
    if (std::abs(ev.dq2Desired - s.dtheta) > cfg.highGain.eps3) {
      const EpisodeResult ep = highGainEpisode(plant, s, ev.arm, ev.dq2Desired, cfg, t, &run.log, observer);
      ev.highGainActive = true;
      ev.highGainDuration = ep.duration;
      ev.peakHighGainForce = ep.peakHighGainForce;
      ev.dq2AfterEpisode = ep.state.dtheta;
      s = ep.state;
      t = ep.endTime;
      run.lastActiveCrossing = ev.k;
    }
    run.log.crossings.push_back(ev);
    if (seg.thetaStopReached) {
      run.rotationTimes.push_back(seg.time);
      if (rotation == options.rotations) break;
      ++rotation;
    }
  }

  run.duration = t;
  run.finalState = s;
  run.finalEnergy = energy({s.theta, s.dtheta}, plant.vhc, plant.params);
  return run;
}

}  // namespace devilstick

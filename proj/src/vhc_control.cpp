#include "devilstick/vhc_control.hpp"

#include <cmath>
#include <sstream>

#include "devilstick/error.hpp"

namespace devilstick {

namespace {

bool symmetricPositiveDefinite(const Mat2& k) {
  if (std::abs(k[0][1] - k[1][0]) > 1e-12 * (std::abs(k[0][1]) + 1.0)) return false;
  return k[0][0] > 0.0 && k[0][0] * k[1][1] - k[0][1] * k[1][0] > 0.0;
}

Vec2 apply(const Mat2& k, const Vec2& v) {
  return {k[0][0] * v[0] + k[0][1] * v[1], k[1][0] * v[0] + k[1][1] * v[1]};
}

void requireNonsingular(const VhcSpec& spec) {
  if (std::abs(std::sin(spec.phase)) < kSingularPhaseTolerance) {
    std::ostringstream os;
    os << "phase " << spec.phase << " makes the decoupling matrix singular";
    throw Error(ErrorCode::SingularVhc, os.str());
  }
}

}  // namespace

void VhcSpec::validate() const {
  if (!(std::isfinite(radius) && radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "VHC radius must be positive");
  if (!(phase > -std::numbers::pi && phase <= std::numbers::pi)) {
    throw Error(ErrorCode::InvalidArgument, "VHC phase must lie in (-pi, pi]");
  }
  if (!symmetricPositiveDefinite(kp) || !symmetricPositiveDefinite(kd)) {
    throw Error(ErrorCode::InvalidArgument, "kp and kd must be symmetric positive-definite");
  }
  requireNonsingular(*this);
}

VhcCurve phiAndDerivatives(double q2, const VhcSpec& spec) {
  const double c = spec.radius * std::cos(q2 - spec.phase);
  const double s = spec.radius * std::sin(q2 - spec.phase);
  return {{c, s}, {-s, c}, {-c, -s}};
}

ConstraintError constraintError(const FullState& st, const VhcSpec& spec) {
  const VhcCurve phi = phiAndDerivatives(st.theta, spec);
  return {{st.h_x - phi.value[0], st.h_y - phi.value[1]},
          {st.dh_x - phi.first[0] * st.dtheta, st.dh_y - phi.first[1] * st.dtheta}};
}

FullState stateOnManifold(double q2, double dq2, const VhcSpec& spec) {
  const VhcCurve phi = phiAndDerivatives(q2, spec);
  return {phi.value[0], phi.value[1], q2, phi.first[0] * dq2, phi.first[1] * dq2, dq2};
}

DecouplingMatrix decouplingMatrix(double q2, const VhcSpec& spec, const StickParams& p) {
  requireNonsingular(spec);
  const StandardForm sf = standardFormMatrices(q2, p);
  const VhcCurve phi = phiAndDerivatives(q2, spec);
  DecouplingMatrix out;
  out.matrix = numerics::Matrix(2, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) out.matrix(i, j) = sf.b[i][j] - phi.first[i] * sf.d[j];
  out.determinant = out.matrix(0, 0) * out.matrix(1, 1) - out.matrix(0, 1) * out.matrix(1, 0);
  return out;
}

Vec2 continuousControlEffort(const FullState& s, const VhcSpec& spec, const StickParams& p) {
  const DecouplingMatrix dm = decouplingMatrix(s.theta, spec, p);
  const StandardForm sf = standardFormMatrices(s.theta, p);
  const VhcCurve phi = phiAndDerivatives(s.theta, spec);
  const ConstraintError err = constraintError(s, spec);
  const Vec2 kpRho = apply(spec.kp, err.rho);
  const Vec2 kdRhoDot = apply(spec.kd, err.rhoDot);
  const double dq2sq = s.dtheta * s.dtheta;
  std::array<double, 2> rhs{};
  for (std::size_t i = 0; i < 2; ++i) {
    rhs[i] = -sf.a[i] + phi.second[i] * dq2sq + phi.first[i] * sf.c - kpRho[i] - kdRhoDot[i];
  }
  const numerics::Vector u = numerics::solveLinear(dm.matrix, rhs);
  return {u[0], u[1]};
}

ControlInput continuousControl(const FullState& s, const VhcSpec& spec, const StickParams& p, double forceFloor) {
  const Vec2 u = continuousControlEffort(s, spec, p);
  if (std::abs(u[0]) < forceFloor) {
    std::ostringstream os;
    os << "|F_c| = " << std::abs(u[0]) << " below floor " << forceFloor;
    throw Error(ErrorCode::DegenerateForce, os.str());
  }
  return {u[0], u[1] / u[0]};
}

ControlInput onManifoldControl(double q2, double dq2, const VhcSpec& spec, const StickParams& p) {
  requireNonsingular(spec);
  const double gr = p.gravity / spec.radius;
  const double dq2sq = dq2 * dq2;
  const double bracket = dq2sq - gr * std::sin(q2 - spec.phase);
  const double force = p.mass * spec.radius / std::sin(spec.phase) * bracket;
  const double arm = p.inertia / (p.mass * spec.radius) * (dq2sq * std::cos(spec.phase) - gr * std::sin(q2)) / bracket;
  return {force, arm};
}

FeasibilityReport contactFeasibility(const FullState& sample, const VhcSpec& spec, const StickParams& p) {
  FeasibilityReport rep;
  const double margin = sample.dtheta * sample.dtheta - p.gravity / spec.radius * std::sin(sample.theta - spec.phase);
  rep.forceSignConstant = margin > 0.0;
  const Vec2 u = continuousControlEffort(sample, spec, p);
  rep.rInside = std::abs(u[0]) >= kDegenerateForceFloor && std::abs(u[1] / u[0]) < 0.5 * p.length;
  return rep;
}

void FeasibilityMonitor::observe(double t, const FullState& s, double force, double arm) {
  const FeasibilityReport sample = contactFeasibility(s, spec_, params_);
  const int sign = force > 0.0 ? 1 : (force < 0.0 ? -1 : 0);
  bool ok = sample.forceSignConstant && sample.rInside;
  if (sign == 0 || (forceSign_ != 0 && sign != forceSign_)) {
    appliedSignConstant_ = false;
    ok = false;
  }
  if (forceSign_ == 0) forceSign_ = sign;
  if (!std::isfinite(arm) || std::abs(arm) >= 0.5 * params_.length) ok = false;
  report_.forceSignConstant = report_.forceSignConstant && sample.forceSignConstant;
  report_.rInside = report_.rInside && sample.rInside;
  minForce_ = std::min(minForce_, force);
  maxForce_ = std::max(maxForce_, force);
  if (std::isfinite(arm)) maxAbsArm_ = std::max(maxAbsArm_, std::abs(arm));
  if (!ok) {
    if (violations_ == 0) firstViolation_ = t;
    ++violations_;
  }
}

}  // namespace devilstick

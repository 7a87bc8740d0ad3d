#include "devilstick/dynamics.hpp"

#include <cmath>
#include <sstream>

#include "devilstick/error.hpp"

namespace devilstick {

StickParams StickParams::uniformRod(double mass, double length, double gravity) {
  return {mass, length, mass * length * length / 12.0, gravity};
}

void StickParams::validate() const {
  const auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(mass) || !positive(length) || !positive(inertia) || !positive(gravity)) {
    std::ostringstream os;
    os << "stick parameters must be positive (m=" << mass << ", l=" << length << ", J=" << inertia
       << ", g=" << gravity << ")";
    throw Error(ErrorCode::InvalidArgument, os.str());
  }
}

bool StickParams::inertiaPlausible() const {
  const double rod = mass * length * length / 12.0;
  return std::abs(inertia - rod) <= 0.25 * rod;
}

bool FullState::isFinite() const {
  return std::isfinite(h_x) && std::isfinite(h_y) && std::isfinite(theta) && std::isfinite(dh_x) &&
         std::isfinite(dh_y) && std::isfinite(dtheta);
}

FullState& FullState::operator+=(const FullState& o) {
  h_x += o.h_x;
  h_y += o.h_y;
  theta += o.theta;
  dh_x += o.dh_x;
  dh_y += o.dh_y;
  dtheta += o.dtheta;
  return *this;
}

FullState& FullState::operator*=(double s) {
  h_x *= s;
  h_y *= s;
  theta *= s;
  dh_x *= s;
  dh_y *= s;
  dtheta *= s;
  return *this;
}

FullState operator+(FullState a, const FullState& b) { return a += b; }
FullState operator*(double s, FullState a) { return a *= s; }

bool ControlInput::armOnStick(const StickParams& p) const {
  return std::abs(arm) < 0.5 * p.length;
}

Accelerations accelerations(const FullState& s, const Vec2& u, const StickParams& p) {
  const double force = u[0];
  return {-std::sin(s.theta) / p.mass * force, -p.gravity + std::cos(s.theta) / p.mass * force,
          u[1] / p.inertia};
}

Accelerations accelerations(const FullState& s, const ControlInput& in, const StickParams& p) {
  return accelerations(s, in.generalized(), p);
}

FullState stateDerivative(const FullState& s, const Vec2& u, const StickParams& p) {
  const Accelerations acc = accelerations(s, u, p);
  return {s.dh_x, s.dh_y, s.dtheta, acc.ddh_x, acc.ddh_y, acc.ddtheta};
}

StandardForm standardFormMatrices(double theta, const StickParams& p) {
  StandardForm f;
  f.a = {0.0, -p.gravity};
  f.b = {Vec2{-std::sin(theta) / p.mass, 0.0}, Vec2{std::cos(theta) / p.mass, 0.0}};
  f.c = 0.0;
  f.d = {0.0, 1.0 / p.inertia};
  return f;
}

double mechanicalEnergy(const FullState& s, const StickParams& p) {
  const double kinetic = 0.5 * p.mass * (s.dh_x * s.dh_x + s.dh_y * s.dh_y) + 0.5 * p.inertia * s.dtheta * s.dtheta;
  return kinetic + p.mass * p.gravity * s.h_y;
}

}  // namespace devilstick

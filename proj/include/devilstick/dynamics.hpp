// Planar rigid-body model of a devil-stick pushed by a single normal force F
// applied at signed distance r from the center of mass.
#pragma once

#include <array>

namespace devilstick {

using Vec2 = std::array<double, 2>;
/// Row-major 2x2.
using Mat2 = std::array<Vec2, 2>;

struct StickParams {
  double mass = 0.1;       // kg
  double length = 0.5;     // m
  double inertia = 0.0021; // kg m^2, about the center of mass
  double gravity = 9.81;   // m/s^2

  /// Uniform slender rod, J = m l^2 / 12.
  static StickParams uniformRod(double mass, double length, double gravity = 9.81);

  /// Throws InvalidArgument unless every field is finite and strictly positive.
  void validate() const;
  /// False when J is more than 25% away from the uniform-rod value.
  bool inertiaPlausible() const;
};

/// Generalized coordinates (h_x, h_y, theta) and their rates. theta is kept
/// unwrapped on the real line.
struct FullState {
  double h_x = 0.0;
  double h_y = 0.0;
  double theta = 0.0;
  double dh_x = 0.0;
  double dh_y = 0.0;
  double dtheta = 0.0;

  std::array<double, 6> toArray() const { return {h_x, h_y, theta, dh_x, dh_y, dtheta}; }
  static FullState fromArray(const std::array<double, 6>& a) { return {a[0], a[1], a[2], a[3], a[4], a[5]}; }
  bool isFinite() const;

  FullState& operator+=(const FullState& o);
  FullState& operator*=(double s);
};

FullState operator+(FullState a, const FullState& b);
FullState operator*(double s, FullState a);

/// Normal force and its point of application.
struct ControlInput {
  double force = 0.0; // N
  double arm = 0.0;   // m, signed distance from G along the stick

  /// u = [F, F r]
  Vec2 generalized() const { return {force, force * arm}; }
  bool armOnStick(const StickParams& p) const;
};

struct Accelerations {
  double ddh_x = 0.0;
  double ddh_y = 0.0;
  double ddtheta = 0.0;
};

/// Equations of motion driven by the generalized input u = [F, F r].
Accelerations accelerations(const FullState& s, const Vec2& u, const StickParams& p);
Accelerations accelerations(const FullState& s, const ControlInput& in, const StickParams& p);

/// Time derivative of the full state under input u.
FullState stateDerivative(const FullState& s, const Vec2& u, const StickParams& p);

/// q1'' = a + b u, q2'' = c + d u
struct StandardForm {
  Vec2 a{};
  Mat2 b{};
  double c = 0.0;
  Vec2 d{};
};

StandardForm standardFormMatrices(double theta, const StickParams& p);

/// Kinetic plus gravitational potential energy.
double mechanicalEnergy(const FullState& s, const StickParams& p);

}  // namespace devilstick

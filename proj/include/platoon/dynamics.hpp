#pragma once

#include <array>

namespace platoon {

struct VehicleState {
  double x = 0.0;    // longitudinal position (m)
  double y = 0.0;    // lateral position (m)
  double phi = 0.0;  // heading (rad), wrapped to (-pi, pi]
  double v = 0.0;    // speed (m/s)

  bool operator==(const VehicleState&) const = default;
};

struct ControlInput {
  double a = 0.0;      // acceleration (m/s^2)
  double delta = 0.0;  // steering angle (rad)

  bool operator==(const ControlInput&) const = default;
};

/// Box limits on state and control, and per-step bounds on control change.
/// The rate bounds are expressed per integration step, not per second.
struct DynamicsLimits {
  std::array<double, 4> z_min{-1.0e4, -50.0, -3.141592653589793, 0.0};
  std::array<double, 4> z_max{1.0e4, 50.0, 3.141592653589793, 30.0};
  std::array<double, 2> u_min{-4.0, -0.3};
  std::array<double, 2> u_max{4.0, 0.3};
  std::array<double, 2> du_min{-1.0, -0.01};
  std::array<double, 2> du_max{1.0, 0.01};
  double dt = 0.05;

  /// Limits for a given step: accel change 1 m/s^2 per step, steering rate
  /// 0.2 rad/s converted to a per-step bound.
  static DynamicsLimits standard(double dt);

  void validate() const;
};

struct VehicleGeometry {
  double length = 4.5;
  double width = 1.8;
  double lf = 2.25;
  double lr = 2.25;
  double lane_width = 3.7;

  void validate() const;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double angle);

/// Kinematic-bicycle side slip: atan(lr / (lf + lr) * tan(delta)).
double side_slip(double delta, const VehicleGeometry& geom);

/// One explicit-Euler step of the kinematic bicycle model followed by state
/// clamping and heading wrap. Expects `control` already clamped.
VehicleState step_kinematics(const VehicleState& state, const ControlInput& control,
                             const VehicleGeometry& geom, const DynamicsLimits& limits);

/// Magnitude bounds first, then rate bounds relative to `prev`.
ControlInput clamp_control(const ControlInput& raw, const ControlInput& prev,
                           const DynamicsLimits& limits);

}  // namespace platoon

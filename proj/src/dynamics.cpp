#include "platoon/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "platoon/errors.hpp"

namespace platoon {

DynamicsLimits DynamicsLimits::standard(double dt) {
  DynamicsLimits limits;
  limits.dt = dt;
  limits.du_min = {-1.0, -0.2 * dt};
  limits.du_max = {1.0, 0.2 * dt};
  return limits;
}

void DynamicsLimits::validate() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (!(z_min[i] <= z_max[i])) {
      throw InvalidArgument("state bound " + std::to_string(i) + " has min > max");
    }
  }
  for (std::size_t i = 0; i < 2; ++i) {
    if (!(u_min[i] <= u_max[i])) {
      throw InvalidArgument("control bound " + std::to_string(i) + " has min > max");
    }
    if (!(du_min[i] <= 0.0 && 0.0 <= du_max[i])) {
      throw InvalidArgument("control-rate bound " + std::to_string(i) +
                            " must bracket zero");
    }
  }
  if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
}

void VehicleGeometry::validate() const {
  if (!(length > 0.0 && width > 0.0 && lf > 0.0 && lr > 0.0 && lane_width > 0.0)) {
    throw InvalidArgument("vehicle geometry fields must be positive");
  }
  if (std::abs(length - (lf + lr)) > 1e-9 * length) {
    throw InvalidArgument("vehicle length must equal lf + lr");
  }
}

double wrap_angle(double angle) {
  constexpr double pi = std::numbers::pi;
  if (angle > -pi && angle <= pi) return angle;
  double wrapped = std::remainder(angle, 2.0 * pi);  // in [-pi, pi]
  if (wrapped <= -pi) wrapped += 2.0 * pi;
  return wrapped;
}

double side_slip(double delta, const VehicleGeometry& geom) {
  if (!(std::abs(delta) < std::numbers::pi / 2.0)) {
    throw InvalidArgument("invalid steering angle: |delta| must be below pi/2");
  }
  return std::atan(geom.lr / (geom.lf + geom.lr) * std::tan(delta));
}

VehicleState step_kinematics(const VehicleState& state, const ControlInput& control,
                             const VehicleGeometry& geom, const DynamicsLimits& limits) {
  const bool finite = std::isfinite(state.x) && std::isfinite(state.y) &&
                      std::isfinite(state.phi) && std::isfinite(state.v) &&
                      std::isfinite(control.a) && std::isfinite(control.delta);
  if (!finite) throw NumericError("step_kinematics: non-finite input");

  const double beta = side_slip(control.delta, geom);
  const double dt = limits.dt;
  VehicleState next;
  next.x = state.x + state.v * std::cos(state.phi + beta) * dt;
  next.y = state.y + state.v * std::sin(state.phi + beta) * dt;
  next.phi = state.phi + state.v / geom.lr * std::sin(beta) * dt;
  next.v = state.v + control.a * dt;

  next.x = std::clamp(next.x, limits.z_min[0], limits.z_max[0]);
  next.y = std::clamp(next.y, limits.z_min[1], limits.z_max[1]);
  next.phi = wrap_angle(next.phi);
  next.phi = std::clamp(next.phi, limits.z_min[2], limits.z_max[2]);
  next.v = std::clamp(next.v, limits.z_min[3], limits.z_max[3]);
  return next;
}

ControlInput clamp_control(const ControlInput& raw, const ControlInput& prev,
                           const DynamicsLimits& limits) {
  auto bound = [&](double value, double previous, std::size_t i) {
    value = std::clamp(value, limits.u_min[i], limits.u_max[i]);
    return std::clamp(value, previous + limits.du_min[i], previous + limits.du_max[i]);
  };
  return {bound(raw.a, prev.a, 0), bound(raw.delta, prev.delta, 1)};
}

}  // namespace platoon

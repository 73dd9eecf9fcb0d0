#include "platoon/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "platoon/errors.hpp"

namespace platoon {

namespace {

Vec2 axis_of(double heading) { return {std::cos(heading), std::sin(heading)}; }

double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }

// Half-length of the box's projection onto a unit axis.
double projected_radius(const OrientedBox& box, const Vec2& axis) {
  const Vec2 u = axis_of(box.heading);
  const Vec2 w{-u.y, u.x};
  return box.half_extents.x * std::abs(dot(u, axis)) +
         box.half_extents.y * std::abs(dot(w, axis));
}

}  // namespace

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 u = axis_of(heading);
  const Vec2 w{-u.y, u.x};
  std::array<Vec2, 4> out;
  const double sl[4] = {1, 1, -1, -1};
  const double sw[4] = {1, -1, -1, 1};
  for (int i = 0; i < 4; ++i) {
    out[i] = {center.x + sl[i] * half_extents.x * u.x + sw[i] * half_extents.y * w.x,
              center.y + sl[i] * half_extents.x * u.y + sw[i] * half_extents.y * w.y};
  }
  return out;
}

bool OrientedBox::contains(const Vec2& p) const {
  const Vec2 u = axis_of(heading);
  const Vec2 w{-u.y, u.x};
  const Vec2 d{p.x - center.x, p.y - center.y};
  return std::abs(dot(d, u)) <= half_extents.x && std::abs(dot(d, w)) <= half_extents.y;
}

OrientedBox vehicle_polytope(const VehicleState& state, const VehicleGeometry& geom) {
  if (!(geom.length > 0.0 && geom.width > 0.0)) {
    throw InvalidArgument("vehicle_polytope: degenerate vehicle extents");
  }
  return {{state.x, state.y}, state.phi, {geom.length / 2.0, geom.width / 2.0}};
}

bool boxes_intersect(const OrientedBox& a, const OrientedBox& b) {
  const Vec2 d{b.center.x - a.center.x, b.center.y - a.center.y};
  for (const OrientedBox* box : {&a, &b}) {
    const Vec2 u = axis_of(box->heading);
    for (const Vec2& axis : {u, Vec2{-u.y, u.x}}) {
      const double gap = std::abs(dot(d, axis));
      if (gap > projected_radius(a, axis) + projected_radius(b, axis)) return false;
    }
  }
  return true;
}

LaneSide lane_side_of(double dy) { return dy >= 0.0 ? LaneSide::kLeft : LaneSide::kRight; }

double avoidance_margin(double dx, double dy, double d_safe, const VehicleGeometry& geom,
                        Constraint constraint, LaneSide lane_side,
                        const MarginOptions& options) {
  if (!(d_safe > 0.0)) throw InvalidArgument("avoidance_margin: d_safe must be positive");
  const double lateral_scale = 0.5 * geom.lane_width + geom.width;
  if (constraint == Constraint::kForward) {
    const double sign = lane_side == LaneSide::kLeft ? 1.0 : -1.0;
    const double lhs = dx / (d_safe + geom.length) + sign * dy / lateral_scale;
    return lhs - 1.0;
  }
  const double longitudinal = options.rcac_width_scaled ? geom.width : geom.length;
  const double sign = lane_side == LaneSide::kRight ? 1.0 : -1.0;
  const double lhs = dx / (d_safe + longitudinal) + sign * dy / lateral_scale;
  return -1.0 - lhs;
}

}  // namespace platoon

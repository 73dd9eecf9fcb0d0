#pragma once

#include <array>

#include "platoon/dynamics.hpp"

namespace platoon {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Closed oriented rectangle: the footprint a vehicle occupies.
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  Vec2 half_extents;  // (half length, half width), strictly positive

  std::array<Vec2, 4> corners() const;
  bool contains(const Vec2& p) const;
};

OrientedBox vehicle_polytope(const VehicleState& state, const VehicleGeometry& geom);

/// Separating-axis test over the four edge normals. Touching boxes intersect.
bool boxes_intersect(const OrientedBox& a, const OrientedBox& b);

enum class Constraint { kForward, kRear };
enum class LaneSide { kLeft, kRight };

/// Side of the reference vehicle relative to the ego; dy == 0 counts as left.
LaneSide lane_side_of(double dy);

struct MarginOptions {
  // Scale the rear constraint's longitudinal term by the vehicle width
  // instead of its length.
  bool rcac_width_scaled = false;
};

/// Signed slack of the forward or rear affine collision-avoidance constraint
/// for relative offset (dx, dy) = reference vehicle minus ego. Non-negative
/// iff the constraint holds.
double avoidance_margin(double dx, double dy, double d_safe, const VehicleGeometry& geom,
                        Constraint constraint, LaneSide lane_side,
                        const MarginOptions& options = {});

}  // namespace platoon

#pragma once

#include "hamsafe/certify.hpp"
#include "hamsafe/controller.hpp"
#include "hamsafe/world.hpp"

namespace hamsafe {

struct GovernorState {
  double sigma = 0.0;
  Vec3 g = Vec3::Zero();  // r(sigma), kept on the path
  double kg = 0.5;        // 1/s
};

/// Reference state from a governor position: p* = g, R* = I, zero momentum.
Target lift(const Vec3& g);

/// Radius of the local safe zone: ||q - g||^2 <= dE, degenerate at dE <= 0.
double safe_zone_radius(double dE);

/// Convenience over the exact distance oracle.
double safe_zone_radius(const State& x, const Vec3& g, const RobustnessConstants& consts,
                        const World& world);

/// Largest sigma in [0,1] with ||r(sigma) - center|| <= radius, scanned by
/// exact sphere-segment intersection from the path end backwards. Never less
/// than sigma_now.
double local_projected_goal(const ReferencePath& path, double sigma_now, const Vec3& center,
                            double radius);

/// Forward-Euler sigma += dt kg (sigma* - sigma), clamped to [sigma, sigma*];
/// g follows r(sigma).
GovernorState governor_step(const GovernorState& gov, double sigma_star, double dt,
                            const ReferencePath& path);

}  // namespace hamsafe

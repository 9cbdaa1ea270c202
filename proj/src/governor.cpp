#include "hamsafe/governor.hpp"

#include <algorithm>
#include <cmath>

namespace hamsafe {

Target lift(const Vec3& g) {
  Target t;
  t.p = g;
  return t;
}

double safe_zone_radius(double dE) { return std::sqrt(std::max(dE, 0.0)); }

double safe_zone_radius(const State& x, const Vec3& g, const RobustnessConstants& consts,
                        const World& world) {
  const double dbar = sensed_distance(g, world.obstacles, world.d_max);
  return safe_zone_radius(safety_margin(x, lift(g), consts, dbar));
}

double local_projected_goal(const ReferencePath& path, double sigma_now, const Vec3& center,
                            double radius) {
  sigma_now = std::clamp(sigma_now, 0.0, 1.0);
  if (radius <= 0.0) return sigma_now;
  const auto& wp = path.waypoints();
  const auto& cum = path.cumulative();
  const double L = path.length();
  if (wp.size() == 1 || L <= 0.0) return 1.0;
  if ((wp.back() - center).norm() <= radius) return 1.0;

  const double r2 = radius * radius;
  for (size_t i = wp.size() - 1; i-- > 0;) {
    // Segment wp[i] -> wp[i+1]; largest s in [0,1] with |a + s d - c| <= r.
    const Vec3 a = wp[i] - center;
    const Vec3 d = wp[i + 1] - wp[i];
    const double dd = d.squaredNorm();
    if (dd <= 0.0) {
      if (a.squaredNorm() <= r2) {
        const double sigma = cum[i] / L;
        if (sigma >= sigma_now) return std::max(sigma, sigma_now);
      }
      continue;
    }
    const double b = a.dot(d);
    const double c = a.squaredNorm() - r2;
    const double disc = b * b - dd * c;
    if (disc < 0.0) continue;
    const double s_hi = std::clamp((-b + std::sqrt(disc)) / dd, 0.0, 1.0);
    // Valid only when the point actually lies inside the ball (it may not
    // when the whole intersection lies outside [0,1]).
    if ((a + s_hi * d).squaredNorm() <= r2 + 1e-12) {
      const double sigma = (cum[i] + s_hi * std::sqrt(dd)) / L;
      return std::max(sigma, sigma_now);
    }
  }
  return sigma_now;
}

GovernorState governor_step(const GovernorState& gov, double sigma_star, double dt,
                            const ReferencePath& path) {
  GovernorState out = gov;
  sigma_star = std::clamp(sigma_star, gov.sigma, 1.0);
  double s = gov.sigma + dt * gov.kg * (sigma_star - gov.sigma);
  out.sigma = std::clamp(s, gov.sigma, sigma_star);
  out.g = path.eval(out.sigma);
  return out;
}

}  // namespace hamsafe

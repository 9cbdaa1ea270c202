#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "hamsafe/se3.hpp"

namespace hamsafe {

struct Box {
  Vec3 lo;
  Vec3 hi;
};

struct Sphere {
  Vec3 center;
  double radius = 0.0;
};

// Wall with unit normal n and offset b; n.p < b is the safe side.
struct Halfspace {
  Vec3 normal;
  double offset = 0.0;
};

struct ObstacleSet {
  std::vector<Box> boxes;
  std::vector<Sphere> spheres;
  std::vector<Halfspace> halfspaces;

  bool empty() const { return boxes.empty() && spheres.empty() && halfspaces.empty(); }
};

struct World {
  ObstacleSet obstacles;
  double d_max = 30.0;
  Vec3 bounds_lo = Vec3(-10, -10, -10);
  Vec3 bounds_hi = Vec3(10, 10, 10);
};

/// min{ d(p, O), d_max }: exact Euclidean distance to the primitive union,
/// capped at the sensing range. Empty set senses d_max.
double sensed_distance(const Vec3& p, const ObstacleSet& obs, double d_max);

/// Simulated lidar: ray casts n_rays directions (Fibonacci sphere rotated by
/// the sensor attitude) and returns surface hit points within d_max.
std::vector<Vec3> lidar_scan(const Vec3& p, const Mat3& R, const ObstacleSet& obs,
                             double d_max, int n_rays);

/// min over scan of ||q - y||, capped at d_max; d_max when the scan is empty.
double scan_distance(const Vec3& q, const std::vector<Vec3>& scan, double d_max);

/// Polyline path parameterized by arc length: sigma in [0,1] maps affinely in
/// arc length to a point.
class ReferencePath {
 public:
  ReferencePath() = default;
  explicit ReferencePath(std::vector<Vec3> waypoints);

  Vec3 eval(double sigma) const;  // sigma clamped to [0,1]
  double length() const { return total_length_; }
  const std::vector<Vec3>& waypoints() const { return waypoints_; }
  const std::vector<double>& cumulative() const { return cumlen_; }

 private:
  std::vector<Vec3> waypoints_;
  std::vector<double> cumlen_;
  double total_length_ = 0.0;
};

struct NoPathError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Grid A* (26-connected) with clearance inflation, followed by greedy
/// line-of-sight shortcutting. Every output vertex keeps
/// sensed_distance >= clearance.
ReferencePath grid_astar(const Vec3& start, const Vec3& goal, const ObstacleSet& obs,
                         double cell, double clearance, const Vec3& bounds_lo,
                         const Vec3& bounds_hi, double d_max = 1e9);

World load_world(const std::string& path);
void save_world(const World& w, const std::string& path);
ReferencePath load_path(const std::string& path);
void save_path(const ReferencePath& p, const std::string& path);

}  // namespace hamsafe

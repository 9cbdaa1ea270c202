#include "hamsafe/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <unordered_map>

#include <json.hpp>

namespace hamsafe {

namespace {

double box_distance(const Vec3& p, const Box& b) {
  Vec3 d = Vec3::Zero();
  for (int i = 0; i < 3; ++i) {
    d(i) = std::max({b.lo(i) - p(i), 0.0, p(i) - b.hi(i)});
  }
  return d.norm();
}

double sphere_distance(const Vec3& p, const Sphere& s) {
  return std::max((p - s.center).norm() - s.radius, 0.0);
}

double halfspace_distance(const Vec3& p, const Halfspace& h) {
  // Obstacle region is {x : n.x >= b} with unit n.
  return std::max(h.offset - h.normal.dot(p), 0.0);
}

// Smallest positive t with p + t*dir on the primitive surface, or +inf.
double ray_box(const Vec3& p, const Vec3& dir, const Box& b) {
  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dir(i)) < 1e-12) {
      if (p(i) < b.lo(i) || p(i) > b.hi(i)) return std::numeric_limits<double>::infinity();
      continue;
    }
    double t1 = (b.lo(i) - p(i)) / dir(i);
    double t2 = (b.hi(i) - p(i)) / dir(i);
    if (t1 > t2) std::swap(t1, t2);
    tmin = std::max(tmin, t1);
    tmax = std::min(tmax, t2);
    if (tmin > tmax) return std::numeric_limits<double>::infinity();
  }
  return tmin > 0.0 ? tmin : std::numeric_limits<double>::infinity();
}

double ray_sphere(const Vec3& p, const Vec3& dir, const Sphere& s) {
  const Vec3 oc = p - s.center;
  const double b = oc.dot(dir);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::numeric_limits<double>::infinity();
  const double sq = std::sqrt(disc);
  const double t1 = -b - sq;
  if (t1 > 1e-9) return t1;
  const double t2 = -b + sq;
  if (t2 > 1e-9) return t2;
  return std::numeric_limits<double>::infinity();
}

double ray_halfspace(const Vec3& p, const Vec3& dir, const Halfspace& h) {
  const double denom = h.normal.dot(dir);
  const double gap = h.offset - h.normal.dot(p);
  if (std::abs(denom) < 1e-12) return std::numeric_limits<double>::infinity();
  const double t = gap / denom;
  return t > 1e-9 ? t : std::numeric_limits<double>::infinity();
}

}  // namespace

double sensed_distance(const Vec3& p, const ObstacleSet& obs, double d_max) {
  double d = d_max;
  for (const auto& b : obs.boxes) d = std::min(d, box_distance(p, b));
  for (const auto& s : obs.spheres) d = std::min(d, sphere_distance(p, s));
  for (const auto& h : obs.halfspaces) d = std::min(d, halfspace_distance(p, h));
  return d;
}

std::vector<Vec3> lidar_scan(const Vec3& p, const Mat3& R, const ObstacleSet& obs,
                             double d_max, int n_rays) {
  std::vector<Vec3> scan;
  if (obs.empty() || n_rays < 1) return scan;
  scan.reserve(static_cast<size_t>(n_rays));
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n_rays; ++i) {
    // Fibonacci sphere directions in the sensor frame.
    const double z = 1.0 - 2.0 * (i + 0.5) / n_rays;
    const double r = std::sqrt(std::max(1.0 - z * z, 0.0));
    const double phi = golden * i;
    const Vec3 dir = R * Vec3(r * std::cos(phi), r * std::sin(phi), z);
    double t = std::numeric_limits<double>::infinity();
    for (const auto& b : obs.boxes) t = std::min(t, ray_box(p, dir, b));
    for (const auto& s : obs.spheres) t = std::min(t, ray_sphere(p, dir, s));
    for (const auto& h : obs.halfspaces) t = std::min(t, ray_halfspace(p, dir, h));
    if (t <= d_max) scan.push_back(p + t * dir);
  }
  return scan;
}

double scan_distance(const Vec3& q, const std::vector<Vec3>& scan, double d_max) {
  double d = d_max;
  for (const auto& y : scan) d = std::min(d, (q - y).norm());
  return d;
}

ReferencePath::ReferencePath(std::vector<Vec3> waypoints) : waypoints_(std::move(waypoints)) {
  if (waypoints_.empty()) throw std::invalid_argument("ReferencePath: needs at least one waypoint");
  cumlen_.resize(waypoints_.size(), 0.0);
  for (size_t i = 1; i < waypoints_.size(); ++i) {
    cumlen_[i] = cumlen_[i - 1] + (waypoints_[i] - waypoints_[i - 1]).norm();
  }
  total_length_ = cumlen_.back();
}

Vec3 ReferencePath::eval(double sigma) const {
  sigma = std::clamp(sigma, 0.0, 1.0);
  if (waypoints_.size() == 1 || total_length_ <= 0.0) return waypoints_.front();
  const double s = sigma * total_length_;
  auto it = std::upper_bound(cumlen_.begin(), cumlen_.end(), s);
  size_t i = std::min(static_cast<size_t>(it - cumlen_.begin()), waypoints_.size() - 1);
  if (i == 0) return waypoints_.front();
  const double seg = cumlen_[i] - cumlen_[i - 1];
  if (seg <= 0.0) return waypoints_[i];
  const double a = (s - cumlen_[i - 1]) / seg;
  return waypoints_[i - 1] + a * (waypoints_[i] - waypoints_[i - 1]);
}

namespace {

struct GridIndex {
  int x, y, z;
  bool operator==(const GridIndex& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct GridIndexHash {
  size_t operator()(const GridIndex& g) const {
    return std::hash<long long>()((static_cast<long long>(g.x) * 73856093) ^
                                  (static_cast<long long>(g.y) * 19349663) ^
                                  (static_cast<long long>(g.z) * 83492791));
  }
};

bool segment_clear(const Vec3& a, const Vec3& b, const ObstacleSet& obs, double clearance,
                   double step) {
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
  for (int i = 0; i <= n; ++i) {
    const Vec3 q = a + (static_cast<double>(i) / n) * (b - a);
    if (sensed_distance(q, obs, 1e9) < clearance) return false;
  }
  return true;
}

}  // namespace

ReferencePath grid_astar(const Vec3& start, const Vec3& goal, const ObstacleSet& obs,
                         double cell, double clearance, const Vec3& bounds_lo,
                         const Vec3& bounds_hi, double d_max) {
  if (sensed_distance(start, obs, d_max) < clearance ||
      sensed_distance(goal, obs, d_max) < clearance) {
    throw NoPathError("grid_astar: start or goal violates the clearance inflation");
  }
  if ((goal - start).norm() < 1e-12) {
    return ReferencePath({start});
  }
  if (obs.empty() || segment_clear(start, goal, obs, clearance, 0.5 * cell)) {
    return ReferencePath({start, goal});
  }

  const auto to_index = [&](const Vec3& p) {
    return GridIndex{static_cast<int>(std::floor((p(0) - bounds_lo(0)) / cell)),
                     static_cast<int>(std::floor((p(1) - bounds_lo(1)) / cell)),
                     static_cast<int>(std::floor((p(2) - bounds_lo(2)) / cell))};
  };
  const auto to_point = [&](const GridIndex& g) {
    return Vec3(bounds_lo(0) + (g.x + 0.5) * cell, bounds_lo(1) + (g.y + 0.5) * cell,
                bounds_lo(2) + (g.z + 0.5) * cell);
  };
  const GridIndex gmax = to_index(bounds_hi);
  const auto in_bounds = [&](const GridIndex& g) {
    return g.x >= 0 && g.y >= 0 && g.z >= 0 && g.x <= gmax.x && g.y <= gmax.y && g.z <= gmax.z;
  };
  const auto free_cell = [&](const GridIndex& g) {
    return in_bounds(g) && sensed_distance(to_point(g), obs, d_max) >= clearance;
  };

  GridIndex s = to_index(start), t = to_index(goal);
  if (!free_cell(s) || !free_cell(t)) {
    // Snap to the nearest free neighbor cell.
    const auto snap = [&](GridIndex g) {
      if (free_cell(g)) return g;
      for (int r = 1; r <= 3; ++r) {
        for (int dx = -r; dx <= r; ++dx)
          for (int dy = -r; dy <= r; ++dy)
            for (int dz = -r; dz <= r; ++dz) {
              GridIndex c{g.x + dx, g.y + dy, g.z + dz};
              if (free_cell(c)) return c;
            }
      }
      throw NoPathError("grid_astar: endpoint cell blocked after inflation");
    };
    s = snap(s);
    t = snap(t);
  }

  struct NodeRec {
    double g = std::numeric_limits<double>::infinity();
    GridIndex parent{0, 0, 0};
    bool has_parent = false;
    bool closed = false;
  };
  std::unordered_map<GridIndex, NodeRec, GridIndexHash> nodes;
  const Vec3 goal_pt = to_point(t);
  const auto heuristic = [&](const GridIndex& g) { return (to_point(g) - goal_pt).norm(); };

  using QueueEntry = std::pair<double, GridIndex>;
  const auto cmp = [](const QueueEntry& a, const QueueEntry& b) { return a.first > b.first; };
  std::priority_queue<QueueEntry, std::vector<QueueEntry>, decltype(cmp)> open(cmp);

  nodes[s].g = 0.0;
  open.push({heuristic(s), s});
  bool found = false;
  size_t expanded = 0;
  const size_t max_expansions = 4000000;

  while (!open.empty()) {
    const auto [f, cur] = open.top();
    open.pop();
    auto& rec = nodes[cur];
    if (rec.closed) continue;
    rec.closed = true;
    if (cur == t) {
      found = true;
      break;
    }
    if (++expanded > max_expansions) break;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          GridIndex nb{cur.x + dx, cur.y + dy, cur.z + dz};
          if (!free_cell(nb)) continue;
          const double step = cell * std::sqrt(static_cast<double>(dx * dx + dy * dy + dz * dz));
          auto& nrec = nodes[nb];
          if (nrec.closed) continue;
          const double cand = rec.g + step;
          if (cand < nrec.g) {
            nrec.g = cand;
            nrec.parent = cur;
            nrec.has_parent = true;
            open.push({cand + heuristic(nb), nb});
          }
        }
  }
  if (!found) throw NoPathError("grid_astar: no path between start and goal");

  std::vector<Vec3> pts;
  for (GridIndex cur = t;;) {
    pts.push_back(to_point(cur));
    const auto& rec = nodes[cur];
    if (!rec.has_parent) break;
    cur = rec.parent;
  }
  std::reverse(pts.begin(), pts.end());
  pts.front() = start;
  pts.back() = goal;

  // Greedy shortcutting; kept vertices are a subset, so clearance still holds.
  std::vector<Vec3> out;
  out.push_back(pts.front());
  size_t i = 0;
  while (i + 1 < pts.size()) {
    size_t j = pts.size() - 1;
    for (; j > i + 1; --j) {
      if (segment_clear(pts[i], pts[j], obs, clearance, 0.5 * cell)) break;
    }
    out.push_back(pts[j]);
    i = j;
  }
  return ReferencePath(out);
}

using nlohmann::json;

namespace {
Vec3 vec3_from_json(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }
json vec3_to_json(const Vec3& v) { return json::array({v(0), v(1), v(2)}); }
}  // namespace

World load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_world: cannot open " + path);
  json j;
  in >> j;
  World w;
  w.d_max = j.value("d_max", 30.0);
  if (j.contains("bounds")) {
    w.bounds_lo = vec3_from_json(j["bounds"]["lo"]);
    w.bounds_hi = vec3_from_json(j["bounds"]["hi"]);
  }
  for (const auto& o : j.value("obstacles", json::array())) {
    const std::string type = o.at("type");
    if (type == "box") {
      w.obstacles.boxes.push_back({vec3_from_json(o.at("lo")), vec3_from_json(o.at("hi"))});
    } else if (type == "sphere") {
      w.obstacles.spheres.push_back({vec3_from_json(o.at("center")), o.at("radius")});
    } else if (type == "halfspace") {
      Halfspace h{vec3_from_json(o.at("normal")), o.at("offset")};
      const double n = h.normal.norm();
      if (n < 1e-12) throw std::runtime_error("load_world: degenerate halfspace normal");
      h.normal /= n;
      h.offset /= n;
      w.obstacles.halfspaces.push_back(h);
    } else {
      throw std::runtime_error("load_world: unknown obstacle type " + type);
    }
  }
  return w;
}

void save_world(const World& w, const std::string& path) {
  json obstacles = json::array();
  for (const auto& b : w.obstacles.boxes)
    obstacles.push_back({{"type", "box"}, {"lo", vec3_to_json(b.lo)}, {"hi", vec3_to_json(b.hi)}});
  for (const auto& s : w.obstacles.spheres)
    obstacles.push_back({{"type", "sphere"}, {"center", vec3_to_json(s.center)}, {"radius", s.radius}});
  for (const auto& h : w.obstacles.halfspaces)
    obstacles.push_back({{"type", "halfspace"}, {"normal", vec3_to_json(h.normal)}, {"offset", h.offset}});
  json j{{"d_max", w.d_max},
         {"bounds", {{"lo", vec3_to_json(w.bounds_lo)}, {"hi", vec3_to_json(w.bounds_hi)}}},
         {"obstacles", obstacles}};
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

ReferencePath load_path(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_path: cannot open " + path);
  json j;
  in >> j;
  std::vector<Vec3> wps;
  for (const auto& p : j) wps.push_back(vec3_from_json(p));
  return ReferencePath(wps);
}

void save_path(const ReferencePath& p, const std::string& path) {
  json j = json::array();
  for (const auto& w : p.waypoints()) j.push_back(vec3_to_json(w));
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

}  // namespace hamsafe

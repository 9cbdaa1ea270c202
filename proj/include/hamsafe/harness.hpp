#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hamsafe/certify.hpp"
#include "hamsafe/controller.hpp"
#include "hamsafe/governor.hpp"
#include "hamsafe/learner.hpp"
#include "hamsafe/plant.hpp"
#include "hamsafe/world.hpp"

namespace hamsafe {

enum class Sensing { Exact, Lidar };

struct Scenario {
  std::string name = "scenario";
  World world;
  PlantParams plant;
  std::string model_checkpoint;  // empty = ground truth
  ControllerGains gains;
  double alpha = 2.0;
  double beta = 20.0;
  double delta_d = 0.0;        // injected disturbance magnitude
  double delta_d_bound = 0.0;  // bound used by the certificate machinery
  std::optional<std::pair<double, double>> pinned_c;  // override (c1, c2)
  NoiseSpec noise;
  ReferencePath path;
  double duration = 60.0;
  double dt = 1.0 / 120.0;
  int plant_substeps = 10;
  uint64_t seed = 0;
  double kg = 0.5;
  Sensing sensing = Sensing::Exact;
  int n_rays = 600;
  bool quadrotor_rotation = false;  // desired-rotation construction + 4D actuation
  bool static_governor = false;
  bool planar = false;  // confine injected disturbances to the xz plane
  bool force = false;   // accept delta_d beyond the admissible cap
};

struct TelemetryRow {
  double t = 0.0;
  Vec3 p;
  Eigen::Vector4d quat;  // (w, x, y, z)
  Vec6 zeta;
  Eigen::VectorXd u;
  double sigma = 0.0;
  double V = 0.0;
  double dE = 0.0;
  double dist_p = 0.0;  // sensed distance at the robot
  double dist_g = 0.0;  // sensed distance at the governor
};

struct RunSummary {
  double mean_pos_err = 0.0;
  double max_pos_err = 0.0;
  double min_obstacle_dist = 0.0;
  double min_dE = 0.0;
  double completion_time = -1.0;  // first t with sigma >= 0.999
  double final_goal_dist = 0.0;
  bool safety_violated = false;
  bool aborted = false;
  bool rejected = false;
};

struct RunRecord {
  std::vector<TelemetryRow> rows;
  RunSummary summary;
  ReferencePath path;
  double dt = 1.0 / 120.0;
  // Diagnostics beyond the serialized columns.
  std::vector<double> rot_err;  // angle between R and the step's target R*
  std::vector<double> d2_xy;    // matching residual under the nominal quad gain
};

/// Drives the plant to random pose targets with the ground-truth regulator at
/// the dataset rate (zero-order-hold inputs), records, shifts to the origin.
Dataset gen_data(const PlantParams& plant, int n_traj, double horizon_s, int rate_hz,
                 uint64_t seed);

/// Planar study data: one-interval samples from a fixed start pose under
/// random in-plane wrenches.
Dataset gen_data_planar(const PlantParams& plant, int n_samples, double interval_s,
                        uint64_t seed);

RunRecord run_scenario(const Scenario& s);

/// Recomputes the summary from the telemetry rows; idempotent.
RunSummary metrics(const RunRecord& rec);

void write_telemetry_csv(const RunRecord& rec, const std::string& path);
nlohmann::json summary_to_json(const RunSummary& s);

/// Certificate for a gain/mass configuration: Q eigenvalues, derived
/// constants, the admissible disturbance cap, the auto-selected cross-term
/// weight, and the shipped reference defaults logged side by side.
nlohmann::json make_certificate(const ControllerGains& gains, const Mat6& M, double alpha,
                                double beta, double delta_d);

Scenario scenario_from_json(const nlohmann::json& j, const std::string& base_dir);
Scenario load_scenario(const std::string& path);

/// Fixed parametric warehouse: a shelf hall with staggered gaps.
World make_warehouse_world();

/// The two-wall planar world of the tracking study.
World make_walls2d_world();

Eigen::Vector4d rotation_to_quaternion(const Mat3& R);

}  // namespace hamsafe

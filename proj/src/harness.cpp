#include "hamsafe/harness.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace hamsafe {

using nlohmann::json;

// Shipped default governor constants; the certificate logs the derived values
// beside these rather than forcing agreement.
constexpr double kReferenceC1 = 2.2050;
constexpr double kReferenceC2 = 8.8200;
constexpr double kReferenceRho = 3.5822e-5;

Eigen::Vector4d rotation_to_quaternion(const Mat3& R) {
  Eigen::Vector4d q;  // (w, x, y, z)
  const double tr = R.trace();
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q << 0.25 * s, (R(2, 1) - R(1, 2)) / s, (R(0, 2) - R(2, 0)) / s, (R(1, 0) - R(0, 1)) / s;
  } else if (R(0, 0) > R(1, 1) && R(0, 0) > R(2, 2)) {
    double s = std::sqrt(1.0 + R(0, 0) - R(1, 1) - R(2, 2)) * 2.0;
    q << (R(2, 1) - R(1, 2)) / s, 0.25 * s, (R(0, 1) + R(1, 0)) / s, (R(0, 2) + R(2, 0)) / s;
  } else if (R(1, 1) > R(2, 2)) {
    double s = std::sqrt(1.0 + R(1, 1) - R(0, 0) - R(2, 2)) * 2.0;
    q << (R(0, 2) - R(2, 0)) / s, (R(0, 1) + R(1, 0)) / s, 0.25 * s, (R(1, 2) + R(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + R(2, 2) - R(0, 0) - R(1, 1)) * 2.0;
    q << (R(1, 0) - R(0, 1)) / s, (R(0, 2) + R(2, 0)) / s, (R(1, 2) + R(2, 1)) / s, 0.25 * s;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Data generation

namespace {

Mat3 random_rotation(std::mt19937_64& rng, double max_tilt, bool full_yaw) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Vec3 axis(uni(rng), uni(rng), 0.0);
  if (axis.norm() < 1e-9) axis = Vec3(1, 0, 0);
  axis.normalize();
  std::uniform_real_distribution<double> tilt(0.0, max_tilt);
  std::uniform_real_distribution<double> yaw(-M_PI, M_PI);
  const double psi = full_yaw ? yaw(rng) : 0.0;
  return exp_so3(Vec3(0, 0, psi)) * exp_so3(tilt(rng) * axis);
}

}  // namespace

Dataset gen_data(const PlantParams& plant, int n_traj, double horizon_s, int rate_hz,
                 uint64_t seed) {
  const AnalyticModel model(plant);
  const ControllerGains gains;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-1.5, 1.5);
  std::uniform_real_distribution<double> expl(-0.5, 0.5);

  const int N = static_cast<int>(std::lround(horizon_s * rate_hz));
  const double dt = 1.0 / rate_hz;
  const bool quad = plant.actuation == Actuation::Quadrotor;

  Dataset ds;
  ds.input_dim = model.input_dim();

  State x;
  for (int i = 0; i < n_traj; ++i) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 8) throw std::runtime_error("gen_data: repeated divergence");
      if (x.p.norm() > 30.0 || x.pm.norm() > 200.0) x = State{};

      const Vec3 p_star(pos(rng), pos(rng), pos(rng));
      const Mat3 R_star = random_rotation(rng, 0.5, true);
      const double psi_star = std::atan2(R_star(1, 0), R_star(0, 0));

      Trajectory tr;
      State xi = x;
      QuadAttitudeState att;
      bool diverged = false;
      try {
        for (int n = 0; n <= N; ++n) {
          tr.t.push_back(n * dt);
          tr.p.push_back(xi.p);
          tr.R.push_back(xi.R);
          tr.zeta.push_back(xi.zeta(model));
          if (n == N) break;
          Eigen::VectorXd u;
          if (quad) {
            u = quadrotor_ida_pbc_control(xi, p_star, psi_star, gains, model, att, dt).u;
          } else {
            Target tgt;
            tgt.p = p_star;
            tgt.R = R_star;
            u = ida_pbc_control(xi, tgt, gains, model).u;
          }
          for (int k = 0; k < u.size(); ++k) u(k) += expl(rng);
          tr.u.push_back(u);
          xi = step(xi, u, Vec6::Zero(), dt, model, 10);
        }
      } catch (const IntegrationDiverged&) {
        diverged = true;
      }
      if (!diverged) {
        ds.trajectories.push_back(std::move(tr));
        x = xi;
        break;
      }
      x = State{};
    }
  }
  ds.shift_to_origin();
  return ds;
}

Dataset gen_data_planar(const PlantParams& plant, int n_samples, double interval_s,
                        uint64_t seed) {
  const AnalyticModel model(plant);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> f(-5.0, 5.0);
  std::uniform_real_distribution<double> tq(-2.0, 2.0);
  const double hover = plant.mass * plant.gravity;

  Dataset ds;
  ds.input_dim = 6;
  for (int i = 0; i < n_samples; ++i) {
    State x;
    x.p = Vec3(-1.0, 0.0, 0.0);
    Eigen::VectorXd u = Eigen::VectorXd::Zero(6);
    u(0) = f(rng);
    u(2) = hover + f(rng);
    u(4) = tq(rng);
    const State x1 = step(x, u, Vec6::Zero(), interval_s, model, 10);
    Trajectory tr;
    tr.t = {0.0, interval_s};
    tr.p = {x.p, x1.p};
    tr.R = {x.R, x1.R};
    tr.zeta = {x.zeta(model), x1.zeta(model)};
    tr.u = {u};
    ds.trajectories.push_back(std::move(tr));
  }
  ds.shift_to_origin();
  return ds;
}

// ---------------------------------------------------------------------------
// Scenario execution

namespace {

RobustnessConstants resolve_constants(const Scenario& s, const Mat6& M_ctrl) {
  const QMatrices Q = q_matrices(s.gains, M_ctrl, s.alpha, s.beta);
  RobustnessConstants c;
  try {
    c = constants(Q, s.gains, M_ctrl, s.alpha, s.beta, s.delta_d_bound);
  } catch (const DisturbanceTooLarge&) {
    if (!s.force && !s.pinned_c) throw;
    c = constants(Q, s.gains, M_ctrl, s.alpha, s.beta, 0.0);
    c.delta_d = s.delta_d_bound;
    c.c1 = c.k2 * c.k_gamma * s.delta_d_bound * s.delta_d_bound / c.k3;
    c.uub_radius =
        std::sqrt(c.k2 * c.k_gamma / (c.k1 * c.k3)) * s.delta_d_bound / s.gains.kp;
  }
  if (s.pinned_c) {
    c.c1 = s.pinned_c->first;
    c.c2 = s.pinned_c->second;
  }
  const double worst = std::max(s.delta_d, s.delta_d_bound);
  if (!s.force && worst > c.delta_d_cap) {
    throw DisturbanceTooLarge(
        "run_scenario: delta_d exceeds the admissible cap (pass force to override)",
        c.delta_d_cap);
  }
  return c;
}

}  // namespace

RunRecord run_scenario(const Scenario& s) {
  const AnalyticModel sim_model(s.plant);
  std::unique_ptr<HamiltonianModel> ctrl_owner;
  if (s.model_checkpoint.empty()) {
    ctrl_owner = std::make_unique<AnalyticModel>(s.plant);
  } else {
    ctrl_owner = std::make_unique<LearnedModel>(load_checkpoint(s.model_checkpoint));
  }
  const HamiltonianModel& ctrl_model = *ctrl_owner;

  const Mat6 Minv_ctrl = ctrl_model.mass_inverse(Vec3::Zero(), Mat3::Identity());
  const Mat6 M_ctrl = Minv_ctrl.inverse();
  const RobustnessConstants consts = resolve_constants(s, M_ctrl);

  std::mt19937_64 rng(s.seed);
  RunRecord rec;
  rec.path = s.path;
  rec.dt = s.dt;

  GovernorState gov;
  gov.sigma = 0.0;
  gov.g = s.path.eval(0.0);
  gov.kg = s.kg;

  State x;
  x.p = gov.g;
  QuadAttitudeState att;

  const auto sense_at = [&](const Vec3& q, const State& robot) {
    if (s.sensing == Sensing::Lidar) {
      const auto scan = lidar_scan(robot.p, robot.R, s.world.obstacles, s.world.d_max, s.n_rays);
      return scan_distance(q, scan, s.world.d_max);
    }
    return sensed_distance(q, s.world.obstacles, s.world.d_max);
  };

  // Initial margin check on the true start state.
  {
    const double dbar0 = sense_at(gov.g, x);
    const double dE0 = safety_margin(x, lift(gov.g), consts, dbar0);
    if (dE0 <= 0.0) {
      rec.summary.rejected = true;
      rec.summary.safety_violated = true;
      return rec;
    }
  }

  const int n_steps = static_cast<int>(std::lround(s.duration / s.dt));
  rec.rows.reserve(n_steps);

  InputSine sine;
  int substeps = s.plant_substeps;
  if (s.noise.input_sine) {
    sine.amplitude = s.noise.sine_amplitude;
    sine.frequency_hz = s.noise.sine_frequency_hz;
    // Resolve the sinusoid with ten samples per period.
    const int needed =
        static_cast<int>(std::ceil(s.dt * s.noise.sine_frequency_hz * 10.0));
    substeps = std::max(substeps, needed);
  }

  for (int k = 0; k < n_steps; ++k) {
    const double t = k * s.dt;
    // Measurement noise acts on the physical (pose, twist) estimate; the
    // controller then forms its own momentum through its model's mass.
    const auto [x_noisy, u_noise] = corrupt(x, s.noise, t, sim_model, rng);
    (void)u_noise;
    State x_meas = x_noisy;
    {
      const Vec6 zeta_meas = x_noisy.zeta(sim_model);
      const Mat6 Minv_here = ctrl_model.mass_inverse(x_noisy.p, x_noisy.R);
      x_meas.pm = Minv_here.ldlt().solve(zeta_meas);
    }

    const double dbar_g = sense_at(gov.g, x);
    const double dist_p = sensed_distance(x.p, s.world.obstacles, s.world.d_max);

    Target target;
    Eigen::VectorXd u;
    double d2_xy = 0.0;
    double rot_err = 0.0;
    if (s.quadrotor_rotation) {
      const QuadControlResult qc =
          quadrotor_ida_pbc_control(x_meas, gov.g, 0.0, s.gains, ctrl_model, att, s.dt);
      target = qc.target;
      u = qc.u;
      d2_xy = qc.b.head<2>().cwiseAbs().maxCoeff();
    } else {
      target = lift(gov.g);
      u = ida_pbc_control(x_meas, target, s.gains, ctrl_model).u;
    }
    {
      const Mat3 Re = target.R.transpose() * x.R;
      rot_err = std::acos(std::clamp(0.5 * (Re.trace() - 1.0), -1.0, 1.0));
    }

    const double V = lyapunov(x_meas, target, s.gains, Minv_ctrl);
    const double dE = safety_margin(V, consts, dbar_g);
    const double radius = safe_zone_radius(dE);
    const double sigma_star =
        s.static_governor ? gov.sigma
                          : local_projected_goal(s.path, gov.sigma, gov.g, radius);

    Vec6 d = sample_disturbance(s.delta_d, rng);
    if (s.planar) {
      d(1) = 0.0;  // y force
      d(3) = 0.0;  // roll torque
      d(5) = 0.0;  // yaw torque
    }

    TelemetryRow row;
    row.t = t;
    row.p = x.p;
    row.quat = rotation_to_quaternion(x.R);
    row.zeta = x.zeta(sim_model);
    row.u = u;
    row.sigma = gov.sigma;
    row.V = V;
    row.dE = dE;
    row.dist_p = dist_p;
    row.dist_g = dbar_g;
    rec.rows.push_back(std::move(row));
    rec.rot_err.push_back(rot_err);
    rec.d2_xy.push_back(d2_xy);

    try {
      x = step(x, u, d, s.dt, sim_model, substeps, t, sine);
    } catch (const IntegrationDiverged&) {
      rec.summary.aborted = true;
      break;
    }
    gov = governor_step(gov, sigma_star, s.dt, s.path);
  }

  const bool aborted = rec.summary.aborted;
  rec.summary = metrics(rec);
  rec.summary.aborted = aborted;
  return rec;
}

RunSummary metrics(const RunRecord& rec) {
  RunSummary m;
  if (rec.rows.empty()) {
    m.rejected = rec.summary.rejected;
    m.safety_violated = rec.summary.safety_violated;
    return m;
  }
  double sum_err = 0.0;
  m.max_pos_err = 0.0;
  m.min_obstacle_dist = std::numeric_limits<double>::infinity();
  m.min_dE = std::numeric_limits<double>::infinity();
  m.completion_time = -1.0;
  for (const auto& r : rec.rows) {
    const double err = (r.p - rec.path.eval(r.sigma)).norm();
    sum_err += err;
    m.max_pos_err = std::max(m.max_pos_err, err);
    m.min_obstacle_dist = std::min(m.min_obstacle_dist, r.dist_p);
    m.min_dE = std::min(m.min_dE, r.dE);
    if (m.completion_time < 0.0 && r.sigma >= 0.999) m.completion_time = r.t;
  }
  m.mean_pos_err = sum_err / static_cast<double>(rec.rows.size());
  m.final_goal_dist = (rec.rows.back().p - rec.path.eval(1.0)).norm();
  m.safety_violated = (m.min_dE < 0.0) || (m.min_obstacle_dist <= 0.0);
  return m;
}

// ---------------------------------------------------------------------------
// Serialization

void write_telemetry_csv(const RunRecord& rec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_telemetry_csv: cannot open " + path);
  const int m = rec.rows.empty() ? 0 : static_cast<int>(rec.rows.front().u.size());
  out << "t,px,py,pz,qw,qx,qy,qz";
  for (int i = 0; i < 6; ++i) out << ",zeta" << i;
  for (int i = 0; i < m; ++i) out << ",u" << i;
  out << ",sigma,V,dE,dist_p,dist_g\n";
  out.precision(17);
  for (const auto& r : rec.rows) {
    out << r.t;
    for (int i = 0; i < 3; ++i) out << ',' << r.p(i);
    for (int i = 0; i < 4; ++i) out << ',' << r.quat(i);
    for (int i = 0; i < 6; ++i) out << ',' << r.zeta(i);
    for (int i = 0; i < m; ++i) out << ',' << r.u(i);
    out << ',' << r.sigma << ',' << r.V << ',' << r.dE << ',' << r.dist_p << ',' << r.dist_g
        << '\n';
  }
}

json summary_to_json(const RunSummary& s) {
  return json{{"mean_pos_err", s.mean_pos_err},
              {"max_pos_err", s.max_pos_err},
              {"min_obstacle_dist", s.min_obstacle_dist},
              {"min_dE", s.min_dE},
              {"completion_time", s.completion_time},
              {"final_goal_dist", s.final_goal_dist},
              {"safety_violated", s.safety_violated},
              {"aborted", s.aborted},
              {"rejected", s.rejected}};
}

json make_certificate(const ControllerGains& gains, const Mat6& M, double alpha, double beta,
                      double delta_d) {
  json cert;
  cert["inputs"] = {
      {"kp", gains.kp},       {"kR", gains.kR},
      {"Kd_min", 0.0},        {"rho", gains.rho},
      {"alpha", alpha},       {"beta", beta},
      {"delta_d", delta_d},
  };
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gains.Kd);
  cert["inputs"]["Kd_min"] = es.eigenvalues().minCoeff();

  const QMatrices Q = q_matrices(gains, M, alpha, beta);
  cert["q_eigenvalues"] = {
      {"Q1", {lambda_min_sym2(Q.Q1), lambda_max_sym2(Q.Q1)}},
      {"Q2", {lambda_min_sym2(Q.Q2), lambda_max_sym2(Q.Q2)}},
      {"Q3", {lambda_min_sym2(Q.Q3), lambda_max_sym2(Q.Q3)}},
  };
  json checks;
  checks["Q1_pd"] = lambda_min_sym2(Q.Q1) > 0.0;
  checks["Q2_pd"] = lambda_min_sym2(Q.Q2) > 0.0;
  checks["Q3_pd"] = lambda_min_sym2(Q.Q3) > 0.0;

  bool c1_lt_c2 = true;
  RobustnessConstants c;
  try {
    c = constants(Q, gains, M, alpha, beta, delta_d);
  } catch (const DisturbanceTooLarge& e) {
    c1_lt_c2 = false;
    c = constants(Q, gains, M, alpha, beta, 0.0);
    c.delta_d = delta_d;
    c.c1 = c.k2 * c.k_gamma * delta_d * delta_d / c.k3;
    c.uub_radius = std::sqrt(c.k2 * c.k_gamma / (c.k1 * c.k3)) * delta_d / gains.kp;
    cert["note"] = std::string(e.what());
  }
  checks["c1_lt_c2"] = c1_lt_c2;
  checks["cap_positive"] = c.delta_d_cap > 0.0;

  cert["derived"] = {{"lambda1", c.lambda1},   {"lambda2", c.lambda2},
                     {"k1", c.k1},             {"k2", c.k2},
                     {"k3", c.k3},             {"k_gamma", c.k_gamma},
                     {"c1", c.c1},             {"c2", c.c2},
                     {"uub_radius", c.uub_radius}, {"delta_d_cap", c.delta_d_cap}};

  const double gamma_d = cert["inputs"]["Kd_min"].get<double>();
  const double rho_sel = select_rho(gains.kp, gains.kR, gamma_d, M, alpha, beta);
  ControllerGains g2 = gains;
  g2.rho = rho_sel;
  const QMatrices Q2m = q_matrices(g2, M, alpha, beta);
  checks["select_rho_pd"] = lambda_min_sym2(Q2m.Q1) > 0.0 &&
                            lambda_min_sym2(Q2m.Q2) > 0.0 && lambda_min_sym2(Q2m.Q3) > 0.0;
  cert["rho_selected"] = rho_sel;

  // Shipped defaults logged beside the derived values; they are not forced
  // to agree (derivation bookkeeping differs from the reference source).
  cert["reference_defaults"] = {
      {"c1", kReferenceC1}, {"c2", kReferenceC2}, {"rho", kReferenceRho}};
  cert["checks"] = checks;
  return cert;
}

// ---------------------------------------------------------------------------
// Worlds and scenario configs

World make_warehouse_world() {
  World w;
  w.d_max = 30.0;
  w.bounds_lo = Vec3(0, 0, 0);
  w.bounds_hi = Vec3(30, 20, 6);
  const auto shelf = [&](double x0, double x1, double y0, double y1) {
    w.obstacles.boxes.push_back({Vec3(x0, y0, 0.0), Vec3(x1, y1, 6.0)});
  };
  shelf(2, 12, 5.0, 6.5);
  shelf(16, 28, 5.0, 6.5);
  shelf(2, 8, 10.0, 11.5);
  shelf(12, 24, 10.0, 11.5);
  shelf(6, 18, 14.5, 16.0);
  shelf(22, 28, 14.5, 16.0);
  return w;
}

World make_walls2d_world() {
  World w;
  w.d_max = 30.0;
  w.bounds_lo = Vec3(-4, -1, -4);
  w.bounds_hi = Vec3(3, 1, 2);
  const auto wall = [&](const Vec3& n, double b) {
    const double nn = n.norm();
    w.obstacles.halfspaces.push_back({n / nn, b / nn});
  };
  wall(Vec3(-1, 0, 1), 1.1);   // -x + z < 1.1 is safe
  wall(Vec3(0.8, 0, 1), 0.4);  // 0.8 x + z < 0.4 is safe
  return w;
}

namespace {

Vec3 vec3_of(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

World world_from_config(const json& j, const std::string& base_dir) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "warehouse") return make_warehouse_world();
    if (s == "walls2d") return make_walls2d_world();
    if (s == "empty") return World{};
    return load_world((std::filesystem::path(base_dir) / s).string());
  }
  // Inline world description.
  const std::string tmp = (std::filesystem::path(base_dir) / ".inline_world.json").string();
  {
    std::ofstream out(tmp);
    out << j.dump();
  }
  World w = load_world(tmp);
  std::filesystem::remove(tmp);
  return w;
}

}  // namespace

Scenario scenario_from_json(const json& j, const std::string& base_dir) {
  Scenario s;
  s.name = j.value("name", "scenario");
  s.world = j.contains("world") ? world_from_config(j.at("world"), base_dir) : World{};

  if (j.contains("plant")) {
    const json& p = j.at("plant");
    s.plant.mass = p.value("mass", 6.77);
    if (p.contains("inertia")) {
      const auto d = p.at("inertia");
      s.plant.inertia = Vec3(d.at(0), d.at(1), d.at(2)).asDiagonal();
    }
    s.plant.gravity = p.value("gravity", 9.8);
    const std::string act = p.value("actuation", "hexarotor");
    s.plant.actuation = act == "quadrotor" ? Actuation::Quadrotor : Actuation::Hexarotor;
  }

  if (j.contains("model") && j.at("model").is_string() && j.at("model") != "ground-truth") {
    s.model_checkpoint =
        (std::filesystem::path(base_dir) / j.at("model").get<std::string>()).string();
  }

  if (j.contains("gains")) {
    const json& g = j.at("gains");
    s.gains.kp = g.value("kp", 20.0);
    s.gains.kR = g.value("kR", 50.0);
    s.gains.Kd = g.value("kd", 15.0) * Mat6::Identity();
    s.gains.rho = g.value("rho", kReferenceRho);
  }
  s.alpha = j.value("alpha", 2.0);
  s.beta = j.value("beta", 20.0);
  s.delta_d = j.value("delta_d", 0.0);
  s.delta_d_bound = j.value("delta_d_bound", s.delta_d);
  if (j.contains("constants") && j.at("constants").is_object()) {
    s.pinned_c = std::make_pair(j.at("constants").value("c1", kReferenceC1),
                                j.at("constants").value("c2", kReferenceC2));
  }

  if (j.contains("noise")) {
    const json& n = j.at("noise");
    s.noise.input_sine = n.value("input_sine", false);
    s.noise.sine_amplitude = n.value("sine_amplitude", 5.0);
    s.noise.sine_frequency_hz = n.value("sine_frequency_hz", 4800.0);
    s.noise.state_noise = n.value("state_noise", false);
    s.noise.state_noise_scale = n.value("scale", 1.0);
  }

  if (j.contains("path")) {
    const json& p = j.at("path");
    if (p.contains("waypoints")) {
      std::vector<Vec3> wps;
      for (const auto& w : p.at("waypoints")) wps.push_back(vec3_of(w));
      s.path = ReferencePath(wps);
    } else if (p.contains("file")) {
      s.path = load_path((std::filesystem::path(base_dir) / p.at("file")).string());
    } else if (p.contains("planner")) {
      const json& pl = p.at("planner");
      s.path = grid_astar(vec3_of(pl.at("start")), vec3_of(pl.at("goal")), s.world.obstacles,
                          pl.value("cell", 0.5), pl.value("clearance", 1.2), s.world.bounds_lo,
                          s.world.bounds_hi, s.world.d_max);
    }
  }

  s.duration = j.value("duration", 60.0);
  s.dt = j.value("dt", 1.0 / 120.0);
  s.plant_substeps = j.value("plant_substeps", 10);
  s.seed = j.value("seed", 0);
  s.kg = j.value("kg", 0.5);
  s.sensing = j.value("sensing", "exact") == std::string("lidar") ? Sensing::Lidar
                                                                  : Sensing::Exact;
  s.n_rays = j.value("n_rays", 600);
  s.quadrotor_rotation =
      j.value("quadrotor_rotation", s.plant.actuation == Actuation::Quadrotor);
  s.static_governor = j.value("static_governor", false);
  s.planar = j.value("planar", false);
  s.force = j.value("force", false);
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_scenario: cannot open " + path);
  json j;
  in >> j;
  return scenario_from_json(j, std::filesystem::path(path).parent_path().string());
}

}  // namespace hamsafe

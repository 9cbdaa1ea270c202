#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hamsafe/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hamsafe;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j;
  in >> j;
  return j;
}

PlantParams plant_from_json(const json& j) {
  PlantParams p;
  if (!j.contains("plant")) return p;
  const json& pj = j.at("plant");
  p.mass = pj.value("mass", 6.77);
  if (pj.contains("inertia")) {
    const auto d = pj.at("inertia");
    p.inertia = Vec3(d.at(0), d.at(1), d.at(2)).asDiagonal();
  }
  p.gravity = pj.value("gravity", 9.8);
  p.actuation = pj.value("actuation", "hexarotor") == std::string("quadrotor")
                    ? Actuation::Quadrotor
                    : Actuation::Hexarotor;
  return p;
}

ModelSpec spec_from_json(const json& m) {
  ModelSpec spec;
  spec.cls = m.value("class", "uav3d") == std::string("planar") ? ModelClass::Planar
                                                                : ModelClass::Uav3d;
  spec.input_dim = m.value("input_dim", 6);
  if (m.contains("hidden")) spec.hidden = m.at("hidden").get<std::vector<int>>();
  spec.known_mass = m.value("known_mass", 6.77);
  spec.gravity = m.value("gravity", 9.8);
  spec.mass_prior = m.value("mass_prior", 1.5 * 6.77);
  spec.inertia_yy_prior = m.value("inertia_yy_prior", 1.5 * 1.05);
  spec.inertia_xx_known = m.value("inertia_xx_known", 1.05);
  spec.inertia_zz_known = m.value("inertia_zz_known", 2.05);
  spec.learn_potential = m.value("learn_potential", spec.cls == ModelClass::Planar);
  return spec;
}

int cmd_gen_data(const std::string& config, int64_t seed_override,
                 const std::string& out_dir) {
  const json cfg = read_json(config);
  const PlantParams plant = plant_from_json(cfg);
  const uint64_t seed =
      seed_override >= 0 ? static_cast<uint64_t>(seed_override) : cfg.value("seed", 0);
  Dataset ds;
  if (cfg.value("kind", "uav3d") == std::string("planar2d")) {
    ds = gen_data_planar(plant, cfg.value("n_samples", 150), cfg.value("interval", 1.0 / 24.0),
                         seed);
  } else {
    ds = gen_data(plant, cfg.value("n_traj", 18), cfg.value("horizon", 1.0),
                  cfg.value("rate_hz", 24), seed);
  }
  const fs::path out = fs::path(out_dir) / cfg.value("out", "dataset.jsonl");
  fs::create_directories(out.parent_path());
  save_dataset(ds, out.string());
  std::cout << "wrote " << out << " (" << ds.trajectories.size() << " trajectories, "
            << ds.sample_count() << " samples)\n";
  return 0;
}

int cmd_train(const std::string& config, int64_t seed_override, const std::string& out_dir) {
  const json cfg = read_json(config);
  const fs::path base = fs::path(config).parent_path();
  const std::string ds_path = (base / cfg.at("dataset").get<std::string>()).string();
  const Dataset ds = load_dataset(ds_path);
  const ModelSpec spec = spec_from_json(cfg.value("model", json::object()));

  TrainConfig tc;
  if (cfg.contains("train")) {
    const json& t = cfg.at("train");
    tc.iterations = t.value("iterations", 5000);
    tc.learning_rate = t.value("learning_rate", 1e-4);
    tc.substeps = t.value("substeps", 1);
    tc.seed = t.value("seed", 0);
  }
  if (seed_override >= 0) tc.seed = static_cast<uint64_t>(seed_override);

  const TrainResult res = train(ds, spec, tc);
  fs::create_directories(out_dir);
  const fs::path model_out = fs::path(out_dir) / cfg.value("out", "model.json");
  save_checkpoint(res.params, model_out.string(), dataset_hash(ds_path), "trained by cli");
  const fs::path curve_out = fs::path(out_dir) / "loss_curve.csv";
  {
    std::ofstream out(curve_out);
    out << "iteration,loss\n";
    out.precision(17);
    for (size_t i = 0; i < res.loss_curve.size(); ++i) out << i << ',' << res.loss_curve[i] << '\n';
  }
  std::cout << "wrote " << model_out << "\n  initial loss " << res.loss_curve.front()
            << "\n  final loss   " << res.loss_curve.back() << "\n";
  return 0;
}

int cmd_certify(const std::string& config, const std::string& out_dir) {
  const json cfg = read_json(config);
  ControllerGains gains;
  if (cfg.contains("gains")) {
    const json& g = cfg.at("gains");
    gains.kp = g.value("kp", 20.0);
    gains.kR = g.value("kR", 50.0);
    gains.Kd = g.value("kd", 15.0) * Mat6::Identity();
    gains.rho = g.value("rho", 3.5822e-5);
  }
  const PlantParams plant = plant_from_json(cfg);
  Mat6 M = Mat6::Zero();
  M.topLeftCorner<3, 3>() = plant.mass * Mat3::Identity();
  M.bottomRightCorner<3, 3>() = plant.inertia;
  if (cfg.contains("model") && cfg.at("model") != "ground-truth") {
    const fs::path base = fs::path(config).parent_path();
    const LearnedModel lm(load_checkpoint((base / cfg.at("model").get<std::string>()).string()));
    M = lm.mass(Vec3::Zero(), Mat3::Identity());
  }
  const json cert = make_certificate(gains, M, cfg.value("alpha", 2.0), cfg.value("beta", 20.0),
                                     cfg.value("delta_d", 0.0));
  std::cout << cert.dump(2) << "\n";
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "certificate.json");
  out << cert.dump(2) << "\n";
  return 0;
}

void write_run(const RunRecord& rec, const fs::path& dir) {
  fs::create_directories(dir);
  write_telemetry_csv(rec, (dir / "telemetry.csv").string());
  std::ofstream out(dir / "summary.json");
  out << summary_to_json(rec.summary).dump(2) << "\n";
}

int cmd_simulate(const std::string& config, int64_t seed_override, const std::string& out_dir,
                 bool force) {
  Scenario s = load_scenario(config);
  if (seed_override >= 0) s.seed = static_cast<uint64_t>(seed_override);
  s.force = s.force || force;
  const RunRecord rec = run_scenario(s);
  write_run(rec, fs::path(out_dir));

  const Mat6 M = [&] {
    Mat6 m = Mat6::Zero();
    m.topLeftCorner<3, 3>() = s.plant.mass * Mat3::Identity();
    m.bottomRightCorner<3, 3>() = s.plant.inertia;
    return m;
  }();
  std::ofstream cert_out(fs::path(out_dir) / "certificate.json");
  cert_out << make_certificate(s.gains, M, s.alpha, s.beta, s.delta_d_bound).dump(2) << "\n";

  std::cout << summary_to_json(rec.summary).dump(2) << "\n";
  return rec.summary.safety_violated || rec.summary.aborted || rec.summary.rejected ? 1 : 0;
}

int cmd_sweep(const std::string& config, int64_t seed_override, const std::string& out_dir,
              bool force) {
  const json cfg = read_json(config);
  Scenario base = scenario_from_json(cfg, fs::path(config).parent_path().string());
  if (seed_override >= 0) base.seed = static_cast<uint64_t>(seed_override);
  base.force = base.force || force;
  std::vector<double> values;
  for (const auto& v : cfg.at("sweep_delta_d")) values.push_back(v.get<double>());

  json rows = json::array();
  for (double delta : values) {
    Scenario s = base;
    s.delta_d = delta;
    const RunRecord rec = run_scenario(s);
    std::ostringstream name;
    name << "delta_" << delta;
    write_run(rec, fs::path(out_dir) / name.str());
    json row = summary_to_json(rec.summary);
    row["delta_d"] = delta;
    rows.push_back(row);
    std::cout << "delta_d = " << delta << ": min distance " << rec.summary.min_obstacle_dist
              << ", min dE " << rec.summary.min_dE << "\n";
  }
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "sweep_summary.json");
  out << rows.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hamsafe: learned SE(3) Hamiltonian dynamics, energy-shaping control, "
               "robustness certificates, and reference-governor safe tracking"};
  app.require_subcommand(1);

  std::string config, out_dir = "out";
  int64_t seed = -1;
  bool force = false;

  auto add_common = [&](CLI::App* cmd, bool with_force) {
    cmd->add_option("--config", config, "JSON config file")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "seed override");
    if (with_force) cmd->add_flag("--force", force, "accept delta_d beyond the admissible cap");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a training dataset");
  add_common(gen, false);
  auto* tr = app.add_subcommand("train", "train a Hamiltonian model");
  add_common(tr, false);
  auto* ce = app.add_subcommand("certify", "compute the robustness certificate");
  add_common(ce, false);
  auto* si = app.add_subcommand("simulate", "run a tracking scenario");
  add_common(si, true);
  auto* sw = app.add_subcommand("sweep", "run a disturbance sweep");
  add_common(sw, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(config, seed, out_dir);
    if (tr->parsed()) return cmd_train(config, seed, out_dir);
    if (ce->parsed()) return cmd_certify(config, out_dir);
    if (si->parsed()) return cmd_simulate(config, seed, out_dir, force);
    if (sw->parsed()) return cmd_sweep(config, seed, out_dir, force);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

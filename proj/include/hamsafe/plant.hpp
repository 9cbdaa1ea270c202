#pragma once

#include <random>
#include <stdexcept>
#include <utility>

#include "hamsafe/model.hpp"
#include "hamsafe/se3.hpp"

namespace hamsafe {

/// Pose + generalized momentum on T*SE(3). The momentum pm = M(q) zeta is
/// expressed in the body frame.
struct State {
  Vec3 p = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  Vec6 pm = Vec6::Zero();

  Vec6 zeta(const HamiltonianModel& model) const { return model.mass_inverse(p, R) * pm; }
};

struct IntegrationDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Hamilton's equations with matched disturbance d entering the momentum
/// block. Returns (q_dot, pm_dot) with q = [p; r1; r2; r3].
std::pair<Vec12, Vec6> vector_field(const State& x, const Eigen::VectorXd& u,
                                    const HamiltonianModel& model, const Vec6& d);

/// Optional substep-resolved additive input sinusoid (all input channels),
/// used by the unmodeled-noise study. Zero amplitude disables it.
struct InputSine {
  double amplitude = 0.0;
  double frequency_hz = 0.0;
};

/// Fixed-step RK4 on (p, R rows, pm) with zero-order-hold u and d, rotation
/// reprojected after every substep. Deterministic. Throws IntegrationDiverged
/// on non-finite state.
State step(const State& x, const Eigen::VectorXd& u, const Vec6& d, double dt,
           const HamiltonianModel& model, int substeps = 10, double t0 = 0.0,
           const InputSine& sine = {});

double total_energy(const State& x, const HamiltonianModel& model);

/// Uniform per-component in [-delta/2, delta/2], renormalized to norm delta
/// when exceeded; ||result|| <= delta always.
Vec6 sample_disturbance(double delta_d, std::mt19937_64& rng);

/// State-estimate corruption and high-frequency input noise. Std deviations
/// follow the evaluation setup: position 0.01 m, Euler angle 0.01 deg, linear
/// velocity 0.02 m/s, angular velocity 0.14 deg/s, times `state_noise_scale`.
struct NoiseSpec {
  bool input_sine = false;
  double sine_amplitude = 5.0;
  double sine_frequency_hz = 4800.0;

  bool state_noise = false;
  double state_noise_scale = 1.0;
  double pos_std = 0.01;
  double angle_std_deg = 0.01;
  double vel_std = 0.02;
  double angvel_std_deg = 0.14;
};

struct CorruptResult {
  State state;
  Eigen::VectorXd input_noise;  // additive input noise sampled at time t
};

CorruptResult corrupt(const State& x, const NoiseSpec& noise, double t,
                      const HamiltonianModel& model, std::mt19937_64& rng);

}  // namespace hamsafe

#pragma once

#include <stdexcept>

#include "hamsafe/model.hpp"
#include "hamsafe/plant.hpp"
#include "hamsafe/se3.hpp"

namespace hamsafe {

struct ControllerGains {
  double kp = 20.0;
  double kR = 50.0;
  Mat6 Kd = 15.0 * Mat6::Identity();
  double rho = 3.5822e-5;
};

/// Desired regulation state: pose plus desired body twist. Regulation targets
/// carry zeta = 0; the quadrotor construction supplies a desired angular rate.
struct Target {
  Vec3 p = Vec3::Zero();
  Mat3 R = Mat3::Identity();
  Vec6 zeta = Vec6::Zero();
};

struct ErrorState {
  Vec3 p_e;
  Mat3 R_e;
  Vec6 pm_e;
};

/// R_e = R*^T R, p_e = p - p*, pm_e = pm - M [R_e^T v*; R_e^T w*]
/// (the transported desired momentum; zero for regulation targets).
ErrorState error_state(const State& x, const Target& xd, const Mat6& M);

/// H_d = pm_e' Minv pm_e / 2 + kp ||p_e||^2 / 2 + kR tr(I - R_e) / 2.
double desired_hamiltonian(const ErrorState& e, const ControllerGains& gains,
                           const Mat6& Minv);

/// e(x, x*) = J(x, x*)^T grad_{q_e} H_d = [kp R^T p_e; kR (R_e - R_e^T)^vee / 2].
Vec6 shaping_error(const ErrorState& e, const Mat3& R, const ControllerGains& gains);

struct SingularActuation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ControlResult {
  Eigen::VectorXd u;
  Vec6 b;   // desired wrench before the actuation projection
  Vec6 d2;  // (B B^+ - I) b, the matching residual
};

/// Full IDA-PBC wrench: b = q^x' grad_q H - p^x grad_pm H - e - Kd Minv pm_e,
/// u = B^+ b. Throws SingularActuation when B loses column rank.
ControlResult ida_pbc_control(const State& x, const Target& xd, const ControllerGains& gains,
                              const HamiltonianModel& model);

/// One-step memory for the quadrotor desired-rotation construction.
struct QuadAttitudeState {
  Mat3 R_star = Mat3::Identity();
  bool has_prev = false;
};

struct QuadRotationResult {
  Mat3 R_star;
  Vec3 omega_star;
};

/// Desired rotation from the commanded body-frame force: the world-frame
/// force direction becomes the desired body z-axis, yaw fixed by psi*.
/// Degenerate thrust (near-zero or parallel to the yaw reference) holds the
/// previous R*. omega* comes from backward-differencing consecutive R*.
QuadRotationResult quadrotor_desired_rotation(const Vec3& b_v, const Mat3& R, double psi_star,
                                              QuadAttitudeState& att, double dt);

/// Quadrotor control: extracts the force command, builds R*/omega*, rebuilds
/// the wrench with the force expressed along the desired thrust axis, and
/// projects through the quadrotor actuation.
struct QuadControlResult {
  Eigen::VectorXd u;   // [thrust, torque(3)]
  Vec6 b;
  Vec6 d2;
  Target target;       // the lifted target with the constructed R*, omega*
};
QuadControlResult quadrotor_ida_pbc_control(const State& x, const Vec3& p_star,
                                            double psi_star, const ControllerGains& gains,
                                            const HamiltonianModel& model,
                                            QuadAttitudeState& att, double dt);

/// R^n variant: H_d = pm_e' Minv pm_e / 2 + kp ||q_e||^2 / 2 and
/// b = grad_q H - grad_{q_e} H_d - Kd grad_{pm_e} H_d.
Eigen::VectorXd rn_ida_pbc_control(const Eigen::VectorXd& q, const Eigen::VectorXd& pm,
                                   const Eigen::VectorXd& q_star, double kp,
                                   const Eigen::MatrixXd& Kd, const Eigen::MatrixXd& Minv,
                                   const Eigen::VectorXd& grad_U,
                                   const Eigen::MatrixXd& B);

}  // namespace hamsafe

#pragma once

#include <stdexcept>

#include "hamsafe/controller.hpp"
#include "hamsafe/se3.hpp"

namespace hamsafe {

using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;

struct CertifyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DisturbanceTooLarge : std::runtime_error {
  DisturbanceTooLarge(const std::string& msg, double cap_)
      : std::runtime_error(msg), cap(cap_) {}
  double cap;
};

struct QMatrices {
  Mat2 Q1, Q2, Q3;
};

double lambda_min_sym2(const Mat2& Q);
double lambda_max_sym2(const Mat2& Q);

/// The three comparison matrices of the ISS analysis for the SE(3) law, for a
/// constant generalized mass M and domain parameters alpha in (0,4), beta > 0.
QMatrices q_matrices(const ControllerGains& gains, const Mat6& M, double alpha, double beta);

struct RobustnessConstants {
  double lambda1 = 0.0, lambda2 = 0.0;  // extreme eigenvalues of M^-1
  double k1 = 0.0, k2 = 0.0, k3 = 0.0, k_gamma = 0.0;
  double c1 = 0.0, c2 = 0.0;
  double alpha = 2.0, beta = 20.0;
  double delta_d = 0.0;
  double uub_radius = 0.0;   // sqrt(k2 kg / (k1 k3 kp^2)) * delta_d
  double delta_d_cap = 0.0;  // sqrt(c2 k3 / (k2 kg))
  ControllerGains gains;
  Mat6 Minv = Mat6::Identity();
};

/// Derives every robustness constant from the Q matrices. Throws CertifyError
/// when a Q matrix is not positive definite (message says which and by how
/// much) and DisturbanceTooLarge when c1 >= c2.
RobustnessConstants constants(const QMatrices& Q, const ControllerGains& gains, const Mat6& M,
                              double alpha, double beta, double delta_d);

/// Largest cross-term weight (times margin) keeping all Q matrices positive
/// definite, for Kd = gamma_d I.
double select_rho(double kp, double kR, double gamma_d, const Mat6& M, double alpha,
                  double beta, double margin = 0.9);

/// ISS-Lyapunov value V = H_d + rho e' M^-1 pm_e.
double lyapunov(const State& x, const Target& xd, const ControllerGains& gains,
                const Mat6& Minv);

/// z = [||e||, ||pm_e||], the comparison coordinates of the sandwich bounds.
Vec2 z_vector(const State& x, const Target& xd, const ControllerGains& gains,
              const Mat6& Minv);

/// Safety margin dE = min{c2, k1 kp^2 dbar^2} - V + max{c1 - V, 0}, with dbar
/// the sensed distance at the desired position.
double safety_margin(double V, const RobustnessConstants& c, double dbar_star);
double safety_margin(const State& x, const Target& xd, const RobustnessConstants& c,
                     double dbar_star);

// --- R^n variant (the region of attraction is global; no c2 gate) ---

struct RnConstants {
  double lambda1 = 0.0, lambda2 = 0.0;
  double k1 = 0.0, k2 = 0.0, k3 = 0.0, k_gamma = 0.0;
  double c1 = 0.0;
  double kp = 0.0, gamma_d = 0.0, rho = 0.0;
  double delta_d = 0.0;
  double uub_radius = 0.0;
};

QMatrices rn_q_matrices(double kp, double gamma_d, double rho, const Eigen::MatrixXd& Minv);
RnConstants rn_constants(double kp, double gamma_d, double rho, const Eigen::MatrixXd& Minv,
                         double delta_d);
double rn_lyapunov(const Eigen::VectorXd& q, const Eigen::VectorXd& pm,
                   const Eigen::VectorXd& q_star, double kp, double rho,
                   const Eigen::MatrixXd& Minv);
double rn_safety_margin(double V, const RnConstants& c, double dbar_star);

}  // namespace hamsafe

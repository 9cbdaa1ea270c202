#include "hamsafe/certify.hpp"

#include <cmath>
#include <sstream>

namespace hamsafe {

double lambda_min_sym2(const Mat2& Q) {
  const double mid = 0.5 * (Q(0, 0) + Q(1, 1));
  const double rad = std::hypot(0.5 * (Q(0, 0) - Q(1, 1)), Q(0, 1));
  return mid - rad;
}

double lambda_max_sym2(const Mat2& Q) {
  const double mid = 0.5 * (Q(0, 0) + Q(1, 1));
  const double rad = std::hypot(0.5 * (Q(0, 0) - Q(1, 1)), Q(0, 1));
  return mid + rad;
}

namespace {

std::pair<double, double> extreme_eigs(const Eigen::MatrixXd& S) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

}  // namespace

QMatrices q_matrices(const ControllerGains& gains, const Mat6& M, double alpha, double beta) {
  if (alpha <= 0.0 || alpha >= 4.0) throw CertifyError("q_matrices: alpha must be in (0,4)");
  if (beta <= 0.0) throw CertifyError("q_matrices: beta must be positive");
  const Mat6 Minv = M.inverse();
  const auto [l1, l2] = extreme_eigs(Minv);
  const double rho = gains.rho;

  QMatrices Q;
  Q.Q1 << std::min(1.0 / gains.kp, 1.0 / gains.kR), -rho * l2, -rho * l2, l1;
  Q.Q2 << std::max(1.0 / gains.kp, 4.0 / (gains.kR * (4.0 - alpha))), rho * l2, rho * l2, l2;

  const auto [kd_min, kd_max] = extreme_eigs(gains.Kd);
  (void)kd_max;
  const auto [mkm_min, mkm_max] = extreme_eigs(Minv * gains.Kd * Minv);
  (void)mkm_min;
  const double q1 = rho * l1;
  const double q2 = -rho * (mkm_max + beta * l2 * l2);
  const double q3 = kd_min * l1 * l1 - 2.0 * rho * l2 * l2 * std::max(gains.kp, gains.kR);
  Q.Q3 << q1, q2, q2, q3;
  return Q;
}

RobustnessConstants constants(const QMatrices& Q, const ControllerGains& gains, const Mat6& M,
                              double alpha, double beta, double delta_d) {
  RobustnessConstants c;
  c.gains = gains;
  c.alpha = alpha;
  c.beta = beta;
  c.delta_d = delta_d;
  c.Minv = M.inverse();
  const auto [l1, l2] = extreme_eigs(c.Minv);
  c.lambda1 = l1;
  c.lambda2 = l2;

  const double q1min = lambda_min_sym2(Q.Q1);
  const double q2max = lambda_max_sym2(Q.Q2);
  const double q3min = lambda_min_sym2(Q.Q3);
  const auto check_pd = [](const char* name, double lmin) {
    if (lmin <= 0.0) {
      std::ostringstream os;
      os << "constants: " << name << " is not positive definite (lambda_min = " << lmin << ")";
      throw CertifyError(os.str());
    }
  };
  check_pd("Q1", q1min);
  check_pd("Q2", lambda_min_sym2(Q.Q2));
  check_pd("Q3", q3min);

  c.k1 = 0.5 * q1min;
  c.k2 = 0.5 * q2max;
  c.k3 = 0.5 * q3min;
  const auto [kd_min, kd_max] = extreme_eigs(gains.Kd);
  (void)kd_max;
  c.k_gamma = 1.0 / (2.0 * kd_min) + gains.rho * l2 * l2 / (2.0 * l1);

  c.c1 = c.k2 * c.k_gamma * delta_d * delta_d / c.k3;
  c.c2 = c.k1 * std::min(gains.kR * gains.kR * alpha * (4.0 - alpha) / 4.0, beta * beta);
  c.delta_d_cap = std::sqrt(c.c2 * c.k3 / (c.k2 * c.k_gamma));
  c.uub_radius = std::sqrt(c.k2 * c.k_gamma / (c.k1 * c.k3)) * delta_d / gains.kp;

  if (delta_d > 0.0 && c.c1 >= c.c2) {
    std::ostringstream os;
    os << "constants: c1 = " << c.c1 << " >= c2 = " << c.c2
       << "; admissible disturbance bound is " << c.delta_d_cap;
    throw DisturbanceTooLarge(os.str(), c.delta_d_cap);
  }
  return c;
}

double select_rho(double kp, double kR, double gamma_d, const Mat6& M, double alpha,
                  double beta, double margin) {
  (void)alpha;
  const Mat6 Minv = M.inverse();
  const auto [l1, l2] = extreme_eigs(Minv);
  const double cap1 = std::sqrt(l1 / (kR * l2 * l2));
  const double cap2 = std::sqrt(1.0 / (kp * l2));
  const double cap3 = gamma_d * l1 * l1 / (2.0 * kR * l2 * l2);
  const double denom = l2 * l2 * (2.0 * l1 * kR + l2 * l2 * (gamma_d + beta) * (gamma_d + beta));
  const double cap4 = gamma_d * l1 * l1 * l1 / denom;
  return margin * std::min(std::min(cap1, cap2), std::min(cap3, cap4));
}

double lyapunov(const State& x, const Target& xd, const ControllerGains& gains,
                const Mat6& Minv) {
  const Mat6 M = Minv.inverse();
  const ErrorState e = error_state(x, xd, M);
  const Vec6 shaping = shaping_error(e, x.R, gains);
  return desired_hamiltonian(e, gains, Minv) + gains.rho * shaping.dot(Minv * e.pm_e);
}

Vec2 z_vector(const State& x, const Target& xd, const ControllerGains& gains,
              const Mat6& Minv) {
  const Mat6 M = Minv.inverse();
  const ErrorState e = error_state(x, xd, M);
  return Vec2(shaping_error(e, x.R, gains).norm(), e.pm_e.norm());
}

double safety_margin(double V, const RobustnessConstants& c, double dbar_star) {
  const double cap = std::min(c.c2, c.k1 * c.gains.kp * c.gains.kp * dbar_star * dbar_star);
  return cap - V + std::max(c.c1 - V, 0.0);
}

double safety_margin(const State& x, const Target& xd, const RobustnessConstants& c,
                     double dbar_star) {
  return safety_margin(lyapunov(x, xd, c.gains, c.Minv), c, dbar_star);
}

QMatrices rn_q_matrices(double kp, double gamma_d, double rho, const Eigen::MatrixXd& Minv) {
  const auto [l1, l2] = extreme_eigs(Minv);
  QMatrices Q;
  Q.Q1 << 1.0 / kp, -rho * l2, -rho * l2, l1;
  Q.Q2 << 1.0 / kp, rho * l2, rho * l2, l2;
  Q.Q3 << rho * l1, -rho * gamma_d * l2 * l2, -rho * gamma_d * l2 * l2,
      gamma_d * l1 * l1 - 2.0 * rho * l2 * l2 * kp;
  return Q;
}

RnConstants rn_constants(double kp, double gamma_d, double rho, const Eigen::MatrixXd& Minv,
                         double delta_d) {
  const QMatrices Q = rn_q_matrices(kp, gamma_d, rho, Minv);
  RnConstants c;
  const auto [l1, l2] = extreme_eigs(Minv);
  c.lambda1 = l1;
  c.lambda2 = l2;
  c.kp = kp;
  c.gamma_d = gamma_d;
  c.rho = rho;
  c.delta_d = delta_d;

  const double q1min = lambda_min_sym2(Q.Q1);
  const double q3min = lambda_min_sym2(Q.Q3);
  if (q1min <= 0.0 || lambda_min_sym2(Q.Q2) <= 0.0 || q3min <= 0.0) {
    throw CertifyError("rn_constants: a Q matrix is not positive definite");
  }
  c.k1 = 0.5 * q1min;
  c.k2 = 0.5 * lambda_max_sym2(Q.Q2);
  c.k3 = 0.5 * q3min;
  c.k_gamma = 1.0 / (2.0 * gamma_d) + rho * l2 * l2 / (2.0 * l1);
  c.c1 = c.k2 * c.k_gamma * delta_d * delta_d / c.k3;
  c.uub_radius = std::sqrt(c.k2 * c.k_gamma / (c.k1 * c.k3)) * delta_d / kp;
  return c;
}

double rn_lyapunov(const Eigen::VectorXd& q, const Eigen::VectorXd& pm,
                   const Eigen::VectorXd& q_star, double kp, double rho,
                   const Eigen::MatrixXd& Minv) {
  const Eigen::VectorXd q_e = q - q_star;
  const double Hd = 0.5 * pm.dot(Minv * pm) + 0.5 * kp * q_e.squaredNorm();
  return Hd + rho * kp * q_e.dot(Minv * pm);
}

double rn_safety_margin(double V, const RnConstants& c, double dbar_star) {
  return c.k1 * c.kp * c.kp * dbar_star * dbar_star - V + std::max(c.c1 - V, 0.0);
}

}  // namespace hamsafe

#include "hamsafe/controller.hpp"

#include <cmath>

namespace hamsafe {

ErrorState error_state(const State& x, const Target& xd, const Mat6& M) {
  ErrorState e;
  e.R_e = xd.R.transpose() * x.R;
  e.p_e = x.p - xd.p;
  Vec6 zeta_star_transported;
  zeta_star_transported.head<3>() = e.R_e.transpose() * xd.zeta.head<3>();
  zeta_star_transported.tail<3>() = e.R_e.transpose() * xd.zeta.tail<3>();
  e.pm_e = x.pm - M * zeta_star_transported;
  return e;
}

double desired_hamiltonian(const ErrorState& e, const ControllerGains& gains,
                           const Mat6& Minv) {
  return 0.5 * e.pm_e.dot(Minv * e.pm_e) + 0.5 * gains.kp * e.p_e.squaredNorm() +
         0.5 * gains.kR * (Mat3::Identity() - e.R_e).trace();
}

Vec6 shaping_error(const ErrorState& e, const Mat3& R, const ControllerGains& gains) {
  Vec6 out;
  out.head<3>() = gains.kp * R.transpose() * e.p_e;
  out.tail<3>() = gains.kR * rot_error_vee(e.R_e);
  return out;
}

namespace {

// b(x, x*) of the SE(3) IDA-PBC law.
Vec6 build_wrench(const State& x, const Target& xd, const ControllerGains& gains,
                  const HamiltonianModel& model) {
  const Mat6 Minv = model.mass_inverse(x.p, x.R);
  const Mat6 M = Minv.inverse();
  const ErrorState e = error_state(x, xd, M);

  const Vec12 gH = model.hamiltonian_q_grad(x.p, x.R, x.pm);
  const Vec6 zeta = Minv * x.pm;
  const Vec3 v = zeta.head<3>();
  const Vec3 w = zeta.tail<3>();
  const Vec3 pv = x.pm.head<3>();
  const Vec3 pw = x.pm.tail<3>();

  // q^x' grad_q H
  Vec6 qxg;
  qxg.head<3>() = x.R.transpose() * gH.head<3>();
  Vec3 rot = Vec3::Zero();
  for (int i = 0; i < 3; ++i) {
    const Vec3 ri = x.R.row(i).transpose();
    rot -= ri.cross(gH.segment<3>(3 + 3 * i));
  }
  qxg.tail<3>() = rot;

  // p^x grad_pm H = p^x zeta
  Vec6 pxz;
  pxz.head<3>() = pv.cross(w);
  pxz.tail<3>() = pv.cross(v) + pw.cross(w);

  return qxg - pxz - shaping_error(e, x.R, gains) - gains.Kd * (Minv * e.pm_e);
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& B) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(B);
  cod.setThreshold(1e-8);
  if (cod.rank() < B.cols()) {
    throw SingularActuation("ida_pbc_control: input gain is rank deficient");
  }
  return cod.pseudoInverse();
}

}  // namespace

ControlResult ida_pbc_control(const State& x, const Target& xd, const ControllerGains& gains,
                              const HamiltonianModel& model) {
  ControlResult out;
  out.b = build_wrench(x, xd, gains, model);
  const Eigen::MatrixXd B = model.input_gain(x.p, x.R);
  const Eigen::MatrixXd Bp = pseudo_inverse(B);
  out.u = Bp * out.b;
  out.d2 = (B * Bp - Mat6::Identity()) * out.b;
  return out;
}

QuadRotationResult quadrotor_desired_rotation(const Vec3& b_v, const Mat3& R, double psi_star,
                                              QuadAttitudeState& att, double dt) {
  const Vec3 f_world = R * b_v;
  // Second column of the yaw rotation; hover with psi* = 0 yields R* = I.
  const Vec3 b2_psi(-std::sin(psi_star), std::cos(psi_star), 0.0);

  QuadRotationResult out;
  const double fn = f_world.norm();
  const Vec3 b3 = fn > 1e-6 ? (f_world / fn).eval() : Vec3::Zero();
  const Vec3 c1 = b2_psi.cross(b3);
  if (fn <= 1e-6 || c1.norm() <= 1e-6) {
    // Degenerate thrust direction: hold the previous desired rotation.
    out.R_star = att.R_star;
    out.omega_star = Vec3::Zero();
    att.has_prev = true;
    return out;
  }
  const Vec3 b1 = c1 / c1.norm();
  const Vec3 b2 = b3.cross(b1);
  Mat3 Rs;
  Rs.col(0) = b1;
  Rs.col(1) = b2;
  Rs.col(2) = b3;

  out.R_star = Rs;
  if (att.has_prev && dt > 0.0) {
    // omega*^ = R*' dR*/dt, backward difference, skew part.
    const Mat3 S = Rs.transpose() * (Rs - att.R_star) / dt;
    out.omega_star = rot_error_vee(S);
  } else {
    out.omega_star = Vec3::Zero();
  }
  att.R_star = Rs;
  att.has_prev = true;
  return out;
}

QuadControlResult quadrotor_ida_pbc_control(const State& x, const Vec3& p_star,
                                            double psi_star, const ControllerGains& gains,
                                            const HamiltonianModel& model,
                                            QuadAttitudeState& att, double dt) {
  // Force command from the regulation wrench; it does not depend on the
  // desired rotation for a block-diagonal mass.
  Target probe;
  probe.p = p_star;
  probe.R = att.R_star;
  const Vec6 b_probe = build_wrench(x, probe, gains, model);
  const Vec3 b_v = b_probe.head<3>();

  const QuadRotationResult rot = quadrotor_desired_rotation(b_v, x.R, psi_star, att, dt);

  QuadControlResult out;
  out.target.p = p_star;
  out.target.R = rot.R_star;
  out.target.zeta.tail<3>() = rot.omega_star;

  Vec6 b = build_wrench(x, out.target, gains, model);
  // Express the force along the constructed thrust axis: R*' (R b_v) has its
  // first two components zero by construction, so the matching residual d2
  // is annihilated and the force error moves into attitude tracking.
  b.head<3>() = rot.R_star.transpose() * (x.R * b_v);
  out.b = b;

  const Eigen::MatrixXd B = model.input_gain(x.p, x.R);
  const Eigen::MatrixXd Bp = pseudo_inverse(B);
  out.u = Bp * b;
  out.d2 = (B * Bp - Mat6::Identity()) * b;
  return out;
}

Eigen::VectorXd rn_ida_pbc_control(const Eigen::VectorXd& q, const Eigen::VectorXd& pm,
                                   const Eigen::VectorXd& q_star, double kp,
                                   const Eigen::MatrixXd& Kd, const Eigen::MatrixXd& Minv,
                                   const Eigen::VectorXd& grad_U,
                                   const Eigen::MatrixXd& B) {
  const Eigen::VectorXd q_e = q - q_star;
  const Eigen::VectorXd b = grad_U - kp * q_e - Kd * (Minv * pm);
  return pseudo_inverse(B) * b;
}

}  // namespace hamsafe

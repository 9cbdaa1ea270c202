#include "hamsafe/plant.hpp"

#include <cmath>

namespace hamsafe {

namespace {

using Vec18 = Eigen::Matrix<double, 18, 1>;

Vec18 pack(const Vec3& p, const Mat3& R, const Vec6& pm) {
  Vec18 y;
  y.segment<3>(0) = p;
  for (int r = 0; r < 3; ++r) y.segment<3>(3 + 3 * r) = R.row(r).transpose();
  y.segment<6>(12) = pm;
  return y;
}

void unpack(const Vec18& y, Vec3& p, Mat3& R, Vec6& pm) {
  p = y.segment<3>(0);
  for (int r = 0; r < 3; ++r) R.row(r) = y.segment<3>(3 + 3 * r).transpose();
  pm = y.segment<6>(12);
}

Vec18 dynamics(const Vec18& y, const Eigen::VectorXd& u, const Vec6& d,
               const HamiltonianModel& model) {
  Vec3 p;
  Mat3 R;
  Vec6 pm;
  unpack(y, p, R, pm);
  State x{p, R, pm};
  const auto [qdot, pmdot] = vector_field(x, u, model, d);
  Vec18 dy;
  dy.segment<12>(0) = qdot;
  dy.segment<6>(12) = pmdot;
  return dy;
}

}  // namespace

std::pair<Vec12, Vec6> vector_field(const State& x, const Eigen::VectorXd& u,
                                    const HamiltonianModel& model, const Vec6& d) {
  const Vec6 zeta = model.mass_inverse(x.p, x.R) * x.pm;
  const Vec3 v = zeta.head<3>();
  const Vec3 w = zeta.tail<3>();

  // q_dot = q^x grad_pm(H): p_dot = R v, r_i_dot = r_i x w.
  Vec12 qdot;
  qdot.segment<3>(0) = x.R * v;
  for (int r = 0; r < 3; ++r) {
    const Vec3 ri = x.R.row(r).transpose();
    qdot.segment<3>(3 + 3 * r) = ri.cross(w);
  }

  const Vec12 gH = model.hamiltonian_q_grad(x.p, x.R, x.pm);
  const Vec3 gp = gH.segment<3>(0);
  const Vec3 pv = x.pm.head<3>();
  const Vec3 pw = x.pm.tail<3>();

  Vec6 pmdot;
  pmdot.head<3>() = -x.R.transpose() * gp + pv.cross(w);
  Vec3 torque = pv.cross(v) + pw.cross(w);
  for (int r = 0; r < 3; ++r) {
    const Vec3 ri = x.R.row(r).transpose();
    torque += ri.cross(gH.segment<3>(3 + 3 * r));
  }
  pmdot.tail<3>() = torque;

  const Eigen::MatrixXd B = model.input_gain(x.p, x.R);
  if (u.size() != B.cols()) throw std::invalid_argument("vector_field: input dimension mismatch");
  pmdot += B * u + d;
  return {qdot, pmdot};
}

State step(const State& x, const Eigen::VectorXd& u, const Vec6& d, double dt,
           const HamiltonianModel& model, int substeps, double t0, const InputSine& sine) {
  if (dt <= 0.0) throw std::invalid_argument("step: dt must be positive");
  substeps = std::max(substeps, 1);
  const double h = dt / substeps;
  Vec18 y = pack(x.p, x.R, x.pm);

  for (int k = 0; k < substeps; ++k) {
    const double t = t0 + k * h;
    const auto eval = [&](const Vec18& yy, double tau) {
      if (sine.amplitude == 0.0) return dynamics(yy, u, d, model);
      const double s = sine.amplitude * std::sin(2.0 * M_PI * sine.frequency_hz * tau);
      const Eigen::VectorXd ueff = u.array() + s;
      return dynamics(yy, ueff, d, model);
    };
    const Vec18 k1 = eval(y, t);
    const Vec18 k2 = eval(y + 0.5 * h * k1, t + 0.5 * h);
    const Vec18 k3 = eval(y + 0.5 * h * k2, t + 0.5 * h);
    const Vec18 k4 = eval(y + h * k3, t + h);
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    Vec3 p;
    Mat3 R;
    Vec6 pm;
    unpack(y, p, R, pm);
    if (!y.allFinite()) throw IntegrationDiverged("step: non-finite state");
    R = project_to_so3(R);
    y = pack(p, R, pm);
  }

  State out;
  unpack(y, out.p, out.R, out.pm);
  return out;
}

double total_energy(const State& x, const HamiltonianModel& model) {
  return 0.5 * x.pm.dot(model.mass_inverse(x.p, x.R) * x.pm) + model.potential(x.p, x.R);
}

Vec6 sample_disturbance(double delta_d, std::mt19937_64& rng) {
  if (delta_d < 0.0) throw std::invalid_argument("sample_disturbance: delta_d must be >= 0");
  if (delta_d == 0.0) return Vec6::Zero();
  std::uniform_real_distribution<double> uni(-0.5 * delta_d, 0.5 * delta_d);
  Vec6 d;
  for (int i = 0; i < 6; ++i) d(i) = uni(rng);
  const double n = d.norm();
  if (n > delta_d) d *= delta_d / n;
  return d;
}

CorruptResult corrupt(const State& x, const NoiseSpec& noise, double t,
                      const HamiltonianModel& model, std::mt19937_64& rng) {
  CorruptResult out;
  out.state = x;
  out.input_noise = Eigen::VectorXd::Zero(model.input_dim());

  if (noise.input_sine) {
    const double s =
        noise.sine_amplitude * std::sin(2.0 * M_PI * noise.sine_frequency_hz * t);
    out.input_noise = Eigen::VectorXd::Constant(model.input_dim(), s);
  }

  if (noise.state_noise) {
    const double deg = M_PI / 180.0;
    const double sc = noise.state_noise_scale;
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 dp, dth, dv, dw;
    for (int i = 0; i < 3; ++i) dp(i) = sc * noise.pos_std * gauss(rng);
    for (int i = 0; i < 3; ++i) dth(i) = sc * noise.angle_std_deg * deg * gauss(rng);
    for (int i = 0; i < 3; ++i) dv(i) = sc * noise.vel_std * gauss(rng);
    for (int i = 0; i < 3; ++i) dw(i) = sc * noise.angvel_std_deg * deg * gauss(rng);

    const Vec6 zeta = x.zeta(model);
    Vec6 zeta_n;
    zeta_n.head<3>() = zeta.head<3>() + dv;
    zeta_n.tail<3>() = zeta.tail<3>() + dw;

    out.state.p = x.p + dp;
    out.state.R = project_to_so3(x.R * exp_so3(dth));
    // Momentum re-derived from the perturbed velocity estimate.
    const Mat6 Minv = model.mass_inverse(out.state.p, out.state.R);
    out.state.pm = Minv.ldlt().solve(zeta_n);
  }
  return out;
}

}  // namespace hamsafe

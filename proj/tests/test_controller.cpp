#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hamsafe/certify.hpp"
#include "hamsafe/controller.hpp"

using namespace hamsafe;

namespace {

State random_state(std::mt19937_64& rng, double pos, double ang, double mom) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  State x;
  x.p = pos * Vec3(u(rng), u(rng), u(rng));
  x.R = exp_so3(ang * Vec3(u(rng), u(rng), u(rng)));
  x.pm = mom * Vec6::NullaryExpr([&](int) { return u(rng); });
  return x;
}

}  // namespace

TEST_CASE("error state") {
  PlantParams plant;
  AnalyticModel model(plant);
  const Mat6 M = model.mass();

  State x;
  Target xd;
  const ErrorState e0 = error_state(x, xd, M);
  CHECK(e0.p_e.norm() == 0.0);
  CHECK((e0.R_e - Mat3::Identity()).norm() == 0.0);
  CHECK(e0.pm_e.norm() == 0.0);

  State x1;
  x1.p = Vec3(1, 0, 0);
  CHECK((error_state(x1, xd, M).p_e - Vec3(1, 0, 0)).norm() == 0.0);

  Target yawed;
  yawed.R = exp_so3(Vec3(0, 0, M_PI / 2));
  const ErrorState e2 = error_state(x, yawed, M);
  CHECK((e2.R_e - exp_so3(Vec3(0, 0, -M_PI / 2))).norm() < 1e-14);

  // Desired twist is transported through R_e before entering the momentum.
  Target moving;
  moving.zeta << 1, 0, 0, 0, 0, 0.5;
  const ErrorState e3 = error_state(x, moving, M);
  CHECK((e3.pm_e + M * moving.zeta).norm() < 1e-12);
}

TEST_CASE("desired hamiltonian values") {
  ControllerGains gains;
  PlantParams plant;
  AnalyticModel model(plant);
  const Mat6 Minv = model.mass_inverse(Vec3::Zero(), Mat3::Identity());

  ErrorState e;
  e.p_e = Vec3::Zero();
  e.R_e = Mat3::Identity();
  e.pm_e = Vec6::Zero();
  CHECK(desired_hamiltonian(e, gains, Minv) == 0.0);

  e.p_e = Vec3(1, 0, 0);
  CHECK(desired_hamiltonian(e, gains, Minv) == doctest::Approx(10.0));

  e.p_e.setZero();
  e.R_e = exp_so3(Vec3(0, 0, M_PI / 2));
  // (kR/2) tr(I - Re) = 25 * 2 (1 - cos 90) = 50.
  CHECK(desired_hamiltonian(e, gains, Minv) == doctest::Approx(50.0));

  // Positive away from the target.
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    e.p_e = Vec3(u(rng), u(rng), u(rng));
    e.R_e = exp_so3(Vec3(u(rng), u(rng), u(rng)));
    e.pm_e = Vec6::NullaryExpr([&](int) { return u(rng); });
    if (e.p_e.norm() + e.pm_e.norm() > 1e-9) {
      CHECK(desired_hamiltonian(e, gains, Minv) > 0.0);
    }
  }
}

TEST_CASE("shaping error matches finite differences of H_d") {
  ControllerGains gains;
  PlantParams plant;
  AnalyticModel model(plant);
  const Mat6 Minv = model.mass_inverse(Vec3::Zero(), Mat3::Identity());
  const Mat6 M = model.mass();
  std::mt19937_64 rng(2);

  for (int trial = 0; trial < 50; ++trial) {
    const State x = random_state(rng, 1.0, 0.8, 2.0);
    Target xd;
    xd.p = Vec3(0.3, -0.2, 0.5);
    const ErrorState e = error_state(x, xd, M);
    const Vec6 shaping = shaping_error(e, x.R, gains);

    // Position block: d H_d / d p through p_e, rotated into the body frame.
    const double h = 1e-6;
    Vec3 fd_p;
    for (int i = 0; i < 3; ++i) {
      ErrorState ep = e, em = e;
      ep.p_e(i) += h;
      em.p_e(i) -= h;
      fd_p(i) =
          (desired_hamiltonian(ep, gains, Minv) - desired_hamiltonian(em, gains, Minv)) /
          (2 * h);
    }
    CHECK((x.R.transpose() * fd_p - shaping.head<3>()).norm() <
          1e-5 * std::max(1.0, fd_p.norm()));

    // Rotation block: directional derivative along Re exp(s w_hat) equals
    // the shaping torque component.
    for (int i = 0; i < 3; ++i) {
      Vec3 w = Vec3::Zero();
      w(i) = 1.0;
      ErrorState ep = e, em = e;
      ep.R_e = e.R_e * exp_so3(h * w);
      em.R_e = e.R_e * exp_so3(-h * w);
      const double fd =
          (desired_hamiltonian(ep, gains, Minv) - desired_hamiltonian(em, gains, Minv)) /
          (2 * h);
      CHECK(fd == doctest::Approx(shaping.tail<3>()(i)).epsilon(1e-5));
    }
  }
}

TEST_CASE("hexarotor gravity compensation and zero matching residual") {
  ControllerGains gains;
  PlantParams plant;
  AnalyticModel model(plant);

  State x;
  Target xd;
  const ControlResult res = ida_pbc_control(x, xd, gains, model);
  Eigen::VectorXd expect = Eigen::VectorXd::Zero(6);
  expect(2) = plant.mass * plant.gravity;
  CHECK((res.u - expect).norm() < 1e-12);
  CHECK(res.u(2) == doctest::Approx(66.346));
  CHECK(res.d2.norm() == doctest::Approx(0.0));

  // Full actuation keeps d2 at zero everywhere.
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const State xr = random_state(rng, 2.0, 1.0, 3.0);
    CHECK(ida_pbc_control(xr, xd, gains, model).d2.norm() < 1e-9);
  }
}

TEST_CASE("closed-loop desired energy decreases without disturbance") {
  ControllerGains gains;
  PlantParams plant;
  AnalyticModel model(plant);
  const Mat6 Minv = model.mass_inverse(Vec3::Zero(), Mat3::Identity());
  const Mat6 M = model.mass();
  std::mt19937_64 rng(4);

  Target xd;
  xd.p = Vec3(0, 0, 0);
  const double dt = 1.0 / 120.0;
  int starts = 0;
  while (starts < 100) {
    State x = random_state(rng, 0.4, 0.5, 2.0);
    const double V0 = desired_hamiltonian(error_state(x, xd, M), gains, Minv);
    if (V0 > 4.0) continue;  // stay within the attraction region
    ++starts;
    double prev = V0;
    for (int k = 0; k < 240; ++k) {
      const Eigen::VectorXd u = ida_pbc_control(x, xd, gains, model).u;
      x = step(x, u, Vec6::Zero(), dt, model, 10);
      const double Hd = desired_hamiltonian(error_state(x, xd, M), gains, Minv);
      CHECK((Hd - prev) / dt <= 1e-6);
      prev = Hd;
    }
  }
}

TEST_CASE("control is invariant to a world-frame translation") {
  ControllerGains gains;
  PlantParams plant;
  AnalyticModel model(plant);
  std::mt19937_64 rng(5);
  const Vec3 shift(12.0, -7.0, 3.0);
  for (int i = 0; i < 20; ++i) {
    State x = random_state(rng, 1.0, 0.7, 2.0);
    Target xd;
    xd.p = Vec3(0.5, 0.1, -0.3);
    const Eigen::VectorXd u0 = ida_pbc_control(x, xd, gains, model).u;
    State xs = x;
    xs.p += shift;
    Target xds = xd;
    xds.p += shift;
    const Eigen::VectorXd u1 = ida_pbc_control(xs, xds, gains, model).u;
    CHECK((u0 - u1).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("quadrotor desired rotation") {
  PlantParams plant;
  plant.actuation = Actuation::Quadrotor;
  AnalyticModel model(plant);
  ControllerGains gains;

  // Hover force along +z with identity attitude: R* = I.
  QuadAttitudeState att;
  const Vec3 hover_force(0, 0, plant.mass * plant.gravity);
  const QuadRotationResult r0 =
      quadrotor_desired_rotation(hover_force, Mat3::Identity(), 0.0, att, 1.0 / 120.0);
  CHECK((r0.R_star - Mat3::Identity()).norm() < 1e-12);
  CHECK(r0.omega_star.norm() == 0.0);

  // Tilted force: desired z-axis follows the world force direction and the
  // frame stays orthonormal.
  const Vec3 tilted = exp_so3(Vec3(0, 10.0 * M_PI / 180.0, 0)) * hover_force;
  const QuadRotationResult r1 =
      quadrotor_desired_rotation(tilted, Mat3::Identity(), 0.0, att, 1.0 / 120.0);
  CHECK((r1.R_star.transpose() * r1.R_star - Mat3::Identity()).norm() < 1e-12);
  CHECK((r1.R_star.col(2) - tilted.normalized()).norm() < 1e-12);

  // Repeating the same R* gives omega* = 0.
  QuadAttitudeState att2;
  quadrotor_desired_rotation(hover_force, Mat3::Identity(), 0.0, att2, 1.0 / 120.0);
  const QuadRotationResult r2 =
      quadrotor_desired_rotation(hover_force, Mat3::Identity(), 0.0, att2, 1.0 / 120.0);
  CHECK(r2.omega_star.norm() == doctest::Approx(0.0));

  // Degenerate thrust holds the previous attitude.
  const QuadRotationResult r3 =
      quadrotor_desired_rotation(Vec3::Zero(), Mat3::Identity(), 0.0, att2, 1.0 / 120.0);
  CHECK((r3.R_star - r2.R_star).norm() == 0.0);

  // The realigned wrench annihilates the matching residual at every state.
  std::mt19937_64 rng(6);
  QuadAttitudeState att3;
  for (int i = 0; i < 50; ++i) {
    const State x = random_state(rng, 1.0, 0.4, 2.0);
    const QuadControlResult qc =
        quadrotor_ida_pbc_control(x, Vec3(0.5, 0, 0.5), 0.0, gains, model, att3, 1.0 / 120.0);
    CHECK(qc.b.head<2>().cwiseAbs().maxCoeff() < 1e-8);
    CHECK(qc.d2.head<2>().cwiseAbs().maxCoeff() < 1e-8);
    CHECK(qc.u.size() == 4);
  }
}

TEST_CASE("rank-deficient actuation is rejected") {
  ControllerGains gains;
  PlantParams plant;

  struct DegenerateModel : AnalyticModel {
    explicit DegenerateModel(const PlantParams& p) : AnalyticModel(p) {}
    Eigen::MatrixXd input_gain(const Vec3&, const Mat3&) const override {
      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(6, 3);
      B.col(0) << 1, 0, 0, 0, 0, 0;
      B.col(1) << 0, 1, 0, 0, 0, 0;
      B.col(2) << 1, 1, 0, 0, 0, 0;  // dependent column
      return B;
    }
  } degen(plant);

  State x;
  Target xd;
  CHECK_THROWS_AS(ida_pbc_control(x, xd, gains, degen), SingularActuation);
}

TEST_CASE("rn control reduces to PD for the double integrator") {
  const int n = 3;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);

  // At the target at rest: u = 0.
  CHECK(rn_ida_pbc_control(zero, zero, zero, 20.0, 2.0 * I, I, zero, I).norm() == 0.0);

  // Unit position error: u = -kp * q_e.
  Eigen::VectorXd q = zero;
  q(0) = 1.0;
  const Eigen::VectorXd u = rn_ida_pbc_control(q, zero, zero, 20.0, 2.0 * I, I, zero, I);
  CHECK(u(0) == doctest::Approx(-20.0));
  CHECK(u.tail(n - 1).norm() == doctest::Approx(0.0));

  // A gravity-like potential gradient enters as feedforward compensation.
  Eigen::VectorXd gU = zero;
  gU(2) = 66.346;
  const Eigen::VectorXd ug = rn_ida_pbc_control(zero, zero, zero, 20.0, 2.0 * I, I, gU, I);
  CHECK(ug(2) == doctest::Approx(66.346));
}

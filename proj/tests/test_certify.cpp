#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hamsafe/certify.hpp"
#include "hamsafe/governor.hpp"

using namespace hamsafe;

namespace {

Mat6 evaluation_mass() {
  Mat6 M = Mat6::Zero();
  M.topLeftCorner<3, 3>() = 6.77 * Mat3::Identity();
  M.bottomRightCorner<3, 3>() = Vec3(1.05, 1.05, 2.05).asDiagonal();
  return M;
}

// Independent eigenvalue route for symmetric 2x2 blocks, used to freeze the
// expected constants without going through the implementation path.
double eig2_min(double a, double b, double c) {
  const double mid = 0.5 * (a + c), rad = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  return mid - rad;
}
double eig2_max(double a, double b, double c) {
  const double mid = 0.5 * (a + c), rad = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  return mid + rad;
}

}  // namespace

TEST_CASE("q matrices at the evaluation gains") {
  ControllerGains gains;  // kp 20, kR 50, Kd 15 I, rho 3.5822e-5
  const Mat6 M = evaluation_mass();
  const QMatrices Q = q_matrices(gains, M, 2.0, 20.0);

  const double l1 = 1.0 / 6.77;
  const double l2 = 1.0 / 1.05;
  CHECK(l1 == doctest::Approx(0.14771).epsilon(1e-4));
  CHECK(l2 == doctest::Approx(0.95238).epsilon(1e-4));

  // Frozen entries from the displayed formulas.
  CHECK(Q.Q1(0, 0) == doctest::Approx(1.0 / 50.0));
  CHECK(Q.Q1(0, 1) == doctest::Approx(-gains.rho * l2));
  CHECK(Q.Q1(1, 1) == doctest::Approx(l1));
  CHECK(Q.Q2(0, 0) == doctest::Approx(1.0 / 20.0));  // max{1/20, 4/(50*2)} = 1/20
  CHECK(Q.Q2(1, 1) == doctest::Approx(l2));
  CHECK(Q.Q3(0, 0) == doctest::Approx(gains.rho * l1));
  CHECK(Q.Q3(0, 1) == doctest::Approx(-gains.rho * (15.0 * l2 * l2 + 20.0 * l2 * l2)));
  CHECK(Q.Q3(1, 1) == doctest::Approx(15.0 * l1 * l1 - 2.0 * gains.rho * l2 * l2 * 50.0));

  CHECK(lambda_min_sym2(Q.Q1) > 0.0);
  CHECK(lambda_min_sym2(Q.Q2) > 0.0);
  CHECK(lambda_min_sym2(Q.Q3) > 0.0);

  // Independent eigenvalue route agrees.
  CHECK(lambda_min_sym2(Q.Q3) ==
        doctest::Approx(eig2_min(Q.Q3(0, 0), Q.Q3(0, 1), Q.Q3(1, 1))).epsilon(1e-12));
}

TEST_CASE("degenerate and oversized rho") {
  ControllerGains gains;
  gains.rho = 0.0;
  const Mat6 M = evaluation_mass();
  const QMatrices Q = q_matrices(gains, M, 2.0, 20.0);
  CHECK(Q.Q1(0, 1) == 0.0);
  CHECK(Q.Q2(0, 1) == 0.0);
  CHECK(Q.Q3(0, 0) == 0.0);  // q1 = rho lambda1 = 0: Q3 singular
  CHECK(lambda_min_sym2(Q.Q3) <= 0.0);
  CHECK_THROWS_AS(constants(Q, gains, M, 2.0, 20.0, 0.0), CertifyError);

  // Above the Q3 cap the matrix loses definiteness and constants() reports it.
  ControllerGains big = ControllerGains{};
  big.rho = 10.0 * select_rho(big.kp, big.kR, 15.0, M, 2.0, 20.0, 1.0);
  const QMatrices Qbig = q_matrices(big, M, 2.0, 20.0);
  CHECK(lambda_min_sym2(Qbig.Q3) <= 0.0);
  CHECK_THROWS_AS(constants(Qbig, big, M, 2.0, 20.0, 0.0), CertifyError);
}

TEST_CASE("derived constants and the disturbance cap") {
  ControllerGains gains;
  const Mat6 M = evaluation_mass();
  const QMatrices Q = q_matrices(gains, M, 2.0, 20.0);

  const RobustnessConstants c0 = constants(Q, gains, M, 2.0, 20.0, 0.0);
  CHECK(c0.c1 == 0.0);
  CHECK(c0.uub_radius == 0.0);
  CHECK(c0.delta_d_cap > 0.0);
  // c2 = k1 min{kR^2 alpha (4 - alpha)/4, beta^2} = 400 k1 at these gains.
  CHECK(c0.c2 == doctest::Approx(400.0 * c0.k1).epsilon(1e-12));

  // The derived pair differs from the shipped reference (2.2050, 8.8200);
  // both are reported by the certificate rather than reconciled.
  CHECK(c0.c2 != doctest::Approx(8.82).epsilon(0.05));

  // Doubling Kd halves the first term of k_gamma exactly.
  ControllerGains doubled = gains;
  doubled.Kd = 2.0 * gains.Kd;
  const RobustnessConstants cd =
      constants(q_matrices(doubled, M, 2.0, 20.0), doubled, M, 2.0, 20.0, 0.0);
  const double first0 = c0.k_gamma - gains.rho * c0.lambda2 * c0.lambda2 / (2 * c0.lambda1);
  const double first1 = cd.k_gamma - gains.rho * cd.lambda2 * cd.lambda2 / (2 * cd.lambda1);
  CHECK(first1 == doctest::Approx(0.5 * first0).epsilon(1e-12));

  // Over-cap disturbance raises DisturbanceTooLarge carrying the cap.
  bool threw = false;
  try {
    constants(Q, gains, M, 2.0, 20.0, 2.0 * c0.delta_d_cap);
  } catch (const DisturbanceTooLarge& e) {
    threw = true;
    CHECK(e.cap == doctest::Approx(c0.delta_d_cap));
  }
  CHECK(threw);

  // Just below the cap: c1 < c2 and the ultimate bound scales linearly.
  const double delta = 0.9 * c0.delta_d_cap;
  const RobustnessConstants c1 = constants(Q, gains, M, 2.0, 20.0, delta);
  CHECK(c1.c1 < c1.c2);
  CHECK(c1.uub_radius ==
        doctest::Approx(std::sqrt(c1.k2 * c1.k_gamma / (c1.k1 * c1.k3)) * delta / 20.0));
}

TEST_CASE("select_rho respects every cap") {
  const Mat6 M = evaluation_mass();
  const double l1 = 1.0 / 6.77, l2 = 1.0 / 1.05;
  const double rho = select_rho(20.0, 50.0, 15.0, M, 2.0, 20.0);

  CHECK(rho <= std::sqrt(l1 / (50.0 * l2 * l2)));
  CHECK(rho <= std::sqrt(1.0 / (20.0 * l2)));
  CHECK(rho <= 15.0 * l1 * l1 / (2.0 * 50.0 * l2 * l2));
  const double rho_q3 =
      15.0 * l1 * l1 * l1 / (l2 * l2 * (2.0 * l1 * 50.0 + l2 * l2 * 35.0 * 35.0));
  CHECK(rho <= rho_q3);

  ControllerGains gains;
  gains.rho = rho;
  const QMatrices Q = q_matrices(gains, M, 2.0, 20.0);
  CHECK(lambda_min_sym2(Q.Q1) > 0.0);
  CHECK(lambda_min_sym2(Q.Q2) > 0.0);
  CHECK(lambda_min_sym2(Q.Q3) > 0.0);

  // With margin 1 the binding cap is the Q3 boundary: det Q3 = 0.
  ControllerGains edge;
  edge.rho = select_rho(20.0, 50.0, 15.0, M, 2.0, 20.0, 1.0);
  CHECK(edge.rho == doctest::Approx(rho_q3).epsilon(1e-12));
  const QMatrices Qe = q_matrices(edge, M, 2.0, 20.0);
  CHECK(Qe.Q3.determinant() == doctest::Approx(0.0).epsilon(1e-9));

  // Stiffer attitude gains force rho toward zero.
  double prev = select_rho(20.0, 50.0, 15.0, M, 2.0, 20.0);
  for (double kR : {100.0, 400.0, 1600.0}) {
    const double r = select_rho(20.0, kR, 15.0, M, 2.0, 20.0);
    CHECK(r < prev);
    prev = r;
  }
}

TEST_CASE("lyapunov value and sandwich bounds") {
  ControllerGains gains;
  const Mat6 M = evaluation_mass();
  const Mat6 Minv = M.inverse();
  const QMatrices Q = q_matrices(gains, M, 2.0, 20.0);
  const RobustnessConstants c = constants(Q, gains, M, 2.0, 20.0, 0.0);

  State x;
  Target xd;
  CHECK(lyapunov(x, xd, gains, Minv) == 0.0);

  // Zero momentum error removes the cross term: V = H_d exactly.
  State xp;
  xp.p = Vec3(0.4, -0.2, 0.1);
  xp.R = exp_so3(Vec3(0.1, 0.2, -0.1));
  const Mat6 Mass = Minv.inverse();
  const double V = lyapunov(xp, xd, gains, Minv);
  CHECK(V == doctest::Approx(desired_hamiltonian(error_state(xp, xd, Mass), gains, Minv)));

  // Monte-Carlo sandwich on the domain tr(I - Re) <= alpha, ||pm|| <= beta,
  // sampled directly inside the domain.
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  int kept = 0;
  for (int i = 0; i < 10000; ++i) {
    State xs;
    xs.p = Vec3(u(rng), u(rng), u(rng));
    const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
    xs.R = exp_so3((M_PI / 2.0 - 1e-6) * u01(rng) * axis);  // tr(I-Re) <= 2
    Vec6 dir = Vec6::NullaryExpr([&](int) { return u(rng); });
    xs.pm = (20.0 * u01(rng)) * dir.normalized();
    ++kept;
    const double Vx = lyapunov(xs, xd, gains, Minv);
    const Vec2 z = z_vector(xs, xd, gains, Minv);
    const double lo = 0.5 * z.dot(Q.Q1 * z);
    const double hi = 0.5 * z.dot(Q.Q2 * z);
    CHECK(Vx >= lo - 1e-9 * std::abs(lo));
    CHECK(Vx <= hi + 1e-9 * std::abs(hi));
  }
  CHECK(kept == 10000);
}

TEST_CASE("safety margin cases") {
  ControllerGains gains;
  const Mat6 M = evaluation_mass();
  const QMatrices Q = q_matrices(gains, M, 2.0, 20.0);
  RobustnessConstants c = constants(Q, gains, M, 2.0, 20.0, 0.005);

  // At the target with lots of clearance: dE = c2 + c1.
  CHECK(safety_margin(0.0, c, 1e6) == doctest::Approx(c.c2 + c.c1));

  // Boundary: V at the cap with V >= c1 gives exactly zero.
  const double cap = std::min(c.c2, c.k1 * 400.0 * 4.0);
  CHECK(safety_margin(cap, c, 2.0) == doctest::Approx(0.0));

  // Case-3 of the margin split cannot occur under sufficient clearance:
  // V <= c1 and V > min{c2, k1 kp^2 dbar^2} are incompatible when
  // dbar^2 >= uub^2.
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 20000; ++i) {
    const double dbar = c.uub_radius * (1.0 + 4.0 * u(rng));
    const double V = 3.0 * c.c2 * u(rng);
    const double capv = std::min(c.c2, c.k1 * gains.kp * gains.kp * dbar * dbar);
    const bool case3 = (V <= c.c1) && (V > capv);
    CHECK(!case3);
  }
}

TEST_CASE("rn certificates") {
  // Boundary at rho = 0: Q3 = diag(0, gamma_d) is only semidefinite.
  const Eigen::MatrixXd I1 = Eigen::MatrixXd::Identity(1, 1);
  const QMatrices Q0 = rn_q_matrices(1.0, 2.0, 0.0, I1);
  CHECK(lambda_min_sym2(Q0.Q3) == 0.0);
  CHECK_THROWS_AS(rn_constants(1.0, 2.0, 0.0, I1, 0.0), CertifyError);

  // Double integrator with the worked gains: everything positive definite.
  const Eigen::MatrixXd I3 = Eigen::MatrixXd::Identity(3, 3);
  const QMatrices Q = rn_q_matrices(1.0, 2.0, 0.1, I3);
  CHECK(lambda_min_sym2(Q.Q1) > 0.0);
  CHECK(lambda_min_sym2(Q.Q2) > 0.0);
  CHECK(lambda_min_sym2(Q.Q3) > 0.0);
  CHECK(Q.Q3(0, 0) == doctest::Approx(0.1));
  CHECK(Q.Q3(0, 1) == doctest::Approx(-0.2));
  CHECK(Q.Q3(1, 1) == doctest::Approx(1.8));

  const RnConstants c = rn_constants(1.0, 2.0, 0.1, I3, 0.0);
  CHECK(c.uub_radius == 0.0);
  CHECK(c.c1 == 0.0);

  const RnConstants cd = rn_constants(1.0, 2.0, 0.1, I3, 0.5);
  CHECK(cd.c1 > 0.0);
  CHECK(cd.uub_radius == doctest::Approx(std::sqrt(cd.k2 * cd.k_gamma / (cd.k1 * cd.k3)) * 0.5));

  // V formula and the margin without the c2 cap.
  Eigen::VectorXd q(3), pm(3), qs(3);
  q << 1, 0, 0;
  pm << 0, 0.5, 0;
  qs.setZero();
  const double V = rn_lyapunov(q, pm, qs, 1.0, 0.1, I3);
  CHECK(V == doctest::Approx(0.5 * 0.25 + 0.5 * 1.0 + 0.1 * 1.0 * 0.0));
  CHECK(rn_safety_margin(0.0, cd, 10.0) ==
        doctest::Approx(cd.k1 * 1.0 * 100.0 + cd.c1));
}

TEST_CASE("scaling the triple by gamma leaves the (q, zeta) dynamics unchanged") {
  // The learned triple carries a scale ambiguity: (gamma M, gamma B, gamma U)
  // generates the same generalized-coordinate and velocity flow under the
  // same input, and the product M^-1 B is exactly scale free.
  PlantParams plant;
  const AnalyticModel gt(plant);
  const double gamma = 2.7;

  struct ScaledModel : HamiltonianModel {
    const AnalyticModel* base = nullptr;
    double gamma = 1.0;
    int input_dim() const override { return 6; }
    Mat6 mass_inverse(const Vec3& p, const Mat3& R) const override {
      return base->mass_inverse(p, R) / gamma;
    }
    double potential(const Vec3& p, const Mat3& R) const override {
      return gamma * base->potential(p, R);
    }
    Vec12 hamiltonian_q_grad(const Vec3& p, const Mat3& R, const Vec6& pm) const override {
      return gamma * base->hamiltonian_q_grad(p, R, pm / gamma);
    }
    Eigen::MatrixXd input_gain(const Vec3& p, const Mat3& R) const override {
      return gamma * base->input_gain(p, R);
    }
  } scaled;
  scaled.base = &gt;
  scaled.gamma = gamma;

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    State x;
    x.p = Vec3(u(rng), u(rng), u(rng));
    x.R = exp_so3(0.5 * Vec3(u(rng), u(rng), u(rng)));
    const Vec6 zeta = Vec6::NullaryExpr([&](int) { return 0.5 * u(rng); });
    const Eigen::VectorXd uu = Eigen::VectorXd::NullaryExpr(6, [&](int) { return 5 * u(rng); });

    State xb = x;
    xb.pm = gt.mass() * zeta;
    State xs = x;
    xs.pm = gamma * xb.pm;

    const auto [qdot_b, pmdot_b] = vector_field(xb, uu, gt, Vec6::Zero());
    const auto [qdot_s, pmdot_s] = vector_field(xs, uu, scaled, Vec6::Zero());
    CHECK((qdot_b - qdot_s).norm() < 1e-9 * std::max(1.0, qdot_b.norm()));

    const Vec6 zetadot_b = gt.mass_inverse(x.p, x.R) * pmdot_b;
    const Vec6 zetadot_s = scaled.mass_inverse(x.p, x.R) * pmdot_s;
    CHECK((zetadot_b - zetadot_s).norm() < 1e-9 * std::max(1.0, zetadot_b.norm()));

    const Eigen::MatrixXd prod_b = gt.mass_inverse(x.p, x.R) * gt.input_gain(x.p, x.R);
    const Eigen::MatrixXd prod_s =
        scaled.mass_inverse(x.p, x.R) * scaled.input_gain(x.p, x.R);
    CHECK((prod_b - prod_s).norm() < 1e-12);
  }
}

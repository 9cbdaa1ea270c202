#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hamsafe/governor.hpp"

using namespace hamsafe;

namespace {

RobustnessConstants default_constants(double delta_d) {
  Mat6 M = Mat6::Zero();
  M.topLeftCorner<3, 3>() = 6.77 * Mat3::Identity();
  M.bottomRightCorner<3, 3>() = Vec3(1.05, 1.05, 2.05).asDiagonal();
  ControllerGains gains;
  return constants(q_matrices(gains, M, 2.0, 20.0), gains, M, 2.0, 20.0, delta_d);
}

}  // namespace

TEST_CASE("lift") {
  const Target t0 = lift(Vec3::Zero());
  CHECK(t0.p.norm() == 0.0);
  CHECK((t0.R - Mat3::Identity()).norm() == 0.0);
  CHECK(t0.zeta.norm() == 0.0);
  CHECK((lift(Vec3(1, 2, 3)).p - Vec3(1, 2, 3)).norm() == 0.0);

  // Self-consistency: zero desired energy at the lifted point.
  ControllerGains gains;
  const Mat6 Minv = Mat6::Identity();
  State x;
  x.p = Vec3(1, 2, 3);
  const ErrorState e = error_state(x, lift(Vec3(1, 2, 3)), Minv.inverse());
  CHECK(desired_hamiltonian(e, gains, Minv) == 0.0);
}

TEST_CASE("safe zone radius") {
  CHECK(safe_zone_radius(4.0) == doctest::Approx(2.0));
  CHECK(safe_zone_radius(0.0) == 0.0);
  CHECK(safe_zone_radius(-3.0) == 0.0);

  // At the lifted state far from obstacles the margin is c2 + c1.
  const RobustnessConstants c = default_constants(0.005);
  World w;  // empty, d_max 30
  State x;
  x.p = Vec3(2, 0, 1);
  const double r = safe_zone_radius(x, x.p, c, w);
  CHECK(r == doctest::Approx(std::sqrt(c.c2 + c.c1)));
}

TEST_CASE("local projected goal") {
  ReferencePath path({Vec3(0, 0, 0), Vec3(10, 0, 0)});
  // Ball of radius 2 about r(0.2) = (2,0,0) reaches x = 4, sigma* = 0.4.
  CHECK(local_projected_goal(path, 0.2, Vec3(2, 0, 0), 2.0) == doctest::Approx(0.4));
  CHECK(local_projected_goal(path, 0.2, Vec3(2, 0, 0), 0.0) == doctest::Approx(0.2));
  CHECK(local_projected_goal(path, 0.2, Vec3(2, 0, 0), 100.0) == 1.0);

  // Never behind the current parameter.
  CHECK(local_projected_goal(path, 0.9, Vec3(2, 0, 0), 2.0) == doctest::Approx(0.9));

  // Multi-segment path against a dense scan oracle.
  ReferencePath zig({Vec3(0, 0, 0), Vec3(3, 0, 0), Vec3(3, 2, 0), Vec3(6, 2, 0)});
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const double sigma_now = 0.8 * u(rng);
    const Vec3 g = zig.eval(sigma_now);
    const double radius = 0.2 + 2.5 * u(rng);
    const double got = local_projected_goal(zig, sigma_now, g, radius);

    double oracle = sigma_now;
    const int N = 20000;
    for (int k = N; k >= 0; --k) {
      const double sg = static_cast<double>(k) / N;
      if ((zig.eval(sg) - g).norm() <= radius) {
        oracle = std::max(sigma_now, sg);
        break;
      }
    }
    CHECK(std::abs(got - oracle) < 2e-4);
    CHECK(got >= sigma_now - 1e-12);
  }
}

TEST_CASE("governor step") {
  ReferencePath path({Vec3(0, 0, 0), Vec3(10, 0, 0)});
  GovernorState gov;
  gov.g = path.eval(0.0);
  gov.kg = 0.5;
  const double dt = 1.0 / 120.0;

  // sigma* = sigma: no motion.
  const GovernorState still = governor_step(gov, gov.sigma, dt, path);
  CHECK(still.sigma == 0.0);

  // One Euler step toward sigma* = 1.
  const GovernorState one = governor_step(gov, 1.0, dt, path);
  CHECK(one.sigma == doctest::Approx(0.5 / 120.0));
  CHECK((one.g - path.eval(one.sigma)).norm() == 0.0);

  // Frozen sigma* = 1: geometric approach with ratio (1 - kg dt).
  GovernorState g2 = gov;
  double gap_prev = 1.0;
  for (int k = 0; k < 100; ++k) {
    g2 = governor_step(g2, 1.0, dt, path);
    const double gap = 1.0 - g2.sigma;
    CHECK(gap == doctest::Approx(gap_prev * (1.0 - gov.kg * dt)).epsilon(1e-12));
    gap_prev = gap;
  }

  // Monotone non-decreasing under arbitrary admissible sigma*.
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GovernorState g3 = gov;
  for (int k = 0; k < 1000; ++k) {
    const double prev = g3.sigma;
    g3 = governor_step(g3, std::min(1.0, prev + u(rng)), dt, path);
    CHECK(g3.sigma >= prev);
    CHECK(g3.sigma <= 1.0);
  }
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "hamsafe/se3.hpp"

using namespace hamsafe;

namespace {

Vec3 random_vec3(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec3(u(rng), u(rng), u(rng));
}

}  // namespace

TEST_CASE("hat map") {
  CHECK(hat(Vec3::Zero()).isZero(0.0));

  Mat3 expected;
  expected << 0, -3, 2, 3, 0, -1, -2, 1, 0;
  CHECK((hat(Vec3(1, 2, 3)) - expected).norm() == doctest::Approx(0.0));

  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 w = random_vec3(rng, 5.0);
    const Mat3 S = hat(w);
    CHECK((S + S.transpose()).norm() == doctest::Approx(0.0));
    CHECK((S * w).norm() == doctest::Approx(0.0));
    const Vec3 a = random_vec3(rng, 5.0);
    CHECK((S * a - w.cross(a)).norm() == doctest::Approx(0.0));
  }
}

TEST_CASE("vee inverts hat") {
  CHECK((vee(hat(Vec3(1, 2, 3))) - Vec3(1, 2, 3)).norm() == 0.0);
  CHECK(vee(Mat3::Zero()).norm() == 0.0);

  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Vec3 w = random_vec3(rng, 10.0);
    CHECK((vee(hat(w)) - w).norm() == 0.0);
    CHECK((hat(vee(hat(w))) - hat(w)).norm() == 0.0);
  }

  // Symbolic: R = exp([0,0,a]) gives vee(R - R^T) = [0,0,2 sin a].
  const double a = 0.1;
  const Mat3 R = exp_so3(Vec3(0, 0, a));
  const Vec3 v = vee(R - R.transpose());
  CHECK(v(0) == doctest::Approx(0.0));
  CHECK(v(1) == doctest::Approx(0.0));
  CHECK(v(2) == doctest::Approx(2.0 * std::sin(a)).epsilon(1e-12));

  CHECK_THROWS_AS(vee(Mat3::Identity()), std::invalid_argument);
}

TEST_CASE("exp_so3 basics") {
  CHECK((exp_so3(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);

  Mat3 yaw90;
  yaw90 << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((exp_so3(Vec3(0, 0, M_PI / 2)) - yaw90).norm() < 1e-15);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 axis = random_vec3(rng, 1.0).normalized();
    std::uniform_real_distribution<double> ang(1e-7, M_PI - 1e-3);
    const Vec3 w = ang(rng) * axis;
    CHECK(is_rotation(exp_so3(w), 1e-12));
    CHECK((log_so3(exp_so3(w)) - w).norm() < 1e-8 * std::max(1.0, w.norm()));
  }
}

TEST_CASE("log_so3 branches") {
  CHECK(log_so3(Mat3::Identity()).norm() == 0.0);
  CHECK((log_so3(exp_so3(Vec3(0.3, 0, 0))) - Vec3(0.3, 0, 0)).norm() < 1e-12);

  // Near-pi angles use the axis-extraction branch and still round trip.
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec3 axis = random_vec3(rng, 1.0).normalized();
    const double ang = M_PI - 1e-8;
    const Mat3 R = exp_so3(ang * axis);
    const Mat3 back = exp_so3(log_so3(R));
    CHECK((back - R).norm() < 1e-6);
  }

  // Loss identity: || log(Rbar R^T) ||^2 equals the squared geodesic angle.
  for (int i = 0; i < 100; ++i) {
    const Vec3 w1 = random_vec3(rng, 1.2);
    const Vec3 w2 = random_vec3(rng, 1.2);
    const Mat3 A = exp_so3(w1), B = exp_so3(w2);
    const double cR = log_so3(A * B.transpose()).squaredNorm();
    const double angle = std::acos(std::clamp(0.5 * ((A * B.transpose()).trace() - 1.0), -1.0, 1.0));
    CHECK(cR == doctest::Approx(angle * angle).epsilon(1e-8));
  }
}

TEST_CASE("rot_error_vee") {
  CHECK(rot_error_vee(Mat3::Identity()).norm() == 0.0);

  const double th = 0.47;
  const Vec3 v = rot_error_vee(exp_so3(Vec3(0, 0, th)));
  CHECK(v(2) == doctest::Approx(std::sin(th)).epsilon(1e-12));
  CHECK(v.head<2>().norm() == doctest::Approx(0.0));

  // tr(I - Re) = 2 (1 - cos th) against the closed form.
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    std::uniform_real_distribution<double> u(0.0, M_PI - 0.1);
    const double ang = u(rng);
    const Mat3 Re = exp_so3(ang * random_vec3(rng, 1.0).normalized());
    CHECK((Mat3::Identity() - Re).trace() ==
          doctest::Approx(2.0 * (1.0 - std::cos(ang))).epsilon(1e-10));
  }

  // Bound chain on the domain tr(I - Re) <= alpha:
  //   ||e_R/kR||^2 <= tr(I - Re) <= 4/(4-alpha) ||e_R/kR||^2.
  const double alpha = 2.0;
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    std::uniform_real_distribution<double> u(0.0, M_PI);
    const Mat3 Re = exp_so3(u(rng) * random_vec3(rng, 1.0).normalized());
    const double tr = (Mat3::Identity() - Re).trace();
    if (tr > alpha) continue;
    ++checked;
    const double s2 = rot_error_vee(Re).squaredNorm();
    CHECK(s2 <= tr + 1e-12);
    CHECK(tr <= 4.0 / (4.0 - alpha) * s2 + 1e-12);
  }
  CHECK(checked > 500);
}

TEST_CASE("project_to_so3") {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Mat3 R = exp_so3(random_vec3(rng, 2.0));
    CHECK((project_to_so3(R) - R).norm() < 1e-14);
    CHECK((project_to_so3(2.0 * R) - R).norm() < 1e-13);

    Mat3 N;
    for (int r = 0; r < 3; ++r) N.row(r) = random_vec3(rng, 1.0).transpose();
    const Mat3 P = project_to_so3(R + 1e-6 * N);
    CHECK(is_rotation(P, 1e-12));
    CHECK((P - R).norm() < 1e-5);
  }
  CHECK_THROWS_AS(project_to_so3(Mat3::Zero()), std::invalid_argument);
  Mat3 refl = Mat3::Identity();
  refl(2, 2) = -1.0;
  CHECK_THROWS_AS(project_to_so3(refl), std::invalid_argument);
}

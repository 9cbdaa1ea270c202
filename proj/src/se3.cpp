#include "hamsafe/se3.hpp"

#include <cmath>
#include <stdexcept>

namespace hamsafe {

namespace {
constexpr double kSkewTol = 1e-8;
constexpr double kSmallAngle = 1e-8;
}  // namespace

Mat3 hat(const Vec3& w) {
  Mat3 S;
  S << 0.0, -w(2), w(1),
       w(2), 0.0, -w(0),
      -w(1), w(0), 0.0;
  return S;
}

Vec3 vee(const Mat3& S) {
  if ((S + S.transpose()).norm() > kSkewTol) {
    throw std::invalid_argument("vee: matrix is not skew-symmetric within tolerance");
  }
  return Vec3(0.5 * (S(2, 1) - S(1, 2)),
              0.5 * (S(0, 2) - S(2, 0)),
              0.5 * (S(1, 0) - S(0, 1)));
}

Mat3 exp_so3(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = hat(w);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * W + c * W * W;
}

Vec3 log_so3(const Mat3& R) {
  const double tr = R.trace();
  const double cos_theta = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);

  if (tr <= -1.0 + 1e-6) {
    // Angle near pi: sin(theta) ~ 0, so take the axis from the dominant
    // diagonal of B = (R + I)/2 = axis*axis^T + O(pi - theta).
    const Mat3 B = 0.5 * (R + Mat3::Identity());
    int k = 0;
    B.diagonal().maxCoeff(&k);
    Vec3 axis = B.col(k) / std::sqrt(std::max(B(k, k), 1e-12));
    axis.normalize();
    // Resolve the +-axis ambiguity with the (small) skew part when present.
    const Vec3 s = rot_error_vee(R);
    if (axis.dot(s) < 0.0) axis = -axis;
    return std::acos(cos_theta) * axis;
  }

  const double theta = std::acos(cos_theta);
  if (theta < kSmallAngle) {
    return rot_error_vee(R);
  }
  return (theta / std::sin(theta)) * rot_error_vee(R);
}

Vec3 rot_error_vee(const Mat3& Re) {
  // (Re - Re^T) / 2 is exactly skew; return its vee.
  const Mat3 S = Re - Re.transpose();
  return Vec3(0.25 * (S(2, 1) - S(1, 2)),
              0.25 * (S(0, 2) - S(2, 0)),
              0.25 * (S(1, 0) - S(0, 1)));
}

Mat3 project_to_so3(const Mat3& M) {
  if (M.determinant() <= 1e-12) {
    throw std::invalid_argument("project_to_so3: input is singular or reflective");
  }
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 D = Mat3::Identity();
    D(2, 2) = -1.0;
    R = svd.matrixU() * D * svd.matrixV().transpose();
  }
  return R;
}

bool is_rotation(const Mat3& R, double tol) {
  return (R.transpose() * R - Mat3::Identity()).norm() <= tol &&
         std::abs(R.determinant() - 1.0) <= tol;
}

}  // namespace hamsafe

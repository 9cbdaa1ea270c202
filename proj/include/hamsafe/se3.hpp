#pragma once

#include <Eigen/Dense>

namespace hamsafe {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Skew-symmetric matrix of w, so that hat(w) * a == w.cross(a).
Mat3 hat(const Vec3& w);

/// Inverse of hat. The symmetric part of S is discarded; throws if
/// ||S + S^T|| exceeds the skew tolerance (1e-8).
Vec3 vee(const Mat3& S);

/// Rodrigues exponential so(3) -> SO(3), with a Taylor branch for
/// ||w|| < 1e-8.
Mat3 exp_so3(const Vec3& w);

/// Log map SO(3) -> so(3). Angles near pi (trace close to -1) use axis
/// extraction from the dominant diagonal of (R + I)/2.
Vec3 log_so3(const Mat3& R);

/// (Re - Re^T)^vee / 2. Zero iff Re is symmetric.
Vec3 rot_error_vee(const Mat3& Re);

/// Nearest rotation in Frobenius norm (polar factor). Throws on singular
/// or reflective input (det <= 0).
Mat3 project_to_so3(const Mat3& M);

/// R^T R = I within tol and det(R) = +1 within tol.
bool is_rotation(const Mat3& R, double tol = 1e-9);

}  // namespace hamsafe

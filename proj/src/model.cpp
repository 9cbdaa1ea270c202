#include "hamsafe/model.hpp"

#include <stdexcept>

namespace hamsafe {

Eigen::MatrixXd actuation_matrix(Actuation a) {
  switch (a) {
    case Actuation::Hexarotor:
      return Eigen::MatrixXd::Identity(6, 6);
    case Actuation::Quadrotor: {
      Eigen::MatrixXd B = Eigen::MatrixXd::Zero(6, 4);
      B(2, 0) = 1.0;  // body-z thrust
      B.block<3, 3>(3, 1) = Mat3::Identity();
      return B;
    }
  }
  throw std::logic_error("actuation_matrix: unknown actuation");
}

AnalyticModel::AnalyticModel(const PlantParams& params) : params_(params) {
  if (params_.mass <= 0.0) throw std::invalid_argument("AnalyticModel: mass must be positive");
  M_ = Mat6::Zero();
  M_.topLeftCorner<3, 3>() = params_.mass * Mat3::Identity();
  M_.bottomRightCorner<3, 3>() = params_.inertia;
  Minv_ = Mat6::Zero();
  Minv_.topLeftCorner<3, 3>() = Mat3::Identity() / params_.mass;
  Minv_.bottomRightCorner<3, 3>() = params_.inertia.inverse();
  B_ = actuation_matrix(params_.actuation);
}

Mat6 AnalyticModel::mass_inverse(const Vec3&, const Mat3&) const { return Minv_; }

double AnalyticModel::potential(const Vec3& p, const Mat3&) const {
  return params_.mass * params_.gravity * p(2);
}

Vec12 AnalyticModel::hamiltonian_q_grad(const Vec3&, const Mat3&, const Vec6&) const {
  // Constant mass and U = m g e3' p: only the position block is nonzero.
  Vec12 g = Vec12::Zero();
  g(2) = params_.mass * params_.gravity;
  return g;
}

Eigen::MatrixXd AnalyticModel::input_gain(const Vec3&, const Mat3&) const { return B_; }

}  // namespace hamsafe

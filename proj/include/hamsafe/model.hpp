#pragma once

#include <memory>

#include <Eigen/Dense>

#include "hamsafe/se3.hpp"

namespace hamsafe {

enum class Actuation {
  Hexarotor,  // B = I6, u = 3D force + 3D torque
  Quadrotor,  // B = [0_{4x2} I4]^T, u = scalar body-z force + 3D torque
};

Eigen::MatrixXd actuation_matrix(Actuation a);

/// Parametric Hamiltonian triple (M^-1, U, B). The plant, learner, and
/// controller all evaluate dynamics through this interface.
class HamiltonianModel {
 public:
  virtual ~HamiltonianModel() = default;

  virtual int input_dim() const = 0;
  virtual Mat6 mass_inverse(const Vec3& p, const Mat3& R) const = 0;
  virtual double potential(const Vec3& p, const Mat3& R) const = 0;
  /// Gradient of H(q, pm) = pm' M^-1(q) pm / 2 + U(q) with respect to the
  /// generalized coordinate q = [p; r1; r2; r3] (rotation rows, row-major).
  virtual Vec12 hamiltonian_q_grad(const Vec3& p, const Mat3& R, const Vec6& pm) const = 0;
  virtual Eigen::MatrixXd input_gain(const Vec3& p, const Mat3& R) const = 0;  // 6 x m
};

struct PlantParams {
  double mass = 6.77;                         // kg
  Mat3 inertia = Vec3(1.05, 1.05, 2.05).asDiagonal();  // kg m^2
  double gravity = 9.8;                       // m/s^2
  Actuation actuation = Actuation::Hexarotor;
};

/// Closed-form ground truth: M = diag(m I, J), U = m g e3' p, constant B.
class AnalyticModel : public HamiltonianModel {
 public:
  explicit AnalyticModel(const PlantParams& params);

  int input_dim() const override { return static_cast<int>(B_.cols()); }
  Mat6 mass_inverse(const Vec3& p, const Mat3& R) const override;
  double potential(const Vec3& p, const Mat3& R) const override;
  Vec12 hamiltonian_q_grad(const Vec3& p, const Mat3& R, const Vec6& pm) const override;
  Eigen::MatrixXd input_gain(const Vec3& p, const Mat3& R) const override;

  const PlantParams& params() const { return params_; }
  Mat6 mass() const { return M_; }

 private:
  PlantParams params_;
  Mat6 M_;
  Mat6 Minv_;
  Eigen::MatrixXd B_;
};

}  // namespace hamsafe

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hamsafe/autodiff.hpp"
#include "hamsafe/model.hpp"
#include "hamsafe/plant.hpp"

namespace hamsafe {

/// One recorded trajectory: N+1 states at strictly increasing times, N
/// zero-order-hold inputs. Positions are shifted so the sequence starts at
/// the origin (translation equivariance of the learned dynamics).
struct Trajectory {
  std::vector<double> t;
  std::vector<Vec3> p;
  std::vector<Mat3> R;
  std::vector<Vec6> zeta;
  std::vector<Eigen::VectorXd> u;

  void shift_to_origin();
  size_t intervals() const { return u.size(); }
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  int input_dim = 6;

  size_t sample_count() const;
  void shift_to_origin();
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);
std::string dataset_hash(const std::string& path);  // FNV-1a over file bytes

/// Single training pair: one constant-input interval.
struct IntervalSample {
  double dt = 0.0;
  Vec3 p0, p1;
  Mat3 R0, R1;
  Vec6 zeta0, zeta1;
  Eigen::VectorXd u;
};

std::vector<IntervalSample> interval_samples(const Dataset& ds);

enum class ModelClass {
  Uav3d,   // known mass/potential; learn J^-1 (Cholesky factor net) and B net
  Planar,  // known B; learn residual mass/inertia inverses and the potential
};

struct ModelSpec {
  ModelClass cls = ModelClass::Uav3d;
  int input_dim = 6;
  std::vector<int> hidden = {32, 32};
  double spd_eps = 1e-6;

  // Uav3d knowns.
  double known_mass = 6.77;
  double gravity = 9.8;

  // Planar priors and knowns (only the pitch inertia is exercised in-plane).
  double mass_prior = 1.5 * 6.77;
  double inertia_yy_prior = 1.5 * 1.05;
  double inertia_xx_known = 1.05;
  double inertia_zz_known = 2.05;
  bool learn_potential = true;  // w' p + MLP(R) head (Planar only)
};

struct Mlp {
  std::vector<Eigen::MatrixXd> W;       // (in x out) per layer
  std::vector<Eigen::RowVectorXd> b;    // (1 x out) per layer
  int parameter_count() const;
};

struct ModelParams {
  ModelSpec spec;
  Mlp lj;     // Uav3d: 9 -> hidden -> 6 lower-triangular entries of L_J
  Mlp bnet;   // Uav3d: 9 -> hidden -> 6*m entries of B (row-major)
  Mlp l1;     // Planar: 9 -> hidden -> 1 residual sqrt mass inverse
  Mlp l2;     // Planar: 9 -> hidden -> 1 residual sqrt Jyy inverse
  Mlp umlp;   // Planar potential head (rotation part)
  Vec3 uw = Vec3::Zero();  // potential head, linear-in-position part

  int parameter_count() const;
};

ModelParams init_params(const ModelSpec& spec, std::mt19937_64& rng);

Eigen::VectorXd flatten(const ModelParams& params);
void unflatten(const Eigen::VectorXd& theta, ModelParams& params);

/// Learned Hamiltonian triple behind the shared model interface. All
/// evaluations run through the same tape builders used in training.
class LearnedModel : public HamiltonianModel {
 public:
  explicit LearnedModel(ModelParams params) : params_(std::move(params)) {}

  int input_dim() const override { return params_.spec.input_dim; }
  Mat6 mass_inverse(const Vec3& p, const Mat3& R) const override;
  double potential(const Vec3& p, const Mat3& R) const override;
  Vec12 hamiltonian_q_grad(const Vec3& p, const Mat3& R, const Vec6& pm) const override;
  Eigen::MatrixXd input_gain(const Vec3& p, const Mat3& R) const override;

  Mat6 mass(const Vec3& p, const Mat3& R) const;  // inverse of mass_inverse
  const ModelParams& params() const { return params_; }

 private:
  ModelParams params_;
};

/// Integrates the learned dynamics over one constant-input interval with
/// fixed-step RK4 (momentum form; velocities converted through the learned
/// mass at both ends). Differentiable w.r.t. the parameters when built on a
/// tape; this overload evaluates values only.
struct RolloutResult {
  Vec3 p;
  Mat3 R;
  Vec6 zeta;
};
RolloutResult model_rollout(const ModelParams& params, const Vec3& p0, const Mat3& R0,
                            const Vec6& zeta0, const Eigen::VectorXd& u, double dt,
                            int substeps);

/// Sum of squared position, log-map orientation, and velocity errors.
double trajectory_loss(const RolloutResult& pred, const Vec3& p, const Mat3& R,
                       const Vec6& zeta);

/// Batched loss over samples, and its exact gradient through the unrolled
/// solver. Gradient ordering matches flatten().
double batch_loss(const ModelParams& params, const std::vector<IntervalSample>& samples,
                  int substeps);
Eigen::VectorXd batch_loss_grad(const ModelParams& params,
                                const std::vector<IntervalSample>& samples, int substeps,
                                double* loss_out = nullptr);

struct TrainConfig {
  int iterations = 5000;
  double learning_rate = 1e-4;
  int substeps = 1;
  uint64_t seed = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> loss_curve;
};

/// Adam on the batched trajectory loss; deterministic per seed. A non-finite
/// loss halves the learning rate once and restarts; a second failure aborts.
TrainResult train(const Dataset& ds, const ModelSpec& spec, const TrainConfig& cfg);

struct InsufficientData : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Residual momentum-rate disturbance d1 on held-out intervals: observed
/// momentum change minus the learned dynamics prediction, per interval.
/// Returns the 99th percentile of ||d1||; needs at least 10 samples.
double estimate_disturbance_bound(const LearnedModel& model, const Dataset& heldout,
                                  int substeps = 10,
                                  std::vector<double>* per_sample = nullptr);

void save_checkpoint(const ModelParams& params, const std::string& path,
                     const std::string& dataset_hash_hex = "",
                     const std::string& note = "");
ModelParams load_checkpoint(const std::string& path);

}  // namespace hamsafe

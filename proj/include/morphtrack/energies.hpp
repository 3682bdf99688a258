#pragma once

#include "morphtrack/body_model.hpp"
#include "morphtrack/camera_raster.hpp"
#include "morphtrack/common.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCore>

#include <cstdint>
#include <utility>
#include <vector>

namespace morphtrack {

/// Per-frame image evidence: 2D joints (u, v, confidence) and a silhouette.
struct Observation {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> joints2d;
  SilhouetteImage silhouette;
  Camera camera;

  int num_joints() const { return static_cast<int>(joints2d.rows()); }
  /// Confidences in [0, 1]; when expected_joints >= 0 the row count must match.
  void validate(int expected_joints = -1) const;
};

/// (model joint index, observation joint index) pairs.
using JointMapping = std::vector<std::pair<int, int>>;

JointMapping identity_mapping(int num_joints);

struct EnergyWeights {
  double lambda_sil = 1.0;
  double lambda_stab = 0.05;
  double lambda_prior = 0.01;
  double lambda_arap = 5.0;
  double lambda_lap = 0.5;
  double lambda_offset = 0.05;
  double gm_sigma = 100.0;   // pixels
  double raster_tau = 1.0;   // pixels

  void validate() const;
};

/// rho(e) = e^2 / (sigma^2 + e^2).
inline double geman_mcclure(double e, double sigma) {
  const double e2 = e * e;
  return e2 / (sigma * sigma + e2);
}

struct JointEnergy {
  double value = 0.0;
  int skipped = 0;        // mapped joints behind the camera
  Points3d gradient;      // dE/d(model joints), J×3; empty unless requested
};

/// sum_i w_i rho(|proj(J_i) - j_i|). Joints behind the camera are skipped and counted.
JointEnergy e_joint(const Points3d& joints, const Observation& obs, const JointMapping& mapping, double gm_sigma,
                    bool with_gradient = false);
double e_joint(const BodyModel& model, const BodyParams& params, const Observation& obs, const JointMapping& mapping,
               double gm_sigma);

/// Mean squared per-pixel difference. gradient receives dE/d(rendered).
double e_sil(const SilhouetteImage& rendered, const SilhouetteImage& observed, ImageArray* gradient = nullptr);

struct GmmFitOptions {
  int restarts = 5;
  double tolerance = 1e-6;
  int max_iterations = 500;
  double covariance_regularization = 1e-6;
  std::uint64_t seed = 7;
};

/// Gaussian mixture over body articulation (global orientation excluded).
class GmmPrior {
 public:
  GmmPrior() = default;
  /// Throws InvariantError when a covariance is not positive definite or the
  /// mixture weights are not a positive partition of unity.
  GmmPrior(VectorXd weights, std::vector<VectorXd> means, std::vector<MatrixXd> covariances);

  int num_components() const { return static_cast<int>(weights_.size()); }
  int dim() const { return means_.empty() ? 0 : static_cast<int>(means_.front().size()); }
  const VectorXd& weights() const { return weights_; }
  const std::vector<VectorXd>& means() const { return means_; }
  const std::vector<MatrixXd>& covariances() const { return covariances_; }

  /// -log sum_j alpha_j N(x; mu_j, Sigma_j), evaluated with log-sum-exp.
  double negative_log_density(const VectorXd& x, VectorXd* gradient = nullptr) const;

  /// Expectation-maximization with k-means++ seeding; best of several restarts.
  static GmmPrior fit(const MatrixXd& samples, int num_components, const GmmFitOptions& options = {});

 private:
  VectorXd weights_;
  std::vector<VectorXd> means_;
  std::vector<MatrixXd> covariances_;
  std::vector<Eigen::LLT<MatrixXd>> cholesky_;
  VectorXd log_coefficients_;  // log alpha_j - 0.5 (d log 2pi + log det Sigma_j)
};

/// Prior on theta without its first three (global orientation) entries.
double e_prior(const VectorXd& theta, const GmmPrior& prior, VectorXd* gradient = nullptr);

/// sum_i |J_i - J_i^prev|^2.
double e_stab(const Points3d& joints, const Points3d& previous_joints, Points3d* gradient = nullptr);
double e_stab(const BodyModel& model, const BodyParams& current, const BodyParams& previous);

/// Exact nearest-neighbor queries over a fixed 3D point set.
class KdTree3 {
 public:
  explicit KdTree3(const Points3d& points);

  /// Index of the nearest point and its squared distance.
  std::pair<int, double> nearest(const Vector3d& query) const;

 private:
  struct Node {
    int point;
    int axis;
    int left;
    int right;
  };
  int build(std::vector<int>& idx, int begin, int end, int depth);
  void search(int node, const Vector3d& q, int& best, double& best_d2) const;

  const Points3d* points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

inline double squared_distance(const Points3d& a, Eigen::Index i, const Points3d& b, Eigen::Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

struct ChamferResult {
  double value = 0.0;
  VectorXd sq_a_to_b;         // per point of A, squared distance to nearest in B
  VectorXd sq_b_to_a;
  std::vector<int> nn_a_to_b;
  std::vector<int> nn_b_to_a;
};

/// mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2, with k-d tree queries.
ChamferResult chamfer(const Points3d& a, const Points3d& b);
double e_chamfer(const Points3d& a, const Points3d& b, Points3d* grad_a = nullptr);
/// Gradient of the Chamfer value with respect to A at fixed correspondences.
Points3d chamfer_gradient_a(const Points3d& a, const Points3d& b, const ChamferResult& result);

/// Uniform-weight graph Laplacian L with (L D)_i = D_i - mean_{j in N(i)} D_j.
class UniformLaplacian {
 public:
  UniformLaplacian() = default;
  UniformLaplacian(int num_vertices, const Faces& faces);
  explicit UniformLaplacian(const std::vector<std::vector<int>>& neighbors);

  const Eigen::SparseMatrix<double>& matrix() const { return matrix_; }
  /// Vertices without neighbors; their rows are zero.
  const std::vector<int>& isolated() const { return isolated_; }

 private:
  Eigen::SparseMatrix<double> matrix_;
  std::vector<int> isolated_;
};

/// sum_i |(L D)_i|^2.
double e_lap(const UniformLaplacian& laplacian, const Points3d& displacements, Points3d* gradient = nullptr);

/// sum_i |D_i|^2.
double e_offset(const Points3d& displacements, Points3d* gradient = nullptr);

}  // namespace morphtrack

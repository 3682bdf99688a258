#pragma once

#include "morphtrack/common.hpp"
#include "morphtrack/rotation.hpp"

#include <utility>
#include <vector>

namespace morphtrack {

class BodyModel;

/// Pose (axis-angle per joint, radians), shape coefficients and global
/// translation (meters).
struct BodyParams {
  VectorXd theta;
  VectorXd beta;
  Vector3d trans = Vector3d::Zero();

  static BodyParams zero(const BodyModel& model);

  /// Axis-angle of joint j.
  Vector3d joint_rotation(int j) const { return theta.segment<3>(3 * j); }

  /// Throws DimensionError on size mismatch, NumericError on non-finite values.
  void validate(const BodyModel& model) const;
};

struct SkinInfluence {
  int joint;
  double weight;
};

/// Skinned statistical body: rest mesh, skinning weights, joint regressor,
/// kinematic tree and linear blendshapes. Immutable after construction.
class BodyModel {
 public:
  BodyModel() = default;

  /// Validates every invariant and throws InvariantError naming the field.
  /// shape_dirs is (3N)×B with row 3i+c for vertex i, coordinate c.
  /// pose_dirs, when non-empty, is (3N)×9(J-1) acting on vec(R_j - I).
  BodyModel(Points3d rest_vertices, Faces faces, MatrixXd skin_weights, MatrixXd joint_regressor,
            std::vector<int> kinematic_parents, MatrixXd shape_dirs = MatrixXd(),
            MatrixXd pose_dirs = MatrixXd());

  int num_vertices() const { return static_cast<int>(rest_vertices_.rows()); }
  int num_joints() const { return static_cast<int>(parents_.size()); }
  int num_betas() const { return static_cast<int>(shape_dirs_.cols()); }
  bool has_pose_dirs() const { return pose_dirs_.size() > 0; }

  const Points3d& rest_vertices() const { return rest_vertices_; }
  const Faces& faces() const { return faces_; }
  const MatrixXd& skin_weights() const { return skin_weights_; }
  const MatrixXd& joint_regressor() const { return joint_regressor_; }
  const std::vector<int>& kinematic_parents() const { return parents_; }
  const MatrixXd& shape_dirs() const { return shape_dirs_; }
  const MatrixXd& pose_dirs() const { return pose_dirs_; }

  /// Nonzero skinning weights per vertex.
  const std::vector<std::vector<SkinInfluence>>& influences() const { return influences_; }

  /// Rest joints of the shaped canonical mesh, J(beta) = regressor (T_mu + B_s(beta)).
  Points3d rest_joints(const VectorXd& beta) const;
  const Points3d& mean_rest_joints() const { return rest_joints_; }
  /// (3J)×B: derivative of the rest joints with respect to beta.
  const MatrixXd& joint_shape_dirs() const { return joint_shape_dirs_; }

 private:
  void validate() const;

  Points3d rest_vertices_;
  Faces faces_;
  MatrixXd skin_weights_;
  MatrixXd joint_regressor_;
  std::vector<int> parents_;
  MatrixXd shape_dirs_;
  MatrixXd pose_dirs_;

  Points3d rest_joints_;
  MatrixXd joint_shape_dirs_;
  std::vector<std::vector<SkinInfluence>> influences_;
};

/// Maps a row-major N×3 array to a flat 3N vector (row 3i+c).
inline Eigen::Map<const VectorXd> flatten(const Points3d& p) {
  return Eigen::Map<const VectorXd>(p.data(), p.size());
}
inline Eigen::Map<VectorXd> flatten(Points3d& p) { return Eigen::Map<VectorXd>(p.data(), p.size()); }

/// T_mu + B_s(beta) + B_p(theta) + D.
Points3d canonical_mesh(const BodyModel& model, const BodyParams& params, const Points3d& displacements);

/// Linear blend skinning of canonical vertices followed by the global translation.
Points3d skin(const BodyModel& model, const BodyParams& params, const Points3d& canonical);

/// Posed 3D joints. Displacements never move the skeleton.
Points3d joints3d(const BodyModel& model, const BodyParams& params);

template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// World transforms of the kinematic chain (without the global translation).
template <typename Scalar>
struct SkeletonPose {
  std::vector<Mat3<Scalar>> rotation;      // world rotation of joint j
  std::vector<Vec3<Scalar>> joint;         // posed joint position
  std::vector<Vec3<Scalar>> skin_offset;   // joint - rotation * rest joint
  std::vector<Mat3<Scalar>> local_rotation;
};

template <typename Scalar>
SkeletonPose<Scalar> forward_kinematics(const BodyModel& model, const VecX<Scalar>& theta,
                                        const VecX<Scalar>& beta) {
  const int nj = model.num_joints();
  const auto& parents = model.kinematic_parents();
  const MatrixXd& jdirs = model.joint_shape_dirs();
  const Points3d& j0 = model.mean_rest_joints();

  std::vector<Vec3<Scalar>> rest(static_cast<size_t>(nj));
  for (int j = 0; j < nj; ++j) {
    for (int c = 0; c < 3; ++c) {
      Scalar v = Scalar(j0(j, c));
      for (int b = 0; b < beta.size(); ++b) v += Scalar(jdirs(3 * j + c, b)) * beta[b];
      rest[static_cast<size_t>(j)][c] = v;
    }
  }

  SkeletonPose<Scalar> pose;
  pose.rotation.resize(static_cast<size_t>(nj));
  pose.joint.resize(static_cast<size_t>(nj));
  pose.skin_offset.resize(static_cast<size_t>(nj));
  pose.local_rotation.resize(static_cast<size_t>(nj));
  for (int j = 0; j < nj; ++j) {
    const auto uj = static_cast<size_t>(j);
    const Vec3<Scalar> a = theta.template segment<3>(3 * j);
    pose.local_rotation[uj] = rodrigues<Scalar>(a);
    const int p = parents[uj];
    if (p < 0) {
      pose.rotation[uj] = pose.local_rotation[uj];
      pose.joint[uj] = rest[uj];
    } else {
      const auto up = static_cast<size_t>(p);
      pose.rotation[uj] = pose.rotation[up] * pose.local_rotation[uj];
      pose.joint[uj] = pose.joint[up] + pose.rotation[up] * (rest[uj] - rest[up]);
    }
    pose.skin_offset[uj] = pose.joint[uj] - pose.rotation[uj] * rest[uj];
  }
  return pose;
}

/// Per-joint blend transforms of a fixed pose; skinning is linear in the
/// canonical vertices for fixed pose.
struct LinearSkinning {
  std::vector<Matrix3d> rotation;
  std::vector<Vector3d> offset;
  Vector3d trans = Vector3d::Zero();

  static LinearSkinning from_params(const BodyModel& model, const BodyParams& params);

  Points3d apply(const BodyModel& model, const Points3d& canonical) const;
  /// Gradient with respect to canonical vertices given the gradient with
  /// respect to posed vertices.
  Points3d apply_transpose(const BodyModel& model, const Points3d& d_vertices) const;
};

struct BodyGradient {
  VectorXd theta;
  VectorXd beta;
  Vector3d trans = Vector3d::Zero();
  Points3d canonical;
};

/// Posed body with reverse-mode gradients. Joint-level transforms are
/// differentiated in forward mode, vertex-level skinning in reverse mode.
class DifferentiableBody {
 public:
  DifferentiableBody(const BodyModel& model, const BodyParams& params, const Points3d& displacements);

  const Points3d& canonical() const { return canonical_; }
  const Points3d& vertices() const { return vertices_; }
  const Points3d& joints() const { return joints_; }
  const LinearSkinning& skinning() const { return skinning_; }

  /// d_vertices: dE/d(posed vertices); d_joints: dE/d(posed joints), either may be empty.
  BodyGradient backward(const Points3d& d_vertices, const Points3d& d_joints) const;

 private:
  const BodyModel* model_;
  BodyParams params_;
  Points3d canonical_;
  Points3d vertices_;
  Points3d joints_;
  LinearSkinning skinning_;
  // Jacobians with respect to the packed vector [theta; beta].
  std::vector<Eigen::Matrix<double, 9, Eigen::Dynamic>> d_rotation_;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> d_offset_;
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> d_joint_;
  std::vector<std::array<Matrix3d, 3>> d_local_rotation_;
};

/// Vertex adjacency from the triangle list.
std::vector<std::vector<int>> vertex_adjacency(int num_vertices, const Faces& faces);

/// Area-weighted vertex normals.
Points3d vertex_normals(const Points3d& vertices, const Faces& faces);

}  // namespace morphtrack

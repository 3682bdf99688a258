#include "morphtrack/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace morphtrack {

namespace {

using AdScalar = Eigen::AutoDiffScalar<VectorXd>;

std::string field_error(const std::string& field, const std::string& what) {
  return "body model field '" + field + "': " + what;
}

}  // namespace

BodyParams BodyParams::zero(const BodyModel& model) {
  BodyParams p;
  p.theta = VectorXd::Zero(3 * model.num_joints());
  p.beta = VectorXd::Zero(model.num_betas());
  p.trans.setZero();
  return p;
}

void BodyParams::validate(const BodyModel& model) const {
  if (theta.size() != 3 * model.num_joints()) {
    throw DimensionError("theta has " + std::to_string(theta.size()) + " values, expected " +
                         std::to_string(3 * model.num_joints()));
  }
  if (beta.size() != model.num_betas()) {
    throw DimensionError("beta has " + std::to_string(beta.size()) + " values, expected " +
                         std::to_string(model.num_betas()));
  }
  if (!theta.allFinite()) throw NumericError("theta contains non-finite values");
  if (!beta.allFinite()) throw NumericError("beta contains non-finite values");
  if (!trans.allFinite()) throw NumericError("trans contains non-finite values");
}

BodyModel::BodyModel(Points3d rest_vertices, Faces faces, MatrixXd skin_weights,
                     MatrixXd joint_regressor, std::vector<int> kinematic_parents,
                     MatrixXd shape_dirs, MatrixXd pose_dirs)
    : rest_vertices_(std::move(rest_vertices)),
      faces_(std::move(faces)),
      skin_weights_(std::move(skin_weights)),
      joint_regressor_(std::move(joint_regressor)),
      parents_(std::move(kinematic_parents)),
      shape_dirs_(std::move(shape_dirs)),
      pose_dirs_(std::move(pose_dirs)) {
  if (shape_dirs_.size() == 0) shape_dirs_.resize(3 * rest_vertices_.rows(), 0);
  validate();

  const int n = num_vertices();
  const int nj = num_joints();
  const int nb = num_betas();

  rest_joints_ = joint_regressor_ * rest_vertices_;
  joint_shape_dirs_.resize(3 * nj, nb);
  for (int b = 0; b < nb; ++b) {
    Points3d dir(n, 3);
    flatten(dir) = shape_dirs_.col(b);
    Points3d jdir = joint_regressor_ * dir;
    joint_shape_dirs_.col(b) = flatten(jdir);
  }

  influences_.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < nj; ++j) {
      if (skin_weights_(i, j) != 0.0) influences_[static_cast<size_t>(i)].push_back({j, skin_weights_(i, j)});
    }
  }
}

void BodyModel::validate() const {
  const auto n = rest_vertices_.rows();
  const auto nj = static_cast<Eigen::Index>(parents_.size());
  if (n < 1) throw InvariantError(field_error("rest_vertices", "empty"));
  if (!rest_vertices_.allFinite()) throw InvariantError(field_error("rest_vertices", "non-finite value"));
  if (nj < 1) throw InvariantError(field_error("kinematic_parents", "no joints"));

  for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      if (faces_(f, c) < 0 || faces_(f, c) >= n) {
        throw InvariantError(field_error("faces", "face " + std::to_string(f) + " references vertex " +
                                                      std::to_string(faces_(f, c)) + " out of range"));
      }
    }
  }
  std::vector<char> touched(static_cast<size_t>(n), 0);
  for (Eigen::Index f = 0; f < faces_.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int a = faces_(f, c);
      const int b = faces_(f, (c + 1) % 3);
      if (a == b) continue;
      touched[static_cast<size_t>(a)] = 1;
      touched[static_cast<size_t>(b)] = 1;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!touched[static_cast<size_t>(i)]) {
      throw InvariantError(field_error("faces", "vertex " + std::to_string(i) + " has no incident edge"));
    }
  }

  if (skin_weights_.rows() != n || skin_weights_.cols() != nj) {
    throw InvariantError(field_error("skin_weights", "expected " + std::to_string(n) + "x" + std::to_string(nj)));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!skin_weights_.row(i).allFinite() || skin_weights_.row(i).minCoeff() < 0.0) {
      throw InvariantError(field_error("skin_weights", "vertex " + std::to_string(i) + " has a negative or non-finite weight"));
    }
    const double sum = skin_weights_.row(i).sum();
    if (std::abs(sum - 1.0) > 1e-6) {
      std::ostringstream os;
      os << "weights of vertex " << i << " sum to " << sum << ", expected 1";
      throw InvariantError(field_error("skin_weights", os.str()));
    }
  }

  if (joint_regressor_.rows() != nj || joint_regressor_.cols() != n) {
    throw InvariantError(field_error("joint_regressor", "expected " + std::to_string(nj) + "x" + std::to_string(n)));
  }
  if (!joint_regressor_.allFinite()) throw InvariantError(field_error("joint_regressor", "non-finite value"));

  if (parents_[0] >= 0) throw InvariantError(field_error("kinematic_parents", "joint 0 must be the root (negative parent)"));
  for (Eigen::Index j = 1; j < nj; ++j) {
    const int p = parents_[static_cast<size_t>(j)];
    if (p < 0 || p >= j) {
      throw InvariantError(field_error("kinematic_parents", "joint " + std::to_string(j) + " has parent " +
                                                                std::to_string(p) + "; parents must precede children"));
    }
  }

  if (shape_dirs_.rows() != 3 * n) {
    throw InvariantError(field_error("shape_dirs", "expected " + std::to_string(3 * n) + " rows (N x 3 x B)"));
  }
  if (!shape_dirs_.allFinite()) throw InvariantError(field_error("shape_dirs", "non-finite value"));
  if (pose_dirs_.size() > 0 && (pose_dirs_.rows() != 3 * n || pose_dirs_.cols() != 9 * (nj - 1))) {
    throw InvariantError(field_error("pose_dirs", "expected " + std::to_string(3 * n) + "x" + std::to_string(9 * (nj - 1))));
  }
}

Points3d BodyModel::rest_joints(const VectorXd& beta) const {
  Points3d joints = rest_joints_;
  if (beta.size() > 0) flatten(joints) += joint_shape_dirs_ * beta;
  return joints;
}

Points3d canonical_mesh(const BodyModel& model, const BodyParams& params, const Points3d& displacements) {
  if (displacements.rows() != model.num_vertices()) {
    throw DimensionError("displacements have " + std::to_string(displacements.rows()) + " rows, expected " +
                         std::to_string(model.num_vertices()));
  }
  if (params.beta.size() != model.num_betas()) throw DimensionError("beta size mismatch");
  Points3d out = model.rest_vertices() + displacements;
  if (model.num_betas() > 0) flatten(out) += model.shape_dirs() * params.beta;
  if (model.has_pose_dirs()) {
    if (params.theta.size() != 3 * model.num_joints()) throw DimensionError("theta size mismatch");
    VectorXd feat(9 * (model.num_joints() - 1));
    for (int j = 1; j < model.num_joints(); ++j) {
      const Matrix3d r = rodrigues<double>(params.joint_rotation(j)) - Matrix3d::Identity();
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) feat[9 * (j - 1) + 3 * a + b] = r(a, b);
    }
    flatten(out) += model.pose_dirs() * feat;
  }
  return out;
}

LinearSkinning LinearSkinning::from_params(const BodyModel& model, const BodyParams& params) {
  params.validate(model);
  const SkeletonPose<double> pose = forward_kinematics<double>(model, params.theta, params.beta);
  LinearSkinning s;
  s.rotation = pose.rotation;
  s.offset = pose.skin_offset;
  s.trans = params.trans;
  return s;
}

Points3d LinearSkinning::apply(const BodyModel& model, const Points3d& canonical) const {
  const int n = model.num_vertices();
  if (canonical.rows() != n) throw DimensionError("canonical vertex count mismatch");
  Points3d out(n, 3);
  const auto& infl = model.influences();
  for (int i = 0; i < n; ++i) {
    const Vector3d c = canonical.row(i).transpose();
    Vector3d v = Vector3d::Zero();
    for (const auto& [j, w] : infl[static_cast<size_t>(i)]) {
      v += w * (rotation[static_cast<size_t>(j)] * c + offset[static_cast<size_t>(j)]);
    }
    out.row(i) = (v + trans).transpose();
  }
  return out;
}

Points3d LinearSkinning::apply_transpose(const BodyModel& model, const Points3d& d_vertices) const {
  const int n = model.num_vertices();
  Points3d out(n, 3);
  const auto& infl = model.influences();
  for (int i = 0; i < n; ++i) {
    Matrix3d blend = Matrix3d::Zero();
    for (const auto& [j, w] : infl[static_cast<size_t>(i)]) blend += w * rotation[static_cast<size_t>(j)];
    out.row(i) = d_vertices.row(i) * blend;
  }
  return out;
}

Points3d skin(const BodyModel& model, const BodyParams& params, const Points3d& canonical) {
  return LinearSkinning::from_params(model, params).apply(model, canonical);
}

Points3d joints3d(const BodyModel& model, const BodyParams& params) {
  params.validate(model);
  const SkeletonPose<double> pose = forward_kinematics<double>(model, params.theta, params.beta);
  Points3d out(model.num_joints(), 3);
  for (int j = 0; j < model.num_joints(); ++j) {
    out.row(j) = (pose.joint[static_cast<size_t>(j)] + params.trans).transpose();
  }
  return out;
}

DifferentiableBody::DifferentiableBody(const BodyModel& model, const BodyParams& params,
                                       const Points3d& displacements)
    : model_(&model), params_(params) {
  params.validate(model);
  const int nj = model.num_joints();
  const int nb = model.num_betas();
  const int np = 3 * nj + nb;

  canonical_ = canonical_mesh(model, params, displacements);

  VecX<AdScalar> theta(3 * nj);
  VecX<AdScalar> beta(nb);
  for (int k = 0; k < 3 * nj; ++k) theta[k] = AdScalar(params.theta[k], np, k);
  for (int b = 0; b < nb; ++b) beta[b] = AdScalar(params.beta[b], np, 3 * nj + b);
  const SkeletonPose<AdScalar> pose = forward_kinematics<AdScalar>(model, theta, beta);

  const auto unj = static_cast<size_t>(nj);
  skinning_.rotation.resize(unj);
  skinning_.offset.resize(unj);
  skinning_.trans = params.trans;
  d_rotation_.assign(unj, Eigen::Matrix<double, 9, Eigen::Dynamic>(9, np));
  d_offset_.assign(unj, Eigen::Matrix<double, 3, Eigen::Dynamic>(3, np));
  d_joint_.assign(unj, Eigen::Matrix<double, 3, Eigen::Dynamic>(3, np));
  joints_.resize(nj, 3);
  for (size_t j = 0; j < unj; ++j) {
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        const AdScalar& r = pose.rotation[j](a, b);
        skinning_.rotation[j](a, b) = r.value();
        d_rotation_[j].row(3 * a + b) = r.derivatives().transpose();
      }
      skinning_.offset[j][a] = pose.skin_offset[j][a].value();
      d_offset_[j].row(a) = pose.skin_offset[j][a].derivatives().transpose();
      joints_(static_cast<Eigen::Index>(j), a) = pose.joint[j][a].value() + params.trans[a];
      d_joint_[j].row(a) = pose.joint[j][a].derivatives().transpose();
    }
  }
  if (model.has_pose_dirs()) {
    d_local_rotation_.resize(unj);
    for (size_t j = 1; j < unj; ++j) {
      d_local_rotation_[j] = rodrigues_jacobian(params.joint_rotation(static_cast<int>(j))).d_rotation;
    }
  }
  vertices_ = skinning_.apply(model, canonical_);
}

BodyGradient DifferentiableBody::backward(const Points3d& d_vertices, const Points3d& d_joints) const {
  const BodyModel& model = *model_;
  const int n = model.num_vertices();
  const int nj = model.num_joints();
  const int nb = model.num_betas();
  const int np = 3 * nj + nb;
  const auto unj = static_cast<size_t>(nj);

  BodyGradient g;
  g.trans.setZero();
  g.canonical = Points3d::Zero(n, 3);
  std::vector<Matrix3d> g_rot(unj, Matrix3d::Zero());
  std::vector<Vector3d> g_off(unj, Vector3d::Zero());

  if (d_vertices.size() > 0) {
    if (d_vertices.rows() != n) throw DimensionError("vertex gradient has wrong row count");
    const auto& infl = model.influences();
    for (int i = 0; i < n; ++i) {
      const Vector3d gi = d_vertices.row(i).transpose();
      const Vector3d ci = canonical_.row(i).transpose();
      Matrix3d blend = Matrix3d::Zero();
      for (const auto& [j, w] : infl[static_cast<size_t>(i)]) {
        const auto uj = static_cast<size_t>(j);
        g_rot[uj].noalias() += w * gi * ci.transpose();
        g_off[uj] += w * gi;
        blend += w * skinning_.rotation[uj];
      }
      g.canonical.row(i) = gi.transpose() * blend;
      g.trans += gi;
    }
  }

  VectorXd gp = VectorXd::Zero(np);
  for (size_t j = 0; j < unj; ++j) {
    Eigen::Matrix<double, 9, 1> vr;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) vr[3 * a + b] = g_rot[j](a, b);
    gp.noalias() += d_rotation_[j].transpose() * vr;
    gp.noalias() += d_offset_[j].transpose() * g_off[j];
  }
  if (d_joints.size() > 0) {
    if (d_joints.rows() != nj) throw DimensionError("joint gradient has wrong row count");
    for (size_t j = 0; j < unj; ++j) {
      const Vector3d gj = d_joints.row(static_cast<Eigen::Index>(j)).transpose();
      gp.noalias() += d_joint_[j].transpose() * gj;
      g.trans += gj;
    }
  }

  g.theta = gp.head(3 * nj);
  g.beta = gp.tail(nb);
  if (nb > 0) g.beta.noalias() += model.shape_dirs().transpose() * flatten(g.canonical);
  if (model.has_pose_dirs()) {
    const VectorXd g_feat = model.pose_dirs().transpose() * flatten(g.canonical);
    for (int j = 1; j < nj; ++j) {
      const auto& dr = d_local_rotation_[static_cast<size_t>(j)];
      for (int m = 0; m < 3; ++m) {
        double acc = 0.0;
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) acc += g_feat[9 * (j - 1) + 3 * a + b] * dr[static_cast<size_t>(m)](a, b);
        g.theta[3 * j + m] += acc;
      }
    }
  }
  return g;
}

std::vector<std::vector<int>> vertex_adjacency(int num_vertices, const Faces& faces) {
  std::vector<std::set<int>> sets(static_cast<size_t>(num_vertices));
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const int a = faces(f, c);
      const int b = faces(f, (c + 1) % 3);
      if (a == b) continue;
      sets[static_cast<size_t>(a)].insert(b);
      sets[static_cast<size_t>(b)].insert(a);
    }
  }
  std::vector<std::vector<int>> adj(static_cast<size_t>(num_vertices));
  for (size_t i = 0; i < sets.size(); ++i) adj[i].assign(sets[i].begin(), sets[i].end());
  return adj;
}

Points3d vertex_normals(const Points3d& vertices, const Faces& faces) {
  Points3d normals = Points3d::Zero(vertices.rows(), 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const Vector3d a = vertices.row(faces(f, 0)).transpose();
    const Vector3d b = vertices.row(faces(f, 1)).transpose();
    const Vector3d c = vertices.row(faces(f, 2)).transpose();
    const Vector3d n = (b - a).cross(c - a);
    for (int k = 0; k < 3; ++k) normals.row(faces(f, k)) += n.transpose();
  }
  for (Eigen::Index i = 0; i < normals.rows(); ++i) {
    const double len = normals.row(i).norm();
    if (len > 0) normals.row(i) /= len;
  }
  return normals;
}

}  // namespace morphtrack

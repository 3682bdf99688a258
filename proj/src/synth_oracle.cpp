#include "morphtrack/synth_oracle.hpp"

#include <Eigen/LU>

#include <cmath>
#include <functional>
#include <limits>
#include <random>

namespace morphtrack {

namespace {

struct Part {
  int start;       // joint at the tube start
  int end;         // joint at the tube end
  double r_start;  // radii as fractions of the body height
  double r_end;
};

struct RigBuild {
  std::vector<Vector3d> verts;
  std::vector<Eigen::Vector3i> faces;
  std::vector<std::vector<std::pair<int, double>>> weights;
  std::vector<bool> smooth;
  std::vector<int> part;
  std::vector<Vector3d> radial;        // girth direction times radius
  std::vector<std::vector<int>> rings;  // vertex ids per ring
  std::vector<Vector3d> ring_center;
};

void add_tube(RigBuild& rb, int part_index, const Vector3d& a, const Vector3d& b, double ra, double rb_, int segments,
              int rings, const std::function<std::vector<std::pair<int, double>>(double)>& weight_at) {
  const Vector3d axis = (b - a).normalized();
  Vector3d ref = std::abs(axis.z()) < 0.9 ? Vector3d::UnitZ() : Vector3d::UnitX();
  const Vector3d e1 = axis.cross(ref).normalized();
  const Vector3d e2 = axis.cross(e1);
  std::vector<int> first_ring, last_ring;
  for (int i = 0; i < rings; ++i) {
    const double s = static_cast<double>(i) / (rings - 1);
    const Vector3d c = a + s * (b - a);
    const double r = ra + s * (rb_ - ra);
    std::vector<int> ring;
    for (int k = 0; k < segments; ++k) {
      const double phi = 2.0 * M_PI * k / segments;
      const Vector3d dir = std::cos(phi) * e1 + std::sin(phi) * e2;
      ring.push_back(static_cast<int>(rb.verts.size()));
      rb.verts.push_back(c + r * dir);
      rb.weights.push_back(weight_at(s));
      rb.smooth.push_back(i > 0 && i < rings - 1);
      rb.part.push_back(part_index);
      rb.radial.push_back(r * dir);
    }
    rb.rings.push_back(ring);
    rb.ring_center.push_back(c);
    if (i == 0) first_ring = ring;
    if (i == rings - 1) last_ring = ring;
    if (i > 0) {
      const auto& prev = rb.rings[rb.rings.size() - 2];
      for (int k = 0; k < segments; ++k) {
        const int k1 = (k + 1) % segments;
        rb.faces.emplace_back(prev[k], prev[k1], ring[k1]);
        rb.faces.emplace_back(prev[k], ring[k1], ring[k]);
      }
    }
  }
  const int apex0 = static_cast<int>(rb.verts.size());
  rb.verts.push_back(a - 0.5 * ra * axis);
  rb.weights.push_back(weight_at(0.0));
  rb.smooth.push_back(false);
  rb.part.push_back(part_index);
  rb.radial.push_back(Vector3d::Zero());
  const int apex1 = static_cast<int>(rb.verts.size());
  rb.verts.push_back(b + 0.5 * rb_ * axis);
  rb.weights.push_back(weight_at(1.0));
  rb.smooth.push_back(false);
  rb.part.push_back(part_index);
  rb.radial.push_back(Vector3d::Zero());
  for (int k = 0; k < segments; ++k) {
    const int k1 = (k + 1) % segments;
    rb.faces.emplace_back(apex0, first_ring[k1], first_ring[k]);
    rb.faces.emplace_back(apex1, last_ring[k], last_ring[k1]);
  }
}

ToyBody assemble(const RigBuild& rb, const std::vector<Vector3d>& joints, const std::vector<int>& parents,
                 std::vector<std::string> names, const std::vector<int>& part_bone, int num_betas, bool pose_dirs,
                 int root_joint) {
  const int n = static_cast<int>(rb.verts.size());
  const int nj = static_cast<int>(joints.size());
  Points3d rest(n, 3);
  for (int i = 0; i < n; ++i) rest.row(i) = rb.verts[static_cast<size_t>(i)].transpose();
  Faces faces(static_cast<Eigen::Index>(rb.faces.size()), 3);
  for (size_t f = 0; f < rb.faces.size(); ++f) faces.row(static_cast<Eigen::Index>(f)) = rb.faces[f].transpose();
  MatrixXd w = MatrixXd::Zero(n, nj);
  for (int i = 0; i < n; ++i) {
    for (const auto& [j, v] : rb.weights[static_cast<size_t>(i)]) w(i, j) += v;
  }
  MatrixXd reg = MatrixXd::Zero(nj, n);
  for (int j = 0; j < nj; ++j) {
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t r = 0; r < rb.rings.size(); ++r) {
      const double d = (rb.ring_center[r] - joints[static_cast<size_t>(j)]).norm();
      if (d < best_d) {
        best_d = d;
        best = r;
      }
    }
    const auto& ring = rb.rings[best];
    for (int v : ring) reg(j, v) = 1.0 / static_cast<double>(ring.size());
  }
  MatrixXd shape(3 * n, num_betas);
  const Vector3d root = joints[static_cast<size_t>(root_joint)];
  for (int i = 0; i < n; ++i) {
    if (num_betas > 0) shape.block<3, 1>(3 * i, 0) = 0.1 * (rb.verts[static_cast<size_t>(i)] - root);
    if (num_betas > 1) shape.block<3, 1>(3 * i, 1) = 0.2 * rb.radial[static_cast<size_t>(i)];
  }
  MatrixXd pdirs;
  if (pose_dirs && nj > 1) {
    pdirs = MatrixXd::Zero(3 * n, 9 * (nj - 1));
    for (int i = 0; i < n; ++i) {
      const int bone = part_bone[static_cast<size_t>(rb.part[static_cast<size_t>(i)])];
      if (bone == 0) continue;
      for (int c = 0; c < 3; ++c) {
        for (int m = 0; m < 9; ++m) pdirs(3 * i + c, 9 * (bone - 1) + m) = 0.002 * std::sin(0.7 * i + 1.3 * c + 2.1 * m);
      }
    }
  }
  ToyBody out{BodyModel(rest, faces, w, reg, parents, shape, pdirs), std::move(names), rb.smooth, rb.part, part_bone};
  return out;
}

}  // namespace

ToyBody make_toy_body(const ToyBodyOptions& options) {
  if (options.ring_segments < 3 || options.rings_per_part < 2) throw ConfigError("toy body needs >= 3 segments and >= 2 rings");
  if (options.num_betas < 0 || options.num_betas > 2) throw ConfigError("toy body supports 0, 1 or 2 shape coefficients");
  if (!(options.height > 0.0)) throw ConfigError("toy body height must be positive");
  const double h = options.height;
  const std::vector<Vector3d> joints = {
      {0.0, 0.0, 0.0},           {0.0, -0.18 * h, 0.0},     {0.0, -0.33 * h, 0.0},     {0.0, -0.50 * h, 0.0},
      {0.12 * h, -0.31 * h, 0.0}, {0.20 * h, -0.17 * h, 0.0}, {0.28 * h, -0.03 * h, 0.0},
      {-0.12 * h, -0.31 * h, 0.0}, {-0.20 * h, -0.17 * h, 0.0}, {-0.28 * h, -0.03 * h, 0.0},
      {0.06 * h, 0.02 * h, 0.0},  {0.07 * h, 0.24 * h, 0.0},  {0.07 * h, 0.45 * h, 0.0},
      {-0.06 * h, 0.02 * h, 0.0}, {-0.07 * h, 0.24 * h, 0.0}, {-0.07 * h, 0.45 * h, 0.0}};
  const std::vector<int> parents = {-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14};
  std::vector<std::string> names = {"pelvis",     "spine",    "neck",    "head_top", "l_shoulder", "l_elbow",
                                    "l_hand",     "r_shoulder", "r_elbow", "r_hand",   "l_hip",      "l_knee",
                                    "l_foot",     "r_hip",    "r_knee",  "r_foot"};
  const std::vector<Part> parts = {{0, 1, 0.085, 0.09}, {1, 2, 0.09, 0.07},  {2, 3, 0.055, 0.05},
                                   {4, 5, 0.032, 0.028}, {5, 6, 0.028, 0.022}, {7, 8, 0.032, 0.028},
                                   {8, 9, 0.028, 0.022}, {10, 11, 0.045, 0.038}, {11, 12, 0.038, 0.03},
                                   {13, 14, 0.045, 0.038}, {14, 15, 0.038, 0.03}};
  std::vector<bool> has_child(joints.size(), false);
  for (const auto& p : parts) has_child[static_cast<size_t>(p.start)] = true;

  RigBuild rb;
  std::vector<int> part_bone;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const Part& p = parts[pi];
    const int bone = p.start;
    const int parent = parents[static_cast<size_t>(bone)];
    const int next = has_child[static_cast<size_t>(p.end)] ? p.end : -1;
    part_bone.push_back(bone);
    auto weight_at = [=](double s) {
      std::vector<std::pair<int, double>> w;
      double own = 1.0;
      if (parent >= 0 && s < 0.2) {
        const double wp = 0.5 * (1.0 - s / 0.2);
        w.emplace_back(parent, wp);
        own -= wp;
      }
      if (next >= 0 && s > 0.8) {
        const double wn = 0.5 * (s - 0.8) / 0.2;
        w.emplace_back(next, wn);
        own -= wn;
      }
      w.emplace_back(bone, own);
      return w;
    };
    add_tube(rb, static_cast<int>(pi), joints[static_cast<size_t>(p.start)], joints[static_cast<size_t>(p.end)],
             p.r_start * h, p.r_end * h, options.ring_segments, options.rings_per_part, weight_at);
  }
  return assemble(rb, joints, parents, std::move(names), part_bone, options.num_betas, options.pose_dirs, 0);
}

ToyBody make_toy_arm(int ring_segments, int rings_per_part, double radius) {
  const std::vector<Vector3d> joints = {{0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}, {2.0, 0.0, 0.0}};
  const std::vector<int> parents = {-1, 0, 1};
  RigBuild rb;
  add_tube(rb, 0, joints[0], joints[1], radius, radius, ring_segments, rings_per_part,
           [](double) { return std::vector<std::pair<int, double>>{{0, 1.0}}; });
  add_tube(rb, 1, joints[1], joints[2], radius, radius, ring_segments, rings_per_part,
           [](double) { return std::vector<std::pair<int, double>>{{1, 1.0}}; });
  return assemble(rb, joints, parents, {"shoulder", "elbow", "hand"}, {0, 1}, 1, false, 0);
}

void NoiseModel::validate() const {
  if (!(joint_sigma >= 0.0) || !(pose_init_sigma >= 0.0)) throw ConfigError("noise levels must be nonnegative");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("dropout must lie in [0, 1]");
}

void MotionSpec::validate(const BodyModel& model) const {
  if (poses.empty()) throw ConfigError("motion needs at least one frame");
  for (const auto& p : poses) p.validate(model);
  if (!graph_rotations.empty() && graph_rotations.size() != poses.size()) throw ConfigError("graph rotations per frame mismatch");
  if (!graph_translations.empty() && graph_translations.size() != poses.size()) {
    throw ConfigError("graph translations per frame mismatch");
  }
  noise.validate();
}

namespace {

void set_axis(BodyParams& b, int joint, int axis, double value) { b.theta[3 * joint + axis] = value; }

BodyParams walk_pose(const ToyBody& body, double phi, double leg, double arm, double knee, double oop) {
  BodyParams b = BodyParams::zero(body.model);
  const double s = std::sin(phi), c = std::cos(phi);
  set_axis(b, 10, 2, leg * s);
  set_axis(b, 13, 2, -leg * s);
  set_axis(b, 11, 2, -knee * 0.5 * (1.0 + std::sin(phi - M_PI / 2)));
  set_axis(b, 14, 2, knee * 0.5 * (1.0 + std::sin(phi + M_PI / 2)));
  set_axis(b, 4, 2, -arm * s);
  set_axis(b, 7, 2, arm * s);
  set_axis(b, 5, 2, 0.25 + 0.1 * s);
  set_axis(b, 8, 2, -0.25 + 0.1 * s);
  set_axis(b, 1, 2, 0.05 * std::sin(2.0 * phi));
  set_axis(b, 2, 2, -0.04 * std::sin(2.0 * phi));
  set_axis(b, 10, 0, oop * c);
  set_axis(b, 13, 0, -oop * c);
  set_axis(b, 1, 1, oop * s);
  set_axis(b, 0, 1, 0.5 * oop * s);
  return b;
}

}  // namespace

MotionSpec walk_motion(const ToyBody& body, const WalkOptions& options) {
  if (options.frames < 1) throw ConfigError("walk needs at least one frame");
  if (!(options.period > 0.0)) throw ConfigError("walk period must be positive");
  MotionSpec spec;
  const double height = body.model.rest_vertices().col(1).maxCoeff() - body.model.rest_vertices().col(1).minCoeff();
  for (int f = 0; f < options.frames; ++f) {
    const double phi = options.phase + 2.0 * M_PI * f / options.period;
    BodyParams b = walk_pose(body, phi, options.leg_swing, options.arm_swing, options.knee_bend, options.out_of_plane);
    b.trans = Vector3d(options.step * (f - 0.5 * (options.frames - 1)), 0.03 * height, options.depth);
    spec.poses.push_back(b);
  }
  return spec;
}

MatrixXd walk_pose_corpus(const ToyBody& body, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI), amp(0.7, 1.3);
  std::normal_distribution<double> jitter(0.0, 0.02);
  const BodyModel& model = body.model;
  const int nj = model.num_joints();
  std::vector<bool> leaf(static_cast<size_t>(nj), true);
  for (int j = 1; j < nj; ++j) leaf[static_cast<size_t>(model.kinematic_parents()[static_cast<size_t>(j)])] = false;
  MatrixXd out(samples, 3 * nj - 3);
  for (int s = 0; s < samples; ++s) {
    const double phi = phase(rng);
    BodyParams b = walk_pose(body, phi, 0.35 * amp(rng), 0.3 * amp(rng), 0.4 * amp(rng), 0.05 * amp(rng));
    for (int j = 1; j < nj; ++j) {
      if (leaf[static_cast<size_t>(j)]) continue;
      for (int a = 0; a < 3; ++a) b.theta[3 * j + a] += jitter(rng);
    }
    out.row(s) = b.theta.tail(3 * nj - 3).transpose();
  }
  return out;
}

Camera toy_camera(const ToyBodyOptions& options, double depth, int size) {
  Camera cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = 0.75 * size * depth / options.height;
  cam.cx = cam.cy = 0.5 * size;
  return cam;
}

SyntheticSequence generate_sequence(const SubjectTemplate& subject, const MotionSpec& spec, const Camera& camera) {
  const BodyModel& model = subject.model();
  spec.validate(model);
  camera.validate();
  const DeformGraph& graph = subject.graph();
  SyntheticSequence seq;
  for (int f = 0; f < spec.frames(); ++f) {
    FrameState state = FrameState::initial(model, graph);
    state.body = spec.poses[static_cast<size_t>(f)];
    if (!spec.graph_rotations.empty()) state.graph_rotations = spec.graph_rotations[static_cast<size_t>(f)];
    if (!spec.graph_translations.empty()) state.graph_translations = spec.graph_translations[static_cast<size_t>(f)];
    const Points3d verts = subject.posed_vertices(state);
    for (Eigen::Index i = 0; i < verts.rows(); ++i) {
      if (!(verts(i, 2) > 0.0)) throw InvariantError("frame " + std::to_string(f) + ": body leaves the camera frustum");
    }
    const Points2d uv = project(camera, verts);
    if (uv.col(0).minCoeff() < 0.0 || uv.col(1).minCoeff() < 0.0 || uv.col(0).maxCoeff() > camera.width ||
        uv.col(1).maxCoeff() > camera.height) {
      throw InvariantError("frame " + std::to_string(f) + ": body leaves the camera frustum");
    }

    std::mt19937_64 rng(spec.noise.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(f));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::bernoulli_distribution drop(spec.noise.dropout);

    Observation obs;
    obs.camera = camera;
    SilhouetteImage mask = threshold(soft_silhouette(camera, verts, model.faces(), 0.25), 0.5);
    if (spec.noise.mask_radius != 0) mask = morph_disc(mask, spec.noise.mask_radius);
    obs.silhouette = std::move(mask);
    const Points2d j2 = project(camera, joints3d(model, state.body));
    obs.joints2d.resize(j2.rows(), 3);
    for (Eigen::Index j = 0; j < j2.rows(); ++j) {
      double u = j2(j, 0), v = j2(j, 1);
      if (spec.noise.joint_sigma > 0.0) {
        u += spec.noise.joint_sigma * gauss(rng);
        v += spec.noise.joint_sigma * gauss(rng);
      }
      const bool dropped = spec.noise.dropout > 0.0 && drop(rng);
      obs.joints2d.row(j) << u, v, dropped ? 0.0 : 1.0;
    }
    BodyParams init = state.body;
    if (spec.noise.pose_init_sigma > 0.0) {
      for (Eigen::Index k = 0; k < init.theta.size(); ++k) init.theta[k] += spec.noise.pose_init_sigma * gauss(rng);
    }
    seq.observations.push_back(std::move(obs));
    seq.states.push_back(state);
    seq.vertices.push_back(verts);
    seq.pose_inits.emplace_back(init);
  }
  return seq;
}

VectorXd brute_nearest_squared(const Points3d& a, const Points3d& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InvariantError("nearest-neighbor query on an empty point set");
  VectorXd out(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double dx = a(i, 0) - b(j, 0);
      const double dy = a(i, 1) - b(j, 1);
      const double dz = a(i, 2) - b(j, 2);
      const double d2 = dx * dx + dy * dy + dz * dz;
      if (d2 < best) best = d2;
    }
    out[i] = best;
  }
  return out;
}

VectorXd brute_nearest(const Points3d& a, const Points3d& b) { return brute_nearest_squared(a, b).cwiseSqrt(); }

double brute_chamfer(const Points3d& a, const Points3d& b) {
  const VectorXd ab = brute_nearest_squared(a, b);
  const VectorXd ba = brute_nearest_squared(b, a);
  double sa = 0.0, sb = 0.0;
  for (Eigen::Index i = 0; i < ab.size(); ++i) sa += ab[i];
  for (Eigen::Index i = 0; i < ba.size(); ++i) sb += ba[i];
  return sa / static_cast<double>(ab.size()) + sb / static_cast<double>(ba.size());
}

double eval_chamfer_cm(const Points3d& predicted, const Points3d& ground_truth) {
  return 100.0 * std::sqrt(0.5 * e_chamfer(predicted, ground_truth));
}

Points3d inflate(const Points3d& vertices, const Faces& faces, double amount, const std::vector<bool>& mask) {
  const Points3d normals = vertex_normals(vertices, faces);
  Points3d out = vertices;
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    if (!mask.empty() && !mask[static_cast<size_t>(i)]) continue;
    out.row(i) += amount * normals.row(i);
  }
  return out;
}

double direct_gmm_density(const GmmPrior& prior, const VectorXd& x) {
  const double d = static_cast<double>(x.size());
  double p = 0.0;
  for (int j = 0; j < prior.num_components(); ++j) {
    const MatrixXd& cov = prior.covariances()[static_cast<size_t>(j)];
    const VectorXd diff = x - prior.means()[static_cast<size_t>(j)];
    const double quad = diff.dot(cov.inverse() * diff);
    p += prior.weights()[j] * std::pow(2.0 * M_PI, -0.5 * d) / std::sqrt(cov.determinant()) * std::exp(-0.5 * quad);
  }
  return p;
}

SilhouetteImage hard_rasterize(const Camera& camera, const Points3d& vertices, const Faces& faces) {
  SilhouetteImage img(camera.width, camera.height, 0.0);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    Vector2d p[3];
    bool visible = true;
    for (int k = 0; k < 3; ++k) {
      const Vector3d v = vertices.row(faces(f, k)).transpose();
      if (!(v.z() > 0.0)) visible = false;
      else p[k] = project_point<double>(camera, v);
    }
    if (!visible) continue;
    auto edge = [](const Vector2d& a, const Vector2d& b, const Vector2d& q) {
      return (b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x());
    };
    for (int r = 0; r < camera.height; ++r) {
      for (int c = 0; c < camera.width; ++c) {
        const Vector2d q(c + 0.5, r + 0.5);
        const double e0 = edge(p[0], p[1], q), e1 = edge(p[1], p[2], q), e2 = edge(p[2], p[0], q);
        if ((e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0)) img(r, c) = 1.0;
      }
    }
  }
  return img;
}

}  // namespace morphtrack

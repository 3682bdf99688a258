#include "morphtrack/synth_oracle.hpp"

#include <random>

namespace morphtrack {

namespace {

struct Rng {
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double normal(double sigma = 1.0) { return sigma * std::normal_distribution<double>(0.0, 1.0)(gen); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen); }
  VectorXd normal_vector(Eigen::Index n, double sigma) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(sigma);
    return v;
  }
  Points3d normal_points(Eigen::Index n, double sigma) {
    Points3d p(n, 3);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) p(i, c) = normal(sigma);
    return p;
  }
  std::mt19937_64 gen;
};

// Packs (theta, beta, trans) into one vector and back.
VectorXd pack_body(const BodyParams& b) {
  VectorXd x(b.theta.size() + b.beta.size() + 3);
  x << b.theta, b.beta, b.trans;
  return x;
}

BodyParams unpack_body(const BodyModel& m, const VectorXd& x) {
  BodyParams b;
  const int nt = 3 * m.num_joints(), nb = m.num_betas();
  b.theta = x.head(nt);
  b.beta = x.segment(nt, nb);
  b.trans = x.segment<3>(nt + nb);
  return b;
}

VectorXd pack_gradient(const BodyGradient& g) {
  VectorXd x(g.theta.size() + g.beta.size() + 3);
  x << g.theta, g.beta, g.trans;
  return x;
}

VectorXd flat(const Points3d& p) { return flatten(p); }

Points3d unflat(const VectorXd& x) { return Eigen::Map<const Points3d>(x.data(), x.size() / 3, 3); }

struct Checker {
  GradientCheck result;
  Checker(std::string name, double tol) {
    result.name = std::move(name);
    result.tolerance = tol;
  }
  void add(const VectorXd& analytic, const VectorXd& numeric) {
    result.max_relative_error = std::max(result.max_relative_error, relative_error(analytic, numeric, 1e-12));
    ++result.configurations;
  }
};

BodyParams random_body(Rng& rng, const BodyModel& m, double depth, double theta_sigma) {
  BodyParams b = BodyParams::zero(m);
  b.theta = rng.normal_vector(b.theta.size(), theta_sigma);
  b.beta = rng.normal_vector(b.beta.size(), 0.5);
  b.trans = Vector3d(rng.normal(0.02), rng.normal(0.02), depth + rng.normal(0.02));
  return b;
}

Camera small_camera(int size, double f) {
  Camera c;
  c.width = c.height = size;
  c.fx = c.fy = f;
  c.cx = c.cy = 0.5 * size;
  return c;
}

// Arm rig framed in a small image, used wherever rendering is involved.
struct ArmScene {
  ToyBody arm = make_toy_arm(4, 2, 0.25);
  Camera camera = small_camera(32, 48.0);
  double depth = 5.0;
  BodyParams random_state(Rng& rng) const {
    BodyParams b = BodyParams::zero(arm.model);
    b.theta = rng.normal_vector(b.theta.size(), 0.3);
    b.beta = rng.normal_vector(b.beta.size(), 0.2);
    b.trans = Vector3d(-1.0 + rng.normal(0.05), rng.normal(0.05), depth + rng.normal(0.1));
    return b;
  }
};

GmmPrior random_prior(Rng& rng, int d, int k) {
  VectorXd w(k);
  std::vector<VectorXd> means;
  std::vector<MatrixXd> covs;
  for (int j = 0; j < k; ++j) {
    w[j] = rng.uniform(0.5, 1.5);
    means.push_back(rng.normal_vector(d, 0.3));
    MatrixXd a(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) a(r, c) = rng.normal(0.3);
    covs.push_back(a * a.transpose() + 0.05 * MatrixXd::Identity(d, d));
  }
  w /= w.sum();
  return GmmPrior(w, means, covs);
}

Observation random_observation(Rng& rng, const Camera& cam, const Points2d& projected, const SilhouetteImage& mask) {
  Observation obs;
  obs.camera = cam;
  obs.silhouette = mask;
  obs.joints2d.resize(projected.rows(), 3);
  for (Eigen::Index j = 0; j < projected.rows(); ++j) {
    obs.joints2d.row(j) << projected(j, 0) + rng.normal(8.0), projected(j, 1) + rng.normal(8.0), rng.uniform(0.0, 1.0);
  }
  return obs;
}

}  // namespace

std::vector<GradientCheck> run_gradient_suite(const GradientSuiteOptions& options) {
  const int n = options.configurations;
  if (n < 1) throw ConfigError("gradient suite needs at least one configuration");
  Rng rng(options.seed);
  std::vector<GradientCheck> out;
  constexpr double kParamStep = 1e-5;

  ToyBodyOptions body_opt;
  body_opt.ring_segments = 5;
  body_opt.rings_per_part = 3;
  body_opt.pose_dirs = true;
  const ToyBody toy = make_toy_body(body_opt);
  const BodyModel& tm = toy.model;
  const Camera toy_cam = toy_camera(body_opt, 1.0, 64);
  const ArmScene scene;
  const BodyModel& am = scene.arm.model;

  {
    Checker ck("e_joint", 1e-3);
    for (int c = 0; c < n; ++c) {
      const BodyParams b = random_body(rng, tm, 1.0, 0.3);
      const Observation obs = random_observation(rng, toy_cam, project(toy_cam, joints3d(tm, b)), SilhouetteImage());
      const JointMapping map = identity_mapping(tm.num_joints());
      const double sigma = rng.uniform(5.0, 20.0);
      const DifferentiableBody db(tm, b, Points3d::Zero(tm.num_vertices(), 3));
      const JointEnergy je = e_joint(db.joints(), obs, map, sigma, true);
      const VectorXd g = pack_gradient(db.backward(Points3d(), je.gradient));
      const VectorXd fd = fd_gradient(
          [&](const VectorXd& x) { return e_joint(tm, unpack_body(tm, x), obs, map, sigma); }, pack_body(b), kParamStep);
      ck.add(g, fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("e_sil", 1e-3);
    for (int c = 0; c < n; ++c) {
      const BodyParams b = scene.random_state(rng);
      const Points3d v = skin(am, b, canonical_mesh(am, b, Points3d::Zero(am.num_vertices(), 3)));
      const BodyParams other = scene.random_state(rng);
      const Points3d vo = skin(am, other, canonical_mesh(am, other, Points3d::Zero(am.num_vertices(), 3)));
      const SilhouetteImage observed = threshold(soft_silhouette(scene.camera, vo, am.faces(), 0.25));
      const double tau = rng.uniform(1.0, 2.0);
      const SoftRender render = render_soft_silhouette(scene.camera, v, am.faces(), tau);
      ImageArray d_image;
      e_sil(render.image, observed, &d_image);
      const Points3d g = soft_silhouette_backward(scene.camera, v, am.faces(), render, d_image);
      // 1e-4 px: wider steps straddle the distance kinks on triangle medial axes
      const double step = 1e-4 * b.trans.z() / scene.camera.fx;
      const VectorXd fd = fd_gradient(
          [&](const VectorXd& x) { return e_sil(soft_silhouette(scene.camera, unflat(x), am.faces(), tau), observed); },
          flat(v), step);
      ck.add(flat(g), fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("e_prior", 1e-3);
    for (int c = 0; c < n; ++c) {
      const int d = 6;
      const GmmPrior prior = random_prior(rng, d, 3);
      const VectorXd theta = rng.normal_vector(d + 3, 0.3);
      VectorXd g;
      e_prior(theta, prior, &g);
      const VectorXd fd = fd_gradient([&](const VectorXd& x) { return e_prior(x, prior); }, theta, kParamStep);
      ck.add(g, fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("e_stab", 1e-4);
    for (int c = 0; c < n; ++c) {
      const BodyParams b = random_body(rng, tm, 1.0, 0.3);
      const BodyParams prev = random_body(rng, tm, 1.0, 0.3);
      const Points3d prev_joints = joints3d(tm, prev);
      const DifferentiableBody db(tm, b, Points3d::Zero(tm.num_vertices(), 3));
      Points3d gj;
      e_stab(db.joints(), prev_joints, &gj);
      const VectorXd g = pack_gradient(db.backward(Points3d(), gj));
      const VectorXd fd = fd_gradient(
          [&](const VectorXd& x) { return e_stab(joints3d(tm, unpack_body(tm, x)), prev_joints); }, pack_body(b),
          kParamStep);
      ck.add(g, fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("e_chamfer", 1e-3);
    for (int c = 0; c < n; ++c) {
      const Points3d a = rng.normal_points(30, 1.0);
      const Points3d b = rng.normal_points(40, 1.0);
      Points3d g;
      e_chamfer(a, b, &g);
      const VectorXd fd = fd_gradient([&](const VectorXd& x) { return e_chamfer(unflat(x), b); }, flat(a), kParamStep);
      ck.add(flat(g), fd);
    }
    out.push_back(ck.result);
  }

  const UniformLaplacian lap(tm.num_vertices(), tm.faces());
  {
    Checker ck("e_lap", 1e-3);
    for (int c = 0; c < n; ++c) {
      const Points3d d = rng.normal_points(tm.num_vertices(), 0.01);
      Points3d g;
      e_lap(lap, d, &g);
      const VectorXd fd = fd_gradient([&](const VectorXd& x) { return e_lap(lap, unflat(x)); }, flat(d), kParamStep);
      ck.add(flat(g), fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("e_offset", 1e-4);
    for (int c = 0; c < n; ++c) {
      const Points3d d = rng.normal_points(50, 0.01);
      Points3d g;
      e_offset(d, &g);
      const VectorXd fd = fd_gradient([&](const VectorXd& x) { return e_offset(unflat(x)); }, flat(d), kParamStep);
      ck.add(flat(g), fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("e_arap", 1e-4);
    for (int c = 0; c < n; ++c) {
      const Points3d pts = rng.normal_points(40, 1.0);
      GraphBuildOptions go;
      go.num_nodes = 5 + c % 6;
      const DeformGraph graph = build_graph(pts, Faces(), go);
      const int k = graph.num_nodes();
      const Points3d rot = rng.normal_points(k, 0.5);
      const Points3d trans = rng.normal_points(k, 0.3);
      GraphGradient gg;
      arap_energy(graph, rot, trans, &gg);
      VectorXd x(6 * k), g(6 * k);
      x << flat(rot), flat(trans);
      g << flat(gg.rotations), flat(gg.translations);
      const VectorXd fd = fd_gradient(
          [&](const VectorXd& p) {
            return arap_energy(graph, unflat(p.head(3 * k)), unflat(p.tail(3 * k)));
          },
          x, kParamStep);
      ck.add(g, fd);
    }
    out.push_back(ck.result);
  }

  GraphBuildOptions arm_graph_opt;
  arm_graph_opt.num_nodes = 4;
  const DeformGraph arm_graph = build_graph(am.rest_vertices(), am.faces(), arm_graph_opt);

  {
    Checker ck("registration_objective", 1e-3);
    EnergyWeights w;
    w.lambda_lap = 0.5;
    w.lambda_offset = 0.05;
    for (int c = 0; c < n; ++c) {
      const BodyParams b = scene.random_state(rng);
      const Points3d scan = skin(am, b, canonical_mesh(am, b, rng.normal_points(am.num_vertices(), 0.02))) +
                            rng.normal_points(am.num_vertices(), 0.01);
      const RegistrationObjective obj(am, arm_graph, b, scan, w);
      const VectorXd x = rng.normal_vector(obj.size(), 0.05);
      VectorXd g;
      obj(x, &g);
      const VectorXd fd = fd_gradient([&](const VectorXd& p) { return obj(p, nullptr); }, x, kParamStep);
      ck.add(g, fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("pose_objective", 1e-3);
    const SubjectTemplate subject(am, arm_graph);
    const JointMapping map = identity_mapping(am.num_joints());
    for (int c = 0; c < n; ++c) {
      FrameState state = FrameState::initial(am, arm_graph);
      state.body = scene.random_state(rng);
      state.frozen.beta = c % 2 == 1;
      state.graph_translations = rng.normal_points(arm_graph.num_nodes(), 0.02);
      const BodyParams target = scene.random_state(rng);
      const Points3d tv = skin(am, target, canonical_mesh(am, target, Points3d::Zero(am.num_vertices(), 3)));
      const SilhouetteImage mask = threshold(soft_silhouette(scene.camera, tv, am.faces(), 0.25));
      const Observation obs = random_observation(rng, scene.camera, project(scene.camera, joints3d(am, target)), mask);
      const GmmPrior prior = random_prior(rng, 3 * am.num_joints() - 3, 2);
      const Points3d prev = joints3d(am, scene.random_state(rng));
      EnergyWeights w;
      w.gm_sigma = 10.0;
      w.lambda_stab = 0.5;
      w.lambda_prior = 0.1;
      FrameInputs in;
      in.observation = &obs;
      in.mapping = &map;
      in.prior = &prior;
      in.previous_joints = &prev;
      const PoseObjective obj(subject, in, w, state, rng.uniform(1.0, 2.0));
      const VectorXd x = obj.pack(state.body);
      VectorXd g;
      obj(x, &g);
      const VectorXd fd = fd_gradient([&](const VectorXd& p) { return obj(p, nullptr); }, x, kParamStep);
      ck.add(g, fd);
    }
    out.push_back(ck.result);
  }

  {
    Checker ck("surface_objective", 1e-3);
    const SubjectTemplate subject(am, arm_graph);
    for (int c = 0; c < n; ++c) {
      FrameState state = FrameState::initial(am, arm_graph);
      state.body = scene.random_state(rng);
      const BodyParams target = scene.random_state(rng);
      const Points3d tv = skin(am, target, canonical_mesh(am, target, Points3d::Zero(am.num_vertices(), 3)));
      Observation obs;
      obs.camera = scene.camera;
      obs.silhouette = threshold(soft_silhouette(scene.camera, tv, am.faces(), 0.25));
      EnergyWeights w;
      w.lambda_arap = rng.uniform(0.1, 5.0);
      const SurfaceObjective obj(subject, obs, w, state, rng.uniform(1.0, 2.0));
      const VectorXd x = obj.pack(rng.normal_points(arm_graph.num_nodes(), 0.1), rng.normal_points(arm_graph.num_nodes(), 0.05));
      VectorXd g;
      obj(x, &g);
      const VectorXd fd = fd_gradient([&](const VectorXd& p) { return obj(p, nullptr); }, x, kParamStep);
      ck.add(g, fd);
    }
    out.push_back(ck.result);
  }
  return out;
}

}  // namespace morphtrack

#include "morphtrack/stages.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace morphtrack {

FrameState FrameState::initial(const BodyModel& model, const DeformGraph& graph) {
  FrameState s;
  s.body = BodyParams::zero(model);
  s.graph_rotations = Points3d::Zero(graph.num_nodes(), 3);
  s.graph_translations = Points3d::Zero(graph.num_nodes(), 3);
  return s;
}

SubjectTemplate::SubjectTemplate(const BodyModel& model, const DeformGraph& graph, Points3d base_displacements)
    : model_(&model), graph_(&graph), base_(std::move(base_displacements)) {
  if (base_.rows() == 0) base_ = Points3d::Zero(model.num_vertices(), 3);
  if (base_.rows() != model.num_vertices()) throw DimensionError("template displacements do not match the model");
  if (graph.num_vertices() != model.num_vertices()) throw DimensionError("deformation graph does not match the model");
}

Points3d SubjectTemplate::displacements(const Points3d& rotations, const Points3d& translations) const {
  return base_ + morphtrack::displacements(*graph_, rotations, translations, model_->rest_vertices());
}

Points3d SubjectTemplate::displacements(const FrameState& state) const {
  return displacements(state.graph_rotations, state.graph_translations);
}

Points3d SubjectTemplate::posed_vertices(const FrameState& state) const {
  return skin(*model_, state.body, canonical_mesh(*model_, state.body, displacements(state)));
}

bool untrackable(const Observation& obs) {
  bool any_joint = false;
  for (Eigen::Index i = 0; i < obs.joints2d.rows(); ++i) {
    if (obs.joints2d(i, 2) > 0.0) any_joint = true;
  }
  const bool any_pixel = !obs.silhouette.empty() && obs.silhouette.count_above(0.5) > 0;
  return !any_joint && !any_pixel;
}

// ---------------------------------------------------------------------------
// Pose stage

PoseObjective::PoseObjective(const SubjectTemplate& subject, const FrameInputs& inputs, const EnergyWeights& weights,
                             const FrameState& state, double tau)
    : subject_(&subject), inputs_(inputs), weights_(weights), state_(state), tau_(tau) {
  if (inputs_.observation == nullptr || inputs_.mapping == nullptr) throw InvariantError("pose stage needs an observation and a joint mapping");
  const BodyModel& model = subject.model();
  displacements_ = subject.displacements(state);
  if (!state.frozen.theta) {
    theta_offset_ = size_;
    size_ += 3 * model.num_joints();
  }
  if (!state.frozen.beta) {
    beta_offset_ = size_;
    size_ += model.num_betas();
  }
  if (!state.frozen.trans) {
    trans_offset_ = size_;
    size_ += 3;
  }
}

VectorXd PoseObjective::pack(const BodyParams& body) const {
  VectorXd x(size_);
  if (theta_offset_ >= 0) x.segment(theta_offset_, body.theta.size()) = body.theta;
  if (beta_offset_ >= 0) x.segment(beta_offset_, body.beta.size()) = body.beta;
  if (trans_offset_ >= 0) x.segment<3>(trans_offset_) = body.trans;
  return x;
}

BodyParams PoseObjective::unpack(const VectorXd& x) const {
  BodyParams b = state_.body;
  if (theta_offset_ >= 0) b.theta = x.segment(theta_offset_, b.theta.size());
  if (beta_offset_ >= 0) b.beta = x.segment(beta_offset_, b.beta.size());
  if (trans_offset_ >= 0) b.trans = x.segment<3>(trans_offset_);
  return b;
}

VectorXd PoseObjective::step_scale(const OptimizerConfig& config) const {
  VectorXd s = VectorXd::Ones(size_);
  if (trans_offset_ >= 0) s.segment<3>(trans_offset_).setConstant(config.translation_step_size / config.step_size);
  if (beta_offset_ >= 0) {
    s.segment(beta_offset_, subject_->model().num_betas()).setConstant(config.beta_step_size / config.step_size);
  }
  return s;
}

std::vector<int> PoseObjective::blocks() const {
  std::vector<int> b(static_cast<size_t>(size_), 0);
  auto mark = [&](int offset, int len, int id) {
    for (int i = 0; i < len; ++i) b[static_cast<size_t>(offset + i)] = id;
  };
  if (beta_offset_ >= 0) mark(beta_offset_, subject_->model().num_betas(), 1);
  if (trans_offset_ >= 0) mark(trans_offset_, 3, 2);
  return b;
}

double PoseObjective::operator()(const VectorXd& x, VectorXd* gradient) const { return evaluate(x, gradient, nullptr); }

PoseTerms PoseObjective::terms(const VectorXd& x) const {
  PoseTerms t;
  evaluate(x, nullptr, &t);
  return t;
}

double PoseObjective::evaluate(const VectorXd& x, VectorXd* gradient, PoseTerms* terms) const {
  const BodyModel& model = subject_->model();
  const Observation& obs = *inputs_.observation;
  const BodyParams body = unpack(x);
  if (!body.theta.allFinite() || !body.beta.allFinite() || !body.trans.allFinite()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const DifferentiableBody db(model, body, displacements_);
  const bool want = gradient != nullptr;

  PoseTerms t;
  JointEnergy je = e_joint(db.joints(), obs, *inputs_.mapping, weights_.gm_sigma, want);
  t.joint = je.value;
  t.skipped_joints = je.skipped;
  Points3d d_joints = want ? je.gradient : Points3d();
  Points3d d_vertices;

  if (weights_.lambda_sil > 0.0 && !obs.silhouette.empty()) {
    const SoftRender render = render_soft_silhouette(obs.camera, db.vertices(), model.faces(), tau_);
    ImageArray d_image;
    t.sil = e_sil(render.image, obs.silhouette, want ? &d_image : nullptr);
    if (want) {
      d_vertices = soft_silhouette_backward(obs.camera, db.vertices(), model.faces(), render,
                                            weights_.lambda_sil * d_image);
    }
  }
  if (inputs_.previous_joints != nullptr && weights_.lambda_stab > 0.0) {
    Points3d g;
    t.stab = e_stab(db.joints(), *inputs_.previous_joints, want ? &g : nullptr);
    if (want) d_joints += weights_.lambda_stab * g;
  }
  VectorXd prior_grad;
  if (inputs_.prior != nullptr && weights_.lambda_prior > 0.0) {
    t.prior = e_prior(body.theta, *inputs_.prior, want ? &prior_grad : nullptr);
  }
  t.total = t.joint + weights_.lambda_sil * t.sil + weights_.lambda_stab * t.stab + weights_.lambda_prior * t.prior;
  if (terms != nullptr) *terms = t;

  if (want) {
    const BodyGradient bg = db.backward(d_vertices, d_joints);
    gradient->setZero(size_);
    if (theta_offset_ >= 0) {
      VectorXd gt = bg.theta;
      if (prior_grad.size() > 0) gt += weights_.lambda_prior * prior_grad;
      gradient->segment(theta_offset_, gt.size()) = gt;
    }
    if (beta_offset_ >= 0) gradient->segment(beta_offset_, bg.beta.size()) = bg.beta;
    if (trans_offset_ >= 0) gradient->segment<3>(trans_offset_) = bg.trans;
  }
  return t.total;
}

// ---------------------------------------------------------------------------
// Surface stage

SurfaceObjective::SurfaceObjective(const SubjectTemplate& subject, const Observation& observation,
                                   const EnergyWeights& weights, const FrameState& state, double tau)
    : subject_(&subject), observation_(&observation), weights_(weights), tau_(tau) {
  const BodyModel& model = subject.model();
  arap_weight_ = weights.lambda_arap / model.num_vertices();
  skinning_ = LinearSkinning::from_params(model, state.body);
  canonical_base_ = canonical_mesh(model, state.body, subject.base_displacements());
}

VectorXd SurfaceObjective::pack(const Points3d& rotations, const Points3d& translations) const {
  const int k = subject_->graph().num_nodes();
  VectorXd x(6 * k);
  x.head(3 * k) = flatten(rotations);
  x.tail(3 * k) = flatten(translations);
  return x;
}

void SurfaceObjective::unpack(const VectorXd& x, Points3d& rotations, Points3d& translations) const {
  const int k = subject_->graph().num_nodes();
  rotations = Eigen::Map<const Points3d>(x.data(), k, 3);
  translations = Eigen::Map<const Points3d>(x.data() + 3 * k, k, 3);
}

VectorXd SurfaceObjective::step_scale(const OptimizerConfig& config) const {
  const int k = subject_->graph().num_nodes();
  VectorXd s = VectorXd::Ones(6 * k);
  s.tail(3 * k).setConstant(config.translation_step_size / config.step_size);
  return s;
}

std::pair<double, double> SurfaceObjective::terms(const VectorXd& x) const {
  Points3d rot, trans;
  unpack(x, rot, trans);
  const DeformGraph& graph = subject_->graph();
  const BodyModel& model = subject_->model();
  const Points3d canonical = canonical_base_ + displacements(graph, rot, trans, model.rest_vertices());
  const Points3d verts = skinning_.apply(model, canonical);
  const SilhouetteImage img = soft_silhouette(observation_->camera, verts, model.faces(), tau_);
  return {e_sil(img, observation_->silhouette), arap_energy(graph, rot, trans)};
}

double SurfaceObjective::operator()(const VectorXd& x, VectorXd* gradient) const {
  if (!x.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  Points3d rot, trans;
  unpack(x, rot, trans);
  const DeformGraph& graph = subject_->graph();
  const BodyModel& model = subject_->model();
  const Observation& obs = *observation_;
  const Points3d canonical = canonical_base_ + displacements(graph, rot, trans, model.rest_vertices());
  const Points3d verts = skinning_.apply(model, canonical);
  const bool want = gradient != nullptr;

  double sil = 0.0;
  GraphGradient gsil;
  if (!obs.silhouette.empty()) {
    const SoftRender render = render_soft_silhouette(obs.camera, verts, model.faces(), tau_);
    ImageArray d_image;
    sil = e_sil(render.image, obs.silhouette, want ? &d_image : nullptr);
    if (want) {
      const Points3d dv = soft_silhouette_backward(obs.camera, verts, model.faces(), render, d_image);
      gsil = displacements_backward(graph, rot, model.rest_vertices(), skinning_.apply_transpose(model, dv));
    }
  }
  GraphGradient garap;
  const double arap = arap_energy(graph, rot, trans, want ? &garap : nullptr);
  if (want) {
    const int k = graph.num_nodes();
    gradient->resize(6 * k);
    Points3d gr = arap_weight_ * garap.rotations;
    Points3d gt = arap_weight_ * garap.translations;
    if (gsil.rotations.rows() == k) {
      gr += gsil.rotations;
      gt += gsil.translations;
    }
    *gradient = pack(gr, gt);
  }
  return sil + arap_weight_ * arap;
}

std::vector<int> SurfaceObjective::blocks() const {
  const int k = subject_->graph().num_nodes();
  std::vector<int> b(static_cast<size_t>(6 * k), 0);
  std::fill(b.begin() + 3 * k, b.end(), 1);
  return b;
}

FrameState refine_pose(const FrameState& state, const SubjectTemplate& subject, const FrameInputs& inputs,
                       const EnergyWeights& weights, const OptimizerConfig& config, StageReport* report) {
  if (inputs.observation == nullptr) throw InvariantError("pose stage needs an observation");
  if (untrackable(*inputs.observation)) throw UntrackableFrame("no confident joints and an empty silhouette");
  const PoseObjective objective(subject, inputs, weights, state, pose_stage_tau(weights));
  FrameState out = state;
  StageReport rep;
  rep.stage = "pose";
  if (objective.size() > 0) {
    const MinimizeResult res = minimize(std::cref(objective), objective.pack(state.body), config,
                                        objective.step_scale(config), objective.blocks());
    out.body = objective.unpack(res.x);
    rep.initial_objective = res.initial_objective;
    rep.final_objective = res.objective;
    rep.trace = res.trace;
    rep.iterations = res.iterations;
    rep.status = res.status;
    rep.skipped_joints = objective.terms(res.x).skipped_joints;
  } else {
    rep.status = "all_frozen";
  }
  if (report != nullptr) *report = std::move(rep);
  return out;
}

FrameState refine_surface(const FrameState& state, const SubjectTemplate& subject, const Observation& obs,
                          const EnergyWeights& weights, const OptimizerConfig& config, StageReport* report) {
  if (untrackable(obs)) throw UntrackableFrame("no confident joints and an empty silhouette");
  FrameState out = state;
  StageReport rep;
  rep.stage = "surface";
  if (state.frozen.graph) {
    rep.status = "all_frozen";
  } else {
    const SurfaceObjective objective(subject, obs, weights, state, surface_stage_tau(weights));
    const MinimizeResult res = minimize(std::cref(objective), objective.pack(state.graph_rotations, state.graph_translations),
                                        config, objective.step_scale(config), objective.blocks());
    objective.unpack(res.x, out.graph_rotations, out.graph_translations);
    rep.initial_objective = res.initial_objective;
    rep.final_objective = res.objective;
    rep.trace = res.trace;
    rep.iterations = res.iterations;
    rep.status = res.status;
  }
  if (report != nullptr) *report = std::move(rep);
  return out;
}

// ---------------------------------------------------------------------------
// Registration

RegistrationObjective::RegistrationObjective(const BodyModel& model, const DeformGraph& graph, const BodyParams& body,
                                             const Points3d& scan, const EnergyWeights& weights)
    : model_(&model), graph_(&graph), scan_(&scan), laplacian_(model.num_vertices(), model.faces()) {
  if (scan.rows() == 0) throw InvariantError("registration scan is empty");
  if (graph.num_vertices() != model.num_vertices()) throw DimensionError("deformation graph does not match the model");
  skinning_ = LinearSkinning::from_params(model, body);
  canonical_base_ = canonical_mesh(model, body, Points3d::Zero(model.num_vertices(), 3));
  blend_.assign(static_cast<size_t>(model.num_vertices()), Matrix3d::Zero());
  const auto& infl = model.influences();
  for (int i = 0; i < model.num_vertices(); ++i) {
    for (const auto& [j, w] : infl[static_cast<size_t>(i)]) {
      blend_[static_cast<size_t>(i)] += w * skinning_.rotation[static_cast<size_t>(j)];
    }
  }
  const double n = static_cast<double>(model.num_vertices());
  lap_weight_ = weights.lambda_lap / n;
  offset_weight_ = weights.lambda_offset / n;
}

Points3d RegistrationObjective::displacements(const VectorXd& x) const {
  const int k = graph_->num_nodes();
  const Points3d rot = Eigen::Map<const Points3d>(x.data(), k, 3);
  const Points3d trans = Eigen::Map<const Points3d>(x.data() + 3 * k, k, 3);
  return morphtrack::displacements(*graph_, rot, trans, model_->rest_vertices());
}

Points3d RegistrationObjective::posed(const Points3d& d) const { return skinning_.apply(*model_, canonical_base_ + d); }

double RegistrationObjective::operator()(const VectorXd& x, VectorXd* gradient) const {
  if (!x.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  const Points3d d = displacements(x);
  const Points3d p = posed(d);
  const ChamferResult cr = chamfer(p, *scan_);
  Points3d glap, goff;
  const double lap = e_lap(laplacian_, d, gradient != nullptr ? &glap : nullptr);
  const double off = e_offset(d, gradient != nullptr ? &goff : nullptr);
  if (gradient != nullptr) {
    const Points3d gp = chamfer_gradient_a(p, *scan_, cr);
    const Points3d gd = skinning_.apply_transpose(*model_, gp) + lap_weight_ * glap + offset_weight_ * goff;
    const int k = graph_->num_nodes();
    const Points3d rot = Eigen::Map<const Points3d>(x.data(), k, 3);
    const GraphGradient gg = displacements_backward(*graph_, rot, model_->rest_vertices(), gd);
    gradient->resize(6 * k);
    gradient->head(3 * k) = flatten(gg.rotations);
    gradient->tail(3 * k) = flatten(gg.translations);
  }
  return cr.value + lap_weight_ * lap + offset_weight_ * off;
}

void RegistrationObjective::residuals(const VectorXd& x, VectorXd& r, Eigen::SparseMatrix<double>* jacobian) const {
  using Triplet = Eigen::Triplet<double>;
  const int n = model_->num_vertices();
  const int m = n;
  const int l = static_cast<int>(scan_->rows());
  const int k = graph_->num_nodes();
  const Points3d d = displacements(x);
  const Points3d p = posed(d);
  const ChamferResult cr = chamfer(p, *scan_);
  const double sa = 1.0 / std::sqrt(static_cast<double>(m));
  const double sb = 1.0 / std::sqrt(static_cast<double>(l));
  const double sl = std::sqrt(lap_weight_);
  const double so = std::sqrt(offset_weight_);
  const int row_b = 3 * m, row_lap = row_b + 3 * l, row_off = row_lap + 3 * n;
  r.resize(row_off + 3 * n);
  for (int i = 0; i < m; ++i) {
    r.segment<3>(3 * i) = sa * (p.row(i) - scan_->row(cr.nn_a_to_b[static_cast<size_t>(i)])).transpose();
  }
  for (int j = 0; j < l; ++j) {
    r.segment<3>(row_b + 3 * j) = sb * (p.row(cr.nn_b_to_a[static_cast<size_t>(j)]) - scan_->row(j)).transpose();
  }
  const Points3d ld = laplacian_.matrix() * d;
  r.segment(row_lap, 3 * n) = sl * flatten(ld);
  r.segment(row_off, 3 * n) = so * flatten(d);
  if (jacobian == nullptr) return;

  // dr/dD, (rows) × 3N
  std::vector<Triplet> jd;
  jd.reserve(static_cast<size_t>(9 * (m + l) + 3 * laplacian_.matrix().nonZeros() + 3 * n));
  auto block = [&](int row, int vertex, const Matrix3d& b) {
    for (int a = 0; a < 3; ++a)
      for (int c = 0; c < 3; ++c)
        if (b(a, c) != 0.0) jd.emplace_back(row + a, 3 * vertex + c, b(a, c));
  };
  for (int i = 0; i < m; ++i) block(3 * i, i, sa * blend_[static_cast<size_t>(i)]);
  for (int j = 0; j < l; ++j) {
    const int v = cr.nn_b_to_a[static_cast<size_t>(j)];
    block(row_b + 3 * j, v, sb * blend_[static_cast<size_t>(v)]);
  }
  const auto& lm = laplacian_.matrix();
  for (int col = 0; col < lm.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(lm, col); it; ++it) {
      for (int c = 0; c < 3; ++c) jd.emplace_back(row_lap + 3 * static_cast<int>(it.row()) + c, 3 * static_cast<int>(it.col()) + c, sl * it.value());
    }
  }
  for (int i = 0; i < 3 * n; ++i) jd.emplace_back(row_off + i, i, so);
  Eigen::SparseMatrix<double> jdm(r.size(), 3 * n);
  jdm.setFromTriplets(jd.begin(), jd.end());

  // dD/dx, 3N × 6K
  std::vector<Triplet> gt;
  const Points3d rot = Eigen::Map<const Points3d>(x.data(), k, 3);
  std::vector<RotationJacobian> rj;
  rj.reserve(static_cast<size_t>(k));
  for (int q = 0; q < k; ++q) rj.push_back(rodrigues_jacobian(rot.row(q).transpose()));
  const Points3d& rest = model_->rest_vertices();
  for (int i = 0; i < n; ++i) {
    for (const auto& [q, w] : graph_->vertex_weights[static_cast<size_t>(i)]) {
      const Vector3d rel = (rest.row(i) - graph_->node_positions.row(q)).transpose();
      for (int c = 0; c < 3; ++c) {
        const Vector3d col = w * (rj[static_cast<size_t>(q)].d_rotation[static_cast<size_t>(c)] * rel);
        for (int a = 0; a < 3; ++a) gt.emplace_back(3 * i + a, 3 * q + c, col[a]);
        gt.emplace_back(3 * i + c, 3 * k + 3 * q + c, w);
      }
    }
  }
  Eigen::SparseMatrix<double> gm(3 * n, 6 * k);
  gm.setFromTriplets(gt.begin(), gt.end());
  *jacobian = jdm * gm;
}

RegistrationResult register_template(const BodyModel& model, const DeformGraph& graph, const Points3d& scan,
                                     const BodyParams& body, const EnergyWeights& weights,
                                     const OptimizerConfig& config) {
  const RegistrationObjective objective(model, graph, body, scan, weights);
  const int k = graph.num_nodes();
  VectorXd x0(6 * k);
  x0.head(3 * k) = flatten(graph.node_rotations);
  x0.tail(3 * k) = flatten(graph.node_translations);

  MinimizeResult res;
  if (config.algorithm == Algorithm::gauss_newton_damped) {
    res = minimize_least_squares(
        [&](const VectorXd& x, VectorXd& r, Eigen::SparseMatrix<double>* j) { objective.residuals(x, r, j); }, x0,
        config);
  } else {
    VectorXd scale = VectorXd::Ones(6 * k);
    scale.tail(3 * k).setConstant(config.translation_step_size / config.step_size);
    std::vector<int> blocks(static_cast<size_t>(6 * k), 0);
    std::fill(blocks.begin() + 3 * k, blocks.end(), 1);
    res = minimize(std::cref(objective), x0, config, scale, blocks);
  }
  if (res.objective > res.initial_objective) {
    throw NumericError("registration objective increased from " + std::to_string(res.initial_objective) + " to " +
                       std::to_string(res.objective));
  }
  RegistrationResult out;
  out.graph_rotations = Eigen::Map<const Points3d>(res.x.data(), k, 3);
  out.graph_translations = Eigen::Map<const Points3d>(res.x.data() + 3 * k, k, 3);
  out.displacements = objective.displacements(res.x);
  out.report.stage = "register";
  out.report.initial_objective = res.initial_objective;
  out.report.final_objective = res.objective;
  out.report.trace = res.trace;
  out.report.iterations = res.iterations;
  out.report.status = res.status;
  return out;
}

}  // namespace morphtrack

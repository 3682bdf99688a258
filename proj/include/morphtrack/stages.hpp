#pragma once

#include "morphtrack/body_model.hpp"
#include "morphtrack/camera_raster.hpp"
#include "morphtrack/deform_graph.hpp"
#include "morphtrack/energies.hpp"
#include "morphtrack/optim.hpp"

#include <string>
#include <vector>

namespace morphtrack {

struct FrozenFlags {
  bool theta = false;
  bool beta = true;
  bool trans = false;
  bool graph = false;
};

/// Complete per-frame unknowns: body parameters and graph node transforms.
struct FrameState {
  BodyParams body;
  Points3d graph_rotations;     // K×3 axis-angles
  Points3d graph_translations;  // K×3 meters
  FrozenFlags frozen;

  static FrameState initial(const BodyModel& model, const DeformGraph& graph);
};

/// A body model together with its registered displacement field and the
/// deformation graph used for per-frame surface refinement. The graph warps
/// the mean rest mesh; its displacements add to the registered ones.
struct SubjectTemplate {
  SubjectTemplate(const BodyModel& model, const DeformGraph& graph, Points3d base_displacements = Points3d());

  const BodyModel& model() const { return *model_; }
  const DeformGraph& graph() const { return *graph_; }
  const Points3d& base_displacements() const { return base_; }

  Points3d displacements(const Points3d& rotations, const Points3d& translations) const;
  Points3d displacements(const FrameState& state) const;
  Points3d posed_vertices(const FrameState& state) const;

 private:
  const BodyModel* model_;
  const DeformGraph* graph_;
  Points3d base_;
};

/// Everything a per-frame stage reads besides the state itself.
struct FrameInputs {
  const Observation* observation = nullptr;
  const JointMapping* mapping = nullptr;
  const GmmPrior* prior = nullptr;         // optional
  const Points3d* previous_joints = nullptr;  // null on the first frame (no stability term)
};

struct StageReport {
  std::string stage;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::vector<double> trace;
  int iterations = 0;
  std::string status;
  int skipped_joints = 0;
};

struct PoseTerms {
  double joint = 0.0;
  double sil = 0.0;
  double stab = 0.0;
  double prior = 0.0;
  double total = 0.0;
  int skipped_joints = 0;
};

/// E_joint + lambda_sil E_sil + lambda_stab E_stab + lambda_prior E_prior over
/// the unfrozen body blocks; graph transforms are held fixed.
class PoseObjective {
 public:
  PoseObjective(const SubjectTemplate& subject, const FrameInputs& inputs, const EnergyWeights& weights,
                const FrameState& state, double tau);

  int size() const { return size_; }
  VectorXd pack(const BodyParams& body) const;
  BodyParams unpack(const VectorXd& x) const;
  VectorXd step_scale(const OptimizerConfig& config) const;
  /// theta, beta and trans blocks for the optimizer.
  std::vector<int> blocks() const;

  double operator()(const VectorXd& x, VectorXd* gradient) const;
  PoseTerms terms(const VectorXd& x) const;

 private:
  double evaluate(const VectorXd& x, VectorXd* gradient, PoseTerms* terms) const;

  const SubjectTemplate* subject_;
  FrameInputs inputs_;
  EnergyWeights weights_;
  FrameState state_;
  Points3d displacements_;
  double tau_;
  int theta_offset_ = -1, beta_offset_ = -1, trans_offset_ = -1, size_ = 0;
};

/// E_sil + (lambda_arap/N) E_arap over the graph node transforms; body fixed.
class SurfaceObjective {
 public:
  SurfaceObjective(const SubjectTemplate& subject, const Observation& observation, const EnergyWeights& weights,
                   const FrameState& state, double tau);

  int size() const { return 6 * subject_->graph().num_nodes(); }
  VectorXd pack(const Points3d& rotations, const Points3d& translations) const;
  void unpack(const VectorXd& x, Points3d& rotations, Points3d& translations) const;
  VectorXd step_scale(const OptimizerConfig& config) const;
  /// Rotation and translation blocks.
  std::vector<int> blocks() const;

  double operator()(const VectorXd& x, VectorXd* gradient) const;
  /// (E_sil, E_arap) at x.
  std::pair<double, double> terms(const VectorXd& x) const;

 private:
  const SubjectTemplate* subject_;
  const Observation* observation_;
  EnergyWeights weights_;
  LinearSkinning skinning_;
  Points3d canonical_base_;  // T_mu + B_s(beta) + registered displacements
  double tau_;
  double arap_weight_;
};

/// True when the observation carries neither a confident joint nor a silhouette pixel.
bool untrackable(const Observation& obs);

/// Optimizes the unfrozen body blocks. Graph transforms are left bit-identical.
/// Throws UntrackableFrame when the observation is empty.
FrameState refine_pose(const FrameState& state, const SubjectTemplate& subject, const FrameInputs& inputs,
                       const EnergyWeights& weights, const OptimizerConfig& config, StageReport* report = nullptr);

/// Optimizes graph transforms. Body parameters are left bit-identical.
FrameState refine_surface(const FrameState& state, const SubjectTemplate& subject, const Observation& obs,
                          const EnergyWeights& weights, const OptimizerConfig& config,
                          StageReport* report = nullptr);

/// Raster sharpness used by the pose and surface stages: tau, then tau/2.
inline double pose_stage_tau(const EnergyWeights& w) { return w.raster_tau; }
inline double surface_stage_tau(const EnergyWeights& w) { return 0.5 * w.raster_tau; }

struct RegistrationResult {
  Points3d graph_rotations;
  Points3d graph_translations;
  Points3d displacements;  // N×3 canonical offsets
  StageReport report;
};

/// Registration objective E_chamfer + (lambda_lap/N) E_lap + (lambda_offset/N) E_offset
/// between the posed displaced template and the scan.
class RegistrationObjective {
 public:
  RegistrationObjective(const BodyModel& model, const DeformGraph& graph, const BodyParams& body,
                        const Points3d& scan, const EnergyWeights& weights);

  int size() const { return 6 * graph_->num_nodes(); }
  double operator()(const VectorXd& x, VectorXd* gradient) const;
  void residuals(const VectorXd& x, VectorXd& r, Eigen::SparseMatrix<double>* jacobian) const;
  Points3d displacements(const VectorXd& x) const;
  Points3d posed(const Points3d& displacements) const;

 private:
  const BodyModel* model_;
  const DeformGraph* graph_;
  const Points3d* scan_;
  LinearSkinning skinning_;
  Points3d canonical_base_;
  std::vector<Matrix3d> blend_;  // per-vertex d(posed)/d(canonical)
  UniformLaplacian laplacian_;
  double lap_weight_;
  double offset_weight_;
};

/// Fits graph transforms so the posed displaced template matches the scan.
/// The body parameters stay fixed. Throws NumericError when the objective
/// increases across the stage.
RegistrationResult register_template(const BodyModel& model, const DeformGraph& graph, const Points3d& scan,
                                     const BodyParams& body, const EnergyWeights& weights,
                                     const OptimizerConfig& config);

}  // namespace morphtrack

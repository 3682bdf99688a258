#pragma once

#include "morphtrack/body_model.hpp"
#include "morphtrack/energies.hpp"
#include "morphtrack/optim.hpp"
#include "morphtrack/stages.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace morphtrack {

// ---------------------------------------------------------------------------
// Toy rigs built from capped tubes around the bones

struct ToyBodyOptions {
  double height = 0.3;     // meters, head top to feet
  int ring_segments = 8;   // vertices per ring
  int rings_per_part = 5;  // >= 2, includes both end rings
  int num_betas = 2;       // 0, 1 (uniform scale) or 2 (+ girth)
  bool pose_dirs = false;  // small synthetic pose blendshapes
};

struct ToyBody {
  BodyModel model;
  std::vector<std::string> joint_names;
  std::vector<bool> smooth_region;  // vertices away from tube ends and caps
  std::vector<int> part_of_vertex;  // tube index per vertex
  std::vector<int> part_bone;       // bone joint per tube
};

/// 16-joint humanoid: pelvis, spine, neck, head top, arms, legs. Model
/// coordinates are y-down, facing -z, so a camera at the origin looking
/// along +z sees an upright figure.
ToyBody make_toy_body(const ToyBodyOptions& options = {});

/// Two-bone arm along +x (shoulder at origin, elbow at (1,0,0), hand at
/// (2,0,0)), one tube per bone, no blending: upper-arm vertices follow
/// joint 0 and forearm vertices joint 1.
ToyBody make_toy_arm(int ring_segments = 6, int rings_per_part = 3, double radius = 0.1);

// ---------------------------------------------------------------------------
// Motion and noise

struct NoiseModel {
  double joint_sigma = 0.0;     // pixels
  double dropout = 0.0;         // probability of a zero-confidence joint
  int mask_radius = 0;          // > 0 erodes, < 0 dilates the mask (pixels)
  double pose_init_sigma = 0.0; // radians, added to the ground-truth pose inits
  std::uint64_t seed = 1;

  void validate() const;
};

struct MotionSpec {
  std::vector<BodyParams> poses;                // one per frame
  std::vector<Points3d> graph_rotations;        // optional, one per frame
  std::vector<Points3d> graph_translations;     // optional, one per frame
  NoiseModel noise;

  int frames() const { return static_cast<int>(poses.size()); }
  void validate(const BodyModel& model) const;
};

struct WalkOptions {
  int frames = 10;
  double period = 10.0;        // frames per gait cycle
  double leg_swing = 0.35;     // radians
  double arm_swing = 0.3;
  double knee_bend = 0.4;
  double step = 0.003;         // root translation per frame along x (meters)
  double depth = 1.0;          // root depth (meters)
  double phase = 0.0;
  double out_of_plane = 0.05;  // amplitude of rotations about the x and y axes
};

/// Gait-like motion of the toy body; swings are mostly in the image plane.
MotionSpec walk_motion(const ToyBody& body, const WalkOptions& options);

/// Random poses from the same family, for fitting a pose prior.
MatrixXd walk_pose_corpus(const ToyBody& body, int samples, std::uint64_t seed);

struct SyntheticSequence {
  std::vector<Observation> observations;
  std::vector<FrameState> states;
  std::vector<Points3d> vertices;
  std::vector<std::optional<BodyParams>> pose_inits;
};

/// Poses the template per frame, renders a hard silhouette (soft render at
/// tau = 0.25 px thresholded at 0.5), projects the joints and applies the
/// noise model. Throws InvariantError naming a frame whose body leaves the
/// camera frustum.
SyntheticSequence generate_sequence(const SubjectTemplate& subject, const MotionSpec& spec, const Camera& camera);

/// Camera framing the toy at the given depth with the body spanning about
/// three quarters of the image height.
Camera toy_camera(const ToyBodyOptions& options, double depth, int size);

// ---------------------------------------------------------------------------
// Oracles

/// Exhaustive nearest squared distances from every point of a to b.
VectorXd brute_nearest_squared(const Points3d& a, const Points3d& b);
/// Exhaustive nearest distances.
VectorXd brute_nearest(const Points3d& a, const Points3d& b);
/// Chamfer value from brute_nearest_squared in both directions.
double brute_chamfer(const Points3d& a, const Points3d& b);

/// sqrt of the symmetric mean squared nearest distance, in centimeters
/// (inputs in meters).
double eval_chamfer_cm(const Points3d& predicted, const Points3d& ground_truth);

/// Template vertices moved along their normals; only vertices with mask set move.
Points3d inflate(const Points3d& vertices, const Faces& faces, double amount,
                 const std::vector<bool>& mask = std::vector<bool>());

/// Non-log-space mixture density, for checking the log-sum-exp evaluation.
double direct_gmm_density(const GmmPrior& prior, const VectorXd& x);

/// Point-in-triangle hard rasterization at pixel centers.
SilhouetteImage hard_rasterize(const Camera& camera, const Points3d& vertices, const Faces& faces);

// ---------------------------------------------------------------------------
// Gradient suite

struct GradientCheck {
  std::string name;
  int configurations = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_relative_error < tolerance; }
};

struct GradientSuiteOptions {
  int configurations = 100;
  std::uint64_t seed = 11;
};

/// Finite-difference checks of every energy and the assembled stage objectives.
std::vector<GradientCheck> run_gradient_suite(const GradientSuiteOptions& options = {});

}  // namespace morphtrack

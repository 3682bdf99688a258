#pragma once

#include "morphtrack/stages.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace morphtrack {

/// full: pose then surface refinement; pose_only: skip the surface stage;
/// init_only: no optimization, the initialization is the output.
enum class StageMode { full, pose_only, init_only };

StageMode parse_stage_mode(const std::string& name);
std::string to_string(StageMode mode);

struct TrackConfig {
  OptimizerConfig pose{};
  OptimizerConfig surface{Algorithm::adaptive_moment, 40};
  double model_height = 1.7;  // meters, for the frame-0 translation estimate
  StageMode mode = StageMode::full;

  void validate() const;
};

struct FrameDiagnostics {
  int frame = 0;
  bool untrackable = false;
  bool pose_init_fallback = false;  // no pose init for this frame; previous pose used
  StageReport pose;
  StageReport surface;
  double silhouette_mse = 0.0;  // hard render of the output vs. the observed mask
};

struct TraceRecord {
  int frame;
  std::string stage;
  int iter;
  double objective;
};

struct TrackResult {
  std::vector<FrameState> states;
  std::vector<Points3d> vertices;
  std::vector<FrameDiagnostics> diagnostics;

  std::vector<TraceRecord> trace() const;
};

/// pose_inits is either empty or has one (possibly absent) entry per frame.
/// Frames are processed in order; an untrackable frame carries the previous
/// state forward and is flagged.
TrackResult track_sequence(const SubjectTemplate& subject, const std::vector<Observation>& observations,
                           const std::vector<std::optional<BodyParams>>& pose_inits, const JointMapping& mapping,
                           const GmmPrior* prior, const EnergyWeights& weights, const TrackConfig& config);

/// Centered moving average with a window that shrinks at the sequence ends.
std::vector<Points3d> smooth_sequence(const std::vector<Points3d>& frames, int window);

/// Mean per-vertex distance between consecutive frames.
double mean_jitter(const std::vector<Points3d>& frames);

/// Depth from the silhouette bounding-box height, x and y back-projected
/// from the box center. Throws InvariantError on an empty silhouette.
Vector3d init_translation(const SilhouetteImage& silhouette, const Camera& camera, double model_height);

/// Mean squared difference between the hard silhouette of the state and the observed mask.
double silhouette_mse(const SubjectTemplate& subject, const FrameState& state, const Observation& obs);

/// Fixed-width text table, one row per frame. Byte-identical across runs with
/// identical inputs in single-threaded mode.
void write_diagnostics(std::ostream& out, const TrackResult& result);
void write_trace(std::ostream& out, const TrackResult& result);

}  // namespace morphtrack

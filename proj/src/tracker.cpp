#include "morphtrack/tracker.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>

namespace morphtrack {

StageMode parse_stage_mode(const std::string& name) {
  if (name == "full") return StageMode::full;
  if (name == "pose-only") return StageMode::pose_only;
  if (name == "init-only") return StageMode::init_only;
  throw ConfigError("unknown tracking mode '" + name + "' (expected full, pose-only or init-only)");
}

std::string to_string(StageMode mode) {
  switch (mode) {
    case StageMode::full: return "full";
    case StageMode::pose_only: return "pose-only";
    case StageMode::init_only: return "init-only";
  }
  return "full";
}

void TrackConfig::validate() const {
  pose.validate();
  surface.validate();
  if (!(model_height > 0.0) || !std::isfinite(model_height)) throw ConfigError("model_height must be positive");
}

std::vector<TraceRecord> TrackResult::trace() const {
  std::vector<TraceRecord> out;
  for (const auto& d : diagnostics) {
    for (const StageReport* rep : {&d.pose, &d.surface}) {
      if (rep->stage.empty() || rep->status == "all_frozen") continue;
      out.push_back({d.frame, rep->stage, 0, rep->initial_objective});
      for (size_t i = 0; i < rep->trace.size(); ++i) {
        out.push_back({d.frame, rep->stage, static_cast<int>(i) + 1, rep->trace[i]});
      }
    }
  }
  return out;
}

Vector3d init_translation(const SilhouetteImage& silhouette, const Camera& camera, double model_height) {
  int r0 = silhouette.height(), r1 = -1, c0 = silhouette.width(), c1 = -1;
  for (int r = 0; r < silhouette.height(); ++r) {
    for (int c = 0; c < silhouette.width(); ++c) {
      if (silhouette(r, c) > 0.5) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
    }
  }
  if (r1 < 0) throw InvariantError("cannot initialize translation from an empty silhouette");
  const double box_h = static_cast<double>(r1 - r0 + 1);
  const double z = camera.fy * model_height / box_h;
  const double u = 0.5 * (c0 + c1 + 1);
  const double v = 0.5 * (r0 + r1 + 1);
  return {(u - camera.cx) * z / camera.fx, (v - camera.cy) * z / camera.fy, z};
}

double silhouette_mse(const SubjectTemplate& subject, const FrameState& state, const Observation& obs) {
  if (obs.silhouette.empty()) return 0.0;
  const Points3d v = subject.posed_vertices(state);
  const SilhouetteImage hard = threshold(soft_silhouette(obs.camera, v, subject.model().faces(), 0.25), 0.5);
  return e_sil(hard, obs.silhouette);
}

TrackResult track_sequence(const SubjectTemplate& subject, const std::vector<Observation>& observations,
                           const std::vector<std::optional<BodyParams>>& pose_inits, const JointMapping& mapping,
                           const GmmPrior* prior, const EnergyWeights& weights, const TrackConfig& config) {
  if (observations.empty()) throw InvariantError("no observations to track");
  if (!pose_inits.empty() && pose_inits.size() != observations.size()) {
    throw DimensionError("pose_inits has " + std::to_string(pose_inits.size()) + " entries for " +
                         std::to_string(observations.size()) + " frames");
  }
  config.validate();
  weights.validate();
  const BodyModel& model = subject.model();
  for (const auto& [mj, oj] : mapping) {
    if (mj < 0 || mj >= model.num_joints()) throw DimensionError("joint mapping references model joint " + std::to_string(mj));
    (void)oj;
  }

  TrackResult result;
  FrameState prev;
  Points3d prev_joints;
  for (size_t f = 0; f < observations.size(); ++f) {
    const Observation& obs = observations[f];
    FrameDiagnostics diag;
    diag.frame = static_cast<int>(f);
    const std::optional<BodyParams> init = pose_inits.empty() ? std::nullopt : pose_inits[f];
    if (init) init->validate(model);

    FrameState state;
    if (f == 0) {
      state = FrameState::initial(model, subject.graph());
      if (init) {
        state.body.theta = init->theta;
        state.body.beta = init->beta;
      } else {
        diag.pose_init_fallback = true;
      }
      state.frozen.beta = model.num_betas() == 0;
      BodyParams at_origin = state.body;
      at_origin.trans.setZero();
      FrameState probe = state;
      probe.body = at_origin;
      const Points3d v = subject.posed_vertices(probe);
      const Vector3d center = 0.5 * (v.colwise().minCoeff() + v.colwise().maxCoeff()).transpose();
      if (!obs.silhouette.empty() && obs.silhouette.count_above(0.5) > 0) {
        state.body.trans = init_translation(obs.silhouette, obs.camera, config.model_height) - center;
      } else if (init) {
        state.body.trans = init->trans;
      } else {
        state.body.trans = Vector3d(0.0, 0.0, obs.camera.fy * config.model_height / obs.camera.height) - center;
      }
    } else {
      state = prev;
      state.frozen.beta = true;
      if (init) {
        state.body.theta = init->theta;
      } else {
        diag.pose_init_fallback = true;
      }
    }

    if (config.mode != StageMode::init_only) {
      try {
        FrameInputs inputs;
        inputs.observation = &obs;
        inputs.mapping = &mapping;
        inputs.prior = prior;
        inputs.previous_joints = f == 0 ? nullptr : &prev_joints;
        state = refine_pose(state, subject, inputs, weights, config.pose, &diag.pose);
        if (config.mode == StageMode::full) {
          state = refine_surface(state, subject, obs, weights, config.surface, &diag.surface);
        }
      } catch (const UntrackableFrame&) {
        diag.untrackable = true;
        diag.pose = StageReport();
        diag.surface = StageReport();
        if (f > 0) state = prev;
      }
    }
    state.frozen.beta = true;

    result.vertices.push_back(subject.posed_vertices(state));
    diag.silhouette_mse = silhouette_mse(subject, state, obs);
    result.states.push_back(state);
    result.diagnostics.push_back(std::move(diag));
    prev = state;
    prev_joints = joints3d(model, state.body);
  }
  return result;
}

std::vector<Points3d> smooth_sequence(const std::vector<Points3d>& frames, int window) {
  if (window < 1 || window % 2 == 0) throw ConfigError("smoothing window must be a positive odd integer, got " + std::to_string(window));
  const int n = static_cast<int>(frames.size());
  if (n == 0) return {};
  const Eigen::Index rows = frames.front().rows();
  for (const auto& f : frames) {
    if (f.rows() != rows) throw DimensionError("frames have different vertex counts");
  }
  const int half = window / 2;
  std::vector<Points3d> out(static_cast<size_t>(n), Points3d(rows, 3));
  parallel_chunks(static_cast<int>(rows), [&](int begin, int end, int) {
    for (int f = 0; f < n; ++f) {
      const int lo = std::max(0, f - half), hi = std::min(n - 1, f + half);
      const double inv = 1.0 / static_cast<double>(hi - lo + 1);
      for (int i = begin; i < end; ++i) {
        Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
        for (int g = lo; g <= hi; ++g) acc += frames[static_cast<size_t>(g)].row(i);
        out[static_cast<size_t>(f)].row(i) = acc * inv;
      }
    }
  });
  return out;
}

double mean_jitter(const std::vector<Points3d>& frames) {
  if (frames.size() < 2) return 0.0;
  double sum = 0.0;
  for (size_t f = 1; f < frames.size(); ++f) {
    const Points3d d = frames[f] - frames[f - 1];
    sum += d.rowwise().norm().mean();
  }
  return sum / static_cast<double>(frames.size() - 1);
}

void write_diagnostics(std::ostream& out, const TrackResult& result) {
  out << "frame untrackable init_fallback pose_iters pose_initial pose_final surface_iters surface_initial "
         "surface_final skipped_joints silhouette_mse\n";
  char buf[512];
  for (const auto& d : result.diagnostics) {
    std::snprintf(buf, sizeof(buf), "%d %d %d %d %.17g %.17g %d %.17g %.17g %d %.17g\n", d.frame, d.untrackable ? 1 : 0,
                  d.pose_init_fallback ? 1 : 0, d.pose.iterations, d.pose.initial_objective, d.pose.final_objective,
                  d.surface.iterations, d.surface.initial_objective, d.surface.final_objective, d.pose.skipped_joints,
                  d.silhouette_mse);
    out << buf;
  }
}

void write_trace(std::ostream& out, const TrackResult& result) {
  char buf[256];
  for (const auto& t : result.trace()) {
    std::snprintf(buf, sizeof(buf), "%d %s %d %.17g\n", t.frame, t.stage.c_str(), t.iter, t.objective);
    out << buf;
  }
}

}  // namespace morphtrack

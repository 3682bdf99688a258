#include "morphtrack/synth_oracle.hpp"
#include "morphtrack/tracker.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <sstream>

using namespace morphtrack;
using namespace testsupport;

namespace {

Camera square(int size, double f) {
  Camera c;
  c.width = c.height = size;
  c.fx = c.fy = f;
  c.cx = c.cy = 0.5 * size;
  return c;
}

SilhouetteImage box_mask(int size, int r0, int r1, int c0, int c1) {
  SilhouetteImage s(size, size, 0.0);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) s(r, c) = 1.0;
  return s;
}

// Short toy walk at a small image size so whole-sequence tests stay fast.
struct Walk {
  ToyBody toy;
  DeformGraph graph;
  Camera camera;
  SyntheticSequence seq;
  EnergyWeights weights;
  TrackConfig config;

  explicit Walk(int frames, int image = 48) {
    toy = make_toy_body();
    GraphBuildOptions go;
    go.num_nodes = std::max(4, toy.model.num_vertices() / 10);
    graph = build_graph(toy.model.rest_vertices(), toy.model.faces(), go);
    WalkOptions w;
    w.frames = frames;
    camera = toy_camera(ToyBodyOptions(), w.depth, image);
    seq = generate_sequence(SubjectTemplate(toy.model, graph), walk_motion(toy, w), camera);
    weights.gm_sigma = 0.1 * image;
    weights.raster_tau = 0.25;
    weights.lambda_prior = 0.0;
    config.model_height = ToyBodyOptions().height;
    config.pose.max_iters = 15;
    config.surface.max_iters = 5;
  }

  SubjectTemplate subject() const { return SubjectTemplate(toy.model, graph); }
  TrackResult track(const std::vector<Observation>& obs, const std::vector<std::optional<BodyParams>>& inits) const {
    return track_sequence(subject(), obs, inits, identity_mapping(toy.model.num_joints()), nullptr, weights, config);
  }
  TrackResult track() const { return track(seq.observations, seq.pose_inits); }
};

std::string diagnostics_text(const TrackResult& r) {
  std::ostringstream s;
  write_diagnostics(s, r);
  write_trace(s, r);
  return s.str();
}

}  // namespace

TEST_CASE("init_translation examples") {
  const Camera cam = square(200, 100.0);
  const Vector3d t = init_translation(box_mask(200, 50, 149, 90, 109), cam, 1.7);
  CHECK(t.z() == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(std::abs(t.x()) < 1e-12);
  CHECK(std::abs(t.y()) < 1e-12);

  const Camera c2 = square(100, 100.0);
  CHECK(init_translation(box_mask(100, 25, 74, 40, 59), c2, 0.3).z() == doctest::Approx(0.6).epsilon(1e-12));

  CHECK_THROWS_AS(init_translation(SilhouetteImage(10, 10), square(10, 10.0), 1.7), InvariantError);
}

TEST_CASE("smoothing examples") {
  Gen g(1);
  std::vector<Points3d> seq;
  for (int f = 0; f < 7; ++f) seq.push_back(g.points(5, 1.0));

  const auto same = smooth_sequence(seq, 1);
  for (size_t f = 0; f < seq.size(); ++f) CHECK(same[f] == seq[f]);

  const std::vector<Points3d> flat(6, seq[0]);
  for (const auto& f : smooth_sequence(flat, 5)) CHECK((f - seq[0]).cwiseAbs().maxCoeff() < 1e-15);

  const Points3d a = g.points(5, 1.0), b = g.points(5, 0.1);
  std::vector<Points3d> line;
  for (int f = 0; f < 9; ++f) line.push_back(a + f * b);
  const auto sl = smooth_sequence(line, 5);
  for (int f = 2; f < 7; ++f) CHECK((sl[static_cast<size_t>(f)] - line[static_cast<size_t>(f)]).cwiseAbs().maxCoeff() < 1e-12);

  // shrinking window at the ends
  const auto s5 = smooth_sequence(seq, 5);
  CHECK((s5[0] - (seq[0] + seq[1] + seq[2]) / 3.0).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((s5[1] - (seq[0] + seq[1] + seq[2] + seq[3]) / 4.0).cwiseAbs().maxCoeff() < 1e-14);

  CHECK_THROWS_AS(smooth_sequence(seq, 4), ConfigError);
  CHECK_THROWS_AS(smooth_sequence(seq, 0), ConfigError);
}

TEST_CASE("smoothing commutes with a global rigid transform") {
  Gen g(2);
  for (int t = 0; t < 20; ++t) {
    const int n = g.integer(1, 9);
    std::vector<Points3d> seq, moved;
    const Matrix3d r = rodrigues<double>(g.unit() * g.uniform(0.0, 3.0));
    const Eigen::RowVector3d c(g.normal(), g.normal(), g.normal());
    for (int f = 0; f < n; ++f) {
      seq.push_back(g.points(12, 1.0));
      moved.push_back((seq.back() * r.transpose()).rowwise() + c);
    }
    const int w = 2 * g.integer(0, 3) + 1;
    const auto a = smooth_sequence(seq, w), b = smooth_sequence(moved, w);
    for (int f = 0; f < n; ++f) {
      const Points3d ma = (a[static_cast<size_t>(f)] * r.transpose()).rowwise() + c;
      CHECK((ma - b[static_cast<size_t>(f)]).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("mean jitter of a uniformly moving sequence is the per-frame step") {
  Points3d p = Points3d::Zero(4, 3);
  std::vector<Points3d> seq;
  for (int f = 0; f < 5; ++f) {
    seq.push_back(p);
    p.col(0).array() += 0.5;
  }
  CHECK(mean_jitter(seq) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(mean_jitter({p}) == 0.0);
}

TEST_CASE("tracked sequence has one entry per frame and freezes shape after frame 0") {
  const Walk w(3);
  const TrackResult r = w.track();
  REQUIRE(r.states.size() == 3);
  REQUIRE(r.vertices.size() == 3);
  REQUIRE(r.diagnostics.size() == 3);
  for (size_t f = 0; f < 3; ++f) {
    CHECK(r.vertices[f].rows() == w.toy.model.num_vertices());
    CHECK(r.diagnostics[f].frame == static_cast<int>(f));
    CHECK_FALSE(r.diagnostics[f].untrackable);
    CHECK_FALSE(r.diagnostics[f].pose_init_fallback);
    CHECK(r.diagnostics[f].pose.final_objective <= r.diagnostics[f].pose.initial_objective);
  }
  CHECK(r.states[1].body.beta == r.states[0].body.beta);
  CHECK(r.states[2].body.beta == r.states[0].body.beta);
}

TEST_CASE("without pose inits every frame falls back and the sequence still runs") {
  const Walk w(3);
  const TrackResult r = w.track(w.seq.observations, {});
  REQUIRE(r.states.size() == 3);
  for (const auto& d : r.diagnostics) CHECK(d.pose_init_fallback);
  for (const auto& v : r.vertices) CHECK(v.allFinite());
}

TEST_CASE("an untrackable frame carries the previous state forward") {
  const Walk w(3);
  std::vector<Observation> obs = w.seq.observations;
  obs[1].silhouette = SilhouetteImage(w.camera.width, w.camera.height);
  obs[1].joints2d.col(2).setZero();
  const TrackResult r = w.track(obs, w.seq.pose_inits);
  CHECK(r.diagnostics[1].untrackable);
  CHECK_FALSE(r.diagnostics[2].untrackable);
  CHECK(r.states[1].body.theta == r.states[0].body.theta);
  CHECK(r.states[1].graph_translations == r.states[0].graph_translations);
  CHECK(r.vertices[1] == r.vertices[0]);
}

TEST_CASE("init-only mode outputs the initialization") {
  Walk w(3);
  w.config.mode = StageMode::init_only;
  const TrackResult r = w.track();
  for (size_t f = 0; f < 3; ++f) {
    CHECK(r.states[f].body.theta == w.seq.pose_inits[f]->theta);
    CHECK(r.states[f].graph_translations.cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.diagnostics[f].pose.iterations == 0);
  }
}

TEST_CASE("tracking is causal and deterministic") {
  const Walk w(3);
  const TrackResult full = w.track();
  const std::vector<Observation> head(w.seq.observations.begin(), w.seq.observations.begin() + 2);
  const std::vector<std::optional<BodyParams>> inits(w.seq.pose_inits.begin(), w.seq.pose_inits.begin() + 2);
  const TrackResult part = w.track(head, inits);
  for (size_t f = 0; f < 2; ++f) {
    CHECK(part.states[f].body.theta == full.states[f].body.theta);
    CHECK(part.vertices[f] == full.vertices[f]);
  }
  CHECK(diagnostics_text(w.track()) == diagnostics_text(full));
}

TEST_CASE("single-frame round trip recovers the pose") {
  Walk w(1, 96);
  w.config.pose.max_iters = 60;
  w.config.surface.max_iters = 20;
  const TrackResult r = w.track();
  const VectorXd err = r.states[0].body.theta - w.seq.states[0].body.theta;
  CHECK(err.cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("re-tracking rendered output is a near fixed point") {
  Walk w(2);
  w.config.pose.max_iters = 60;
  w.config.surface.max_iters = 40;
  const TrackResult first = w.track();
  std::vector<Observation> again = w.seq.observations;
  for (size_t f = 0; f < again.size(); ++f) {
    const Points2d uv = project(w.camera, joints3d(w.toy.model, first.states[f].body));
    again[f].joints2d.leftCols(2) = uv;
    again[f].joints2d.col(2).setOnes();
    again[f].silhouette = threshold(soft_silhouette(w.camera, first.vertices[f], w.toy.model.faces(), 0.25), 0.5);
  }
  std::vector<std::optional<BodyParams>> inits;
  for (const auto& s : first.states) inits.push_back(s.body);
  const TrackResult second = w.track(again, inits);
  for (size_t f = 0; f < again.size(); ++f) {
    const auto& a = first.diagnostics[f];
    const auto& b = second.diagnostics[f];
    const double end_a = a.surface.stage.empty() ? a.pose.final_objective : a.surface.final_objective;
    const double end_b = b.surface.stage.empty() ? b.pose.final_objective : b.surface.final_objective;
    CHECK(end_b <= 1.05 * end_a + 1e-12);
  }
}

TEST_CASE("sequence errors") {
  const Walk w(2);
  CHECK_THROWS_AS(w.track({}, {}), InvariantError);
  std::vector<std::optional<BodyParams>> one(1);
  CHECK_THROWS_AS(w.track(w.seq.observations, one), DimensionError);
  CHECK_THROWS_AS(parse_stage_mode("surface-only"), ConfigError);
  CHECK(parse_stage_mode(to_string(StageMode::pose_only)) == StageMode::pose_only);
}

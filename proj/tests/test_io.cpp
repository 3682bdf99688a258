#include "morphtrack/config.hpp"
#include "morphtrack/io.hpp"
#include "morphtrack/synth_oracle.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace morphtrack;
using namespace testsupport;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<Observation> three_frames(int size) {
  Gen g(1);
  std::vector<Observation> obs;
  for (int f = 0; f < 3; ++f) {
    Observation o;
    o.joints2d.resize(4, 3);
    for (int j = 0; j < 4; ++j) o.joints2d.row(j) << g.uniform(0, size), g.uniform(0, size), g.uniform(0, 1);
    o.silhouette = SilhouetteImage(size, size, 0.0);
    for (int r = 2; r < 5 + f; ++r)
      for (int c = 1; c < 6; ++c) o.silhouette(r, c) = 1.0;
    obs.push_back(o);
  }
  return obs;
}

Camera camera_for(int size) {
  Camera c;
  c.width = c.height = size;
  c.fx = c.fy = size;
  c.cx = c.cy = 0.5 * size;
  return c;
}

}  // namespace

TEST_CASE("mesh format: unit triangle, random round trip, empty mesh") {
  const fs::path dir = scratch_dir("io_mesh");
  Points3d v(3, 3);
  v << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Faces f(1, 3);
  f << 0, 1, 2;
  write_mesh(dir / "tri.obj", v, f);
  std::istringstream lines(slurp(dir / "tri.obj"));
  std::string line;
  int nv = 0, nf = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("v ", 0) == 0) ++nv;
    if (line.rfind("f ", 0) == 0) {
      ++nf;
      CHECK(line == "f 1 2 3");
    }
  }
  CHECK(nv == 3);
  CHECK(nf == 1);

  Gen g(2);
  const Points3d rv = g.points(50, 2.0);
  Faces rf(30, 3);
  for (int i = 0; i < 30; ++i) rf.row(i) << g.integer(0, 49), g.integer(0, 49), g.integer(0, 49);
  write_mesh(dir / "r.obj", rv, rf);
  const Mesh m = read_mesh(dir / "r.obj");
  CHECK((m.vertices - rv).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(m.faces == rf);

  write_mesh(dir / "empty.obj", Points3d(0, 3), Faces(0, 3));
  const Mesh e = read_mesh(dir / "empty.obj");
  CHECK(e.vertices.rows() == 0);
  CHECK(e.faces.rows() == 0);

  CHECK_THROWS(write_mesh(dir / "no_such_dir" / "x.obj", v, f));
  spit(dir / "bad.obj", "v 0 0 0\nf 1 2 3\n");
  CHECK_THROWS_AS(read_mesh(dir / "bad.obj"), ParseError);
}

TEST_CASE("structured arrays round trip and report missing names") {
  const fs::path dir = scratch_dir("io_arrays");
  Gen g(3);
  const MatrixXd a = g.points(7, 1.0);
  MatrixXd ids(2, 3);
  ids << 1, 2, 3, -4, 5, 6;
  write_arrays(dir / "a.txt", {make_array("a", a), make_array("ids", ids, true)});
  const auto arrays = read_arrays(dir / "a.txt");
  CHECK(find_array(arrays, "a")->matrix(7, 3) == a);
  CHECK(find_array(arrays, "ids")->integer);
  CHECK(find_array(arrays, "ids")->matrix(2, 3) == ids);
  CHECK(find_array(arrays, "other", false) == nullptr);
  CHECK_THROWS_AS(find_array(arrays, "other"), ParseError);
  CHECK_THROWS_AS(find_array(arrays, "a")->matrix(7, 4), ParseError);

  spit(dir / "short.txt", "array x f64 2 2\n1 2\n3\n");
  CHECK_THROWS_AS(read_arrays(dir / "short.txt"), ParseError);
}

TEST_CASE("domain files round trip") {
  const fs::path dir = scratch_dir("io_domain");
  Gen g(4);
  const ToyBody toy = make_toy_body();
  const BodyModel& model = toy.model;

  GraphBuildOptions go;
  go.num_nodes = 20;
  DeformGraph graph = build_graph(model.rest_vertices(), model.faces(), go);
  graph.node_rotations = g.points(20, 0.1);
  graph.node_translations = g.points(20, 0.01);
  save_graph(dir / "graph.txt", graph);
  const DeformGraph graph2 = load_graph(dir / "graph.txt");
  CHECK(graph2.node_positions == graph.node_positions);
  CHECK(graph2.node_neighbors == graph.node_neighbors);
  CHECK(graph2.node_rotations == graph.node_rotations);
  CHECK(graph2.node_translations == graph.node_translations);
  REQUIRE(graph2.vertex_weights.size() == graph.vertex_weights.size());
  for (size_t i = 0; i < graph.vertex_weights.size(); ++i) {
    REQUIRE(graph2.vertex_weights[i].size() == graph.vertex_weights[i].size());
    for (size_t k = 0; k < graph.vertex_weights[i].size(); ++k) {
      CHECK(graph2.vertex_weights[i][k].node == graph.vertex_weights[i][k].node);
      CHECK(graph2.vertex_weights[i][k].weight == graph.vertex_weights[i][k].weight);
    }
  }

  const GmmPrior prior = GmmPrior::fit(walk_pose_corpus(toy, 60, 1), 2);
  save_prior(dir / "prior.txt", prior);
  const GmmPrior prior2 = load_prior(dir / "prior.txt");
  CHECK(prior2.weights() == prior.weights());
  CHECK(prior2.means() == prior.means());
  CHECK(prior2.covariances() == prior.covariances());

  BodyParams p = BodyParams::zero(model);
  p.theta = g.vec(p.theta.size(), 0.3);
  p.beta = g.vec(p.beta.size(), 1.0);
  p.trans = Vector3d(0.1, -0.2, 1.5);
  save_params(dir / "params.txt", p);
  const BodyParams p2 = load_params(dir / "params.txt");
  CHECK(p2.theta == p.theta);
  CHECK(p2.beta == p.beta);
  CHECK(p2.trans == p.trans);

  FrameState s = FrameState::initial(model, graph);
  s.body = p;
  s.graph_rotations = g.points(20, 0.1);
  s.graph_translations = g.points(20, 0.01);
  save_state(dir / "state.txt", s);
  const FrameState s2 = load_state(dir / "state.txt");
  CHECK(s2.body.theta == s.body.theta);
  CHECK(s2.graph_rotations == s.graph_rotations);
  CHECK(s2.graph_translations == s.graph_translations);
  // a state file is also readable as body parameters
  CHECK(load_params(dir / "state.txt").theta == p.theta);

  const Points3d d = g.points(11, 0.02);
  save_points(dir / "d.txt", "displacements", d);
  CHECK(load_points(dir / "d.txt", "displacements") == d);

  const JointMapping map = {{0, 3}, {2, 1}, {5, 0}};
  save_joint_mapping(dir / "map.txt", map);
  CHECK(load_joint_mapping(dir / "map.txt") == map);
}

TEST_CASE("silhouette images round trip") {
  const fs::path dir = scratch_dir("io_images");
  Gen g(5);
  SilhouetteImage s(7, 5);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 7; ++c) s(r, c) = g.uniform(0, 1);
  write_pfm(dir / "s.pfm", s);
  const SilhouetteImage a = read_silhouette(dir / "s.pfm");
  CHECK(a.width() == 7);
  CHECK(a.height() == 5);
  CHECK((a.pixels() - s.pixels()).abs().maxCoeff() < 1e-6);
  write_pgm(dir / "s.pgm", s);
  const SilhouetteImage b = read_silhouette(dir / "s.pgm");
  CHECK((b.pixels() - s.pixels()).abs().maxCoeff() <= 0.5 / 255 + 1e-12);
  spit(dir / "junk.pgm", "P7\n1 1\n255\n");
  CHECK_THROWS_AS(read_silhouette(dir / "junk.pgm"), ParseError);
}

TEST_CASE("observation directories: round trip, gaps, bad rows, mask size") {
  const fs::path dir = scratch_dir("io_obs");
  const std::vector<Observation> obs = three_frames(12);
  write_observations(dir, obs);
  CHECK(count_frames(dir, "joints_", ".txt") == 3);
  const auto back = read_observations(dir, camera_for(12));
  REQUIRE(back.size() == 3);
  for (size_t f = 0; f < 3; ++f) {
    CHECK((back[f].joints2d - obs[f].joints2d).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(back[f].silhouette.pixels().isApprox(obs[f].silhouette.pixels()));
  }

  CHECK_THROWS_AS(read_observations(dir, camera_for(16)), ParseError);

  const fs::path gap = scratch_dir("io_obs_gap");
  write_observations(gap, obs);
  fs::remove(gap / frame_name("joints_", 1, ".txt"));
  try {
    read_observations(gap, camera_for(12));
    FAIL("expected a gap error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("000001") != std::string::npos);
  }

  const fs::path bad = scratch_dir("io_obs_bad");
  write_observations(bad, obs);
  spit(bad / frame_name("joints_", 0, ".txt"), "1 2 0.5\n3 4 1.3\n");
  CHECK_THROWS(read_observations(bad, camera_for(12)));
  spit(bad / frame_name("joints_", 0, ".txt"), "1 2\n");
  CHECK_THROWS_AS(read_observations(bad, camera_for(12)), ParseError);
}

TEST_CASE("pose init directories allow absent frames") {
  const fs::path dir = scratch_dir("io_inits");
  const BodyModel m = make_toy_body().model;
  BodyParams p = BodyParams::zero(m);
  p.theta[4] = 0.25;
  save_params(dir / frame_name("params_", 0, ".txt"), p);
  save_params(dir / frame_name("params_", 2, ".txt"), p);
  const auto inits = read_pose_inits(dir, 3);
  REQUIRE(inits.size() == 3);
  CHECK(inits[0].has_value());
  CHECK_FALSE(inits[1].has_value());
  CHECK(inits[2]->theta == p.theta);
}

TEST_CASE("config parsing, overrides and formatting") {
  const fs::path dir = scratch_dir("io_config");
  spit(dir / "a.cfg",
       "# comment\n"
       "weights.lambda_sil = 2.5\n"
       "pose.max_iters = 7   # trailing comment\n"
       "paths.model = sub/model.txt\n"
       "tracking.mode = pose-only\n");
  const RunConfig c = RunConfig::load(dir / "a.cfg", {"weights.gm_sigma=12"});
  CHECK(c.weights.lambda_sil == 2.5);
  CHECK(c.weights.gm_sigma == 12.0);
  CHECK(c.tracking.pose.max_iters == 7);
  CHECK(c.tracking.mode == StageMode::pose_only);
  CHECK(c.path("model") == (dir / "sub" / "model.txt").lexically_normal());
  CHECK(c.given.count("weights.gm_sigma") == 1);
  CHECK(c.given.count("weights.lambda_arap") == 0);

  spit(dir / "b.cfg", format_config(c, dir));
  const RunConfig d = RunConfig::load(dir / "b.cfg");
  CHECK(d.weights.lambda_sil == c.weights.lambda_sil);
  CHECK(d.tracking.pose.max_iters == 7);
  CHECK(d.path("model") == c.path("model"));
  CHECK(format_config(d, dir) == format_config(c, dir));

  spit(dir / "unknown.cfg", "weights.lambda_foo = 1\n");
  try {
    RunConfig::load(dir / "unknown.cfg");
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("unknown.cfg:1") != std::string::npos);
  }
  spit(dir / "dup.cfg", "pose.max_iters = 1\npose.max_iters = 2\n");
  CHECK_THROWS_AS(RunConfig::load(dir / "dup.cfg"), ConfigError);
  spit(dir / "even.cfg", "tracking.smoothing_window = 4\n");
  CHECK_THROWS_AS(RunConfig::load(dir / "even.cfg"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load(dir / "missing.cfg"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load({}, {"weights.lambda_sil=abc"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load({}, {"weights.lambda_arap=-1"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load({}, {"noequals"}), ConfigError);

  const RunConfig e = RunConfig::load({}, {"paths.model=nowhere.txt"});
  CHECK_THROWS_AS(e.require_paths({"model"}), ConfigError);
  CHECK_THROWS_AS(e.path("graph"), ConfigError);
}

TEST_CASE("thread count comes from the environment") {
  setenv("MORPHTRACK_THREADS", "3", 1);
  CHECK(thread_count() == 3);
  setenv("MORPHTRACK_THREADS", "zero", 1);
  CHECK(thread_count() == 1);
  setenv("MORPHTRACK_THREADS", "1", 1);
  CHECK(thread_count() == 1);
}

TEST_CASE("rendering is identical across thread counts") {
  const ToyBody toy = make_toy_body();
  const Camera cam = toy_camera(ToyBodyOptions(), 1.0, 40);
  BodyParams p = BodyParams::zero(toy.model);
  p.trans = Vector3d(0, 0, 1);
  const Points3d v = skin(toy.model, p, toy.model.rest_vertices());
  setenv("MORPHTRACK_THREADS", "1", 1);
  const SilhouetteImage one = soft_silhouette(cam, v, toy.model.faces(), 0.5);
  setenv("MORPHTRACK_THREADS", "4", 1);
  const SilhouetteImage four = soft_silhouette(cam, v, toy.model.faces(), 0.5);
  setenv("MORPHTRACK_THREADS", "1", 1);
  CHECK(one.pixels().isApprox(four.pixels(), 0.0));
}

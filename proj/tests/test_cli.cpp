#include "morphtrack/cli.hpp"
#include "morphtrack/io.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace morphtrack;
using namespace testsupport;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "morphtrack");
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const fs::path kWalk = fs::path(MORPHTRACK_DATA) / "walk";

// Bundled walk tracked with few iterations into a scratch directory.
Run quick_track(const fs::path& out) {
  return cli({"track", "-c", (kWalk / "track.cfg").string(), "--set", "paths.output=" + out.string(), "--set",
              "pose.max_iters=8", "--set", "surface.max_iters=4"});
}

}  // namespace

TEST_CASE("usage errors exit 2") {
  const Run a = cli({"bogus"});
  CHECK(a.code == 2);
  CHECK((a.out + a.err).find("synth") != std::string::npos);
  CHECK(cli({}).code == 2);
  CHECK(cli({"eval", "--pred", "x"}).code == 2);
  CHECK(cli({"check-gradients", "--configurations", "0"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("the installed binary reports the same exit codes") {
  const int status = std::system((std::string(MORPHTRACK_CLI) + " bogus > /dev/null 2>&1").c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 2);
}

TEST_CASE("config errors exit 2 and name the problem") {
  const fs::path dir = scratch_dir("cli_config");
  const Run missing = cli({"track", "-c", (dir / "nope.cfg").string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nope.cfg") != std::string::npos);
  CHECK(cli({"track"}).code == 2);
  CHECK(cli({"track", "-c", (kWalk / "track.cfg").string(), "--set", "weights.lambda_bogus=1"}).code == 2);
  CHECK(cli({"synth", "--set", "synth.frames=0", "-o", (dir / "s").string()}).code == 2);
  CHECK(cli({"eval", "--pred", dir.string(), "--gt", dir.string(), "--discard-sparse"}).code == 2);
}

TEST_CASE("runtime errors exit 1") {
  const fs::path dir = scratch_dir("cli_runtime");
  // masks no longer match the camera size
  const Run r = cli({"track", "-c", (kWalk / "track.cfg").string(), "--set", "paths.output=" + dir.string(), "--set",
                     "camera.width=100"});
  CHECK(r.code == 1);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("track on the bundled walk writes meshes and a reproducible diagnostics table") {
  const fs::path a = scratch_dir("cli_track_a"), b = scratch_dir("cli_track_b");
  const Run ra = quick_track(a);
  REQUIRE(ra.code == 0);
  CHECK(count_frames(a, "mesh_", ".obj") == 10);
  CHECK(count_frames(a / "smoothed", "mesh_", ".obj") == 10);
  CHECK(fs::exists(a / "diagnostics.txt"));
  CHECK(fs::exists(a / "trace.txt"));
  REQUIRE(quick_track(b).code == 0);
  CHECK(slurp(a / "diagnostics.txt") == slurp(b / "diagnostics.txt"));
  CHECK(slurp(a / "trace.txt") == slurp(b / "trace.txt"));

  const Run ev = cli({"eval", "--pred", a.string(), "--gt", (kWalk / "ground_truth").string()});
  CHECK(ev.code == 0);
  CHECK(ev.out.find("chamfer_cm") != std::string::npos);
}

TEST_CASE("eval on identical directories gives an all-zero table keyed by sequence") {
  const fs::path root = scratch_dir("cli_eval");
  for (const char* name : {"walk_a", "walk_b"}) {
    fs::create_directories(root / "pred" / name);
    fs::create_directories(root / "gt" / name);
    for (int f = 0; f < 2; ++f) {
      const Mesh m = read_mesh(kWalk / "ground_truth" / frame_name("mesh_", f, ".obj"));
      write_mesh(root / "pred" / name / frame_name("mesh_", f, ".obj"), m.vertices, m.faces);
      write_mesh(root / "gt" / name / frame_name("mesh_", f, ".obj"), m.vertices, m.faces);
    }
  }
  const Run r = cli({"eval", "--pred", (root / "pred").string(), "--gt", (root / "gt").string()});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string header, line;
  std::getline(lines, header);
  CHECK(header.find("sequence") != std::string::npos);
  std::vector<std::string> names;
  while (std::getline(lines, line)) {
    std::istringstream row(line);
    std::string name;
    int frames = 0, used = 0;
    double cd = -1.0;
    row >> name >> frames >> used >> cd;
    names.push_back(name);
    CHECK(frames == 2);
    CHECK(cd == 0.0);
  }
  CHECK(names == std::vector<std::string>{"walk_a", "walk_b"});

  fs::remove_all(root / "gt" / "walk_b");
  CHECK(cli({"eval", "--pred", (root / "pred").string(), "--gt", (root / "gt").string()}).code == 2);
}

TEST_CASE("eval discards frames with fewer than six detected joints") {
  const fs::path root = scratch_dir("cli_sparse");
  const auto obs = read_observations(kWalk / "observations", [] {
    Camera c;
    c.width = c.height = 120;
    return c;
  }());
  std::vector<Observation> sparse(obs.begin(), obs.begin() + 3);
  sparse[1].joints2d.col(2).setZero();
  sparse[1].joints2d(0, 2) = 1.0;
  write_observations(root / "obs", sparse);
  fs::create_directories(root / "pred");
  for (int f = 0; f < 3; ++f) {
    const Mesh m = read_mesh(kWalk / "ground_truth" / frame_name("mesh_", f, ".obj"));
    write_mesh(root / "pred" / frame_name("mesh_", f, ".obj"), m.vertices, m.faces);
  }
  const Run r = cli({"eval", "--pred", (root / "pred").string(), "--gt", (kWalk / "ground_truth").string(),
                     "--observations", (root / "obs").string(), "--discard-sparse"});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string header, name;
  int frames = 0, used = 0;
  std::getline(lines, header);
  lines >> name >> frames >> used;
  CHECK(frames == 3);
  CHECK(used == 2);
}

TEST_CASE("synth then register on its ground truth") {
  const fs::path dir = scratch_dir("cli_synth");
  const Run s = cli({"synth", "--set", "synth.frames=2", "--set", "synth.image_size=48", "-o", (dir / "seq").string()});
  REQUIRE(s.code == 0);
  CHECK(fs::exists(dir / "seq" / "track.cfg"));
  CHECK(count_frames(dir / "seq" / "observations", "joints_", ".txt") == 2);
  CHECK(count_frames(dir / "seq" / "ground_truth", "mesh_", ".obj") == 2);

  const fs::path seq = dir / "seq";
  const Run r = cli({"register", "--set", "paths.model=" + (seq / "model.txt").string(), "--set",
                     "paths.graph=" + (seq / "graph.txt").string(), "--set",
                     "paths.scan=" + (seq / "ground_truth").string(), "--set",
                     "paths.body=" + (seq / "ground_truth").string(), "--set", "paths.output=" + (dir / "reg").string(),
                     "--set", "registration.max_iters=10", "--template-frame", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("frame 1") != std::string::npos);
  for (const char* f : {"displacements.txt", "graph.txt", "template.obj", "registered.obj", "registration_trace.txt"}) {
    CHECK(fs::exists(dir / "reg" / f));
  }
}

TEST_CASE("check-gradients prints a passing table") {
  const Run r = cli({"check-gradients", "--configurations", "2"});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
}

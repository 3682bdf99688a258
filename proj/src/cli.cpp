#include "morphtrack/cli.hpp"

#include "morphtrack/config.hpp"
#include "morphtrack/io.hpp"
#include "morphtrack/synth_oracle.hpp"
#include "morphtrack/tracker.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace morphtrack {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

int default_graph_nodes(int num_vertices) { return std::max(4, num_vertices / 10); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
}

// A per-frame file inside dir, or the path itself when it names a file.
fs::path frame_file(const fs::path& p, const std::vector<std::string>& prefixes, const std::string& ext, int frame) {
  if (!fs::is_directory(p)) return p;
  for (const auto& prefix : prefixes) {
    const fs::path f = p / frame_name(prefix, frame, ext);
    if (fs::exists(f)) return f;
  }
  throw ConfigError("no " + frame_name(prefixes.front(), frame, ext) + " in " + p.string());
}

struct Common {
  std::string config;
  std::vector<std::string> sets;
  void add(CLI::App* app) {
    app->add_option("-c,--config", config, "configuration file (key = value)");
    app->add_option("--set", sets, "override a configuration key, key=value")->take_all();
  }
  RunConfig load() const { return RunConfig::load(config, sets); }
};

// Weights sized for the toy image unless the config set them.
void toy_weights(RunConfig& c, int image_size) {
  if (!c.given.count("weights.gm_sigma")) c.weights.gm_sigma = 0.1 * image_size;
  if (!c.given.count("weights.raster_tau")) c.weights.raster_tau = 0.25;
}

int run_synth(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.has_path("output")) throw ConfigError("paths.output is not configured");
  const fs::path dir = cfg.path("output");
  ensure_dir(dir);
  const SynthSettings& s = cfg.synth;
  const ToyBody toy = make_toy_body(s.body);
  const BodyModel& model = toy.model;
  GraphBuildOptions go;
  go.num_nodes = s.graph_nodes > 0 ? s.graph_nodes : default_graph_nodes(model.num_vertices());
  const DeformGraph graph = build_graph(model.rest_vertices(), model.faces(), go);
  const SubjectTemplate subject(model, graph);
  MotionSpec spec = walk_motion(toy, s.walk);
  spec.noise = s.noise;
  const Camera cam = toy_camera(s.body, s.walk.depth, s.image_size);
  const SyntheticSequence seq = generate_sequence(subject, spec, cam);
  GmmFitOptions fo;
  fo.seed = s.noise.seed;
  fo.covariance_regularization = s.prior_regularization;
  const GmmPrior prior = GmmPrior::fit(walk_pose_corpus(toy, s.prior_samples, s.noise.seed), s.prior_components, fo);

  save_model(dir / "model.txt", model);
  save_graph(dir / "graph.txt", graph);
  save_prior(dir / "prior.txt", prior);
  save_joint_mapping(dir / "joint_mapping.txt", identity_mapping(model.num_joints()));
  write_observations(dir / "observations", seq.observations);
  ensure_dir(dir / "ground_truth");
  ensure_dir(dir / "pose_inits");
  for (int f = 0; f < spec.frames(); ++f) {
    const auto uf = static_cast<size_t>(f);
    write_mesh(dir / "ground_truth" / frame_name("mesh_", f, ".obj"), seq.vertices[uf], model.faces());
    save_state(dir / "ground_truth" / frame_name("state_", f, ".txt"), seq.states[uf]);
    if (seq.pose_inits[uf]) save_params(dir / "pose_inits" / frame_name("params_", f, ".txt"), *seq.pose_inits[uf]);
  }

  RunConfig track = cfg;
  toy_weights(track, s.image_size);
  track.camera = cam;
  track.tracking.model_height = s.body.height;
  track.paths.clear();
  track.paths["model"] = dir / "model.txt";
  track.paths["graph"] = dir / "graph.txt";
  track.paths["prior"] = dir / "prior.txt";
  track.paths["joint_mapping"] = dir / "joint_mapping.txt";
  track.paths["observations"] = dir / "observations";
  track.paths["pose_inits"] = dir / "pose_inits";
  track.paths["ground_truth"] = dir / "ground_truth";
  track.paths["output"] = dir / "tracked";
  std::ofstream cf(dir / "track.cfg");
  cf << "# generated by morphtrack synth\n" << format_config(track, dir);
  if (!cf) throw Error("cannot write " + (dir / "track.cfg").string());

  out << "synth: " << spec.frames() << " frames, " << model.num_vertices() << " vertices, " << graph.num_nodes()
      << " graph nodes -> " << dir.string() << "\n";
  return 0;
}

int run_register(const RunConfig& cfg, int template_frame, std::ostream& out) {
  cfg.require_paths({"model", "scan", "body"});
  if (!cfg.has_path("output")) throw ConfigError("paths.output is not configured");
  const BodyModel model = load_model(cfg.path("model"));
  DeformGraph graph;
  if (cfg.has_path("graph")) {
    cfg.require_paths({"graph"});
    graph = load_graph(cfg.path("graph"));
    graph.reset_transforms();
  } else {
    GraphBuildOptions go;
    go.num_nodes = default_graph_nodes(model.num_vertices());
    graph = build_graph(model.rest_vertices(), model.faces(), go);
  }
  if (graph.num_vertices() != model.num_vertices()) {
    throw DimensionError("graph covers " + std::to_string(graph.num_vertices()) + " vertices, model has " +
                         std::to_string(model.num_vertices()));
  }
  const Mesh scan = read_mesh(frame_file(cfg.path("scan"), {"mesh_", "scan_"}, ".obj", template_frame));
  const BodyParams body = load_params(frame_file(cfg.path("body"), {"params_", "state_"}, ".txt", template_frame));
  body.validate(model);

  const RegistrationResult r = register_template(model, graph, scan.vertices, body, cfg.weights, cfg.registration);
  const fs::path dir = cfg.path("output");
  ensure_dir(dir);
  DeformGraph fitted = graph;
  fitted.node_rotations = r.graph_rotations;
  fitted.node_translations = r.graph_translations;
  save_points(dir / "displacements.txt", "displacements", r.displacements);
  save_graph(dir / "graph.txt", fitted);
  write_mesh(dir / "template.obj", model.rest_vertices() + r.displacements, model.faces());
  const Points3d before = skin(model, body, canonical_mesh(model, body, Points3d::Zero(model.num_vertices(), 3)));
  const Points3d after = skin(model, body, canonical_mesh(model, body, r.displacements));
  write_mesh(dir / "registered.obj", after, model.faces());
  {
    std::ofstream t(dir / "registration_trace.txt");
    t << "iter objective\n";
    t << "0 " << fmt("%.17g", r.report.initial_objective) << "\n";
    for (size_t i = 0; i < r.report.trace.size(); ++i) t << i + 1 << ' ' << fmt("%.17g", r.report.trace[i]) << "\n";
  }
  out << "register: frame " << template_frame << ", " << r.report.iterations << " iterations ("
      << r.report.status << "), chamfer " << fmt("%.4f", eval_chamfer_cm(before, scan.vertices)) << " cm -> "
      << fmt("%.4f", eval_chamfer_cm(after, scan.vertices)) << " cm\n";
  return 0;
}

int run_track(const RunConfig& cfg, std::ostream& out) {
  cfg.require_paths({"model", "graph", "observations"});
  if (!cfg.has_path("output")) throw ConfigError("paths.output is not configured");
  for (const char* opt : {"prior", "pose_inits", "joint_mapping", "displacements"}) {
    if (cfg.has_path(opt)) cfg.require_paths({opt});
  }
  const BodyModel model = load_model(cfg.path("model"));
  DeformGraph graph = load_graph(cfg.path("graph"));
  graph.reset_transforms();
  if (graph.num_vertices() != model.num_vertices()) {
    throw DimensionError("graph covers " + std::to_string(graph.num_vertices()) + " vertices, model has " +
                         std::to_string(model.num_vertices()));
  }
  Points3d base;
  if (cfg.has_path("displacements")) base = load_points(cfg.path("displacements"), "displacements");
  const SubjectTemplate subject(model, graph, base);
  const std::vector<Observation> obs = read_observations(cfg.path("observations"), cfg.camera);
  const JointMapping mapping =
      cfg.has_path("joint_mapping") ? load_joint_mapping(cfg.path("joint_mapping")) : identity_mapping(model.num_joints());
  for (size_t f = 0; f < obs.size(); ++f) {
    for (const auto& [mj, oj] : mapping) {
      if (oj >= obs[f].num_joints()) {
        throw DimensionError("frame " + std::to_string(f) + " has " + std::to_string(obs[f].num_joints()) +
                             " joints but the mapping references joint " + std::to_string(oj));
      }
      (void)mj;
    }
  }
  std::vector<std::optional<BodyParams>> inits;
  if (cfg.has_path("pose_inits")) inits = read_pose_inits(cfg.path("pose_inits"), static_cast<int>(obs.size()));
  std::optional<GmmPrior> prior;
  if (cfg.has_path("prior")) prior = load_prior(cfg.path("prior"));

  const TrackResult result =
      track_sequence(subject, obs, inits, mapping, prior ? &*prior : nullptr, cfg.weights, cfg.tracking);

  const fs::path dir = cfg.path("output");
  ensure_dir(dir);
  for (size_t f = 0; f < result.vertices.size(); ++f) {
    const int i = static_cast<int>(f);
    write_mesh(dir / frame_name("mesh_", i, ".obj"), result.vertices[f], model.faces());
    save_state(dir / frame_name("state_", i, ".txt"), result.states[f]);
  }
  if (cfg.smoothing_window > 1) {
    const auto smoothed = smooth_sequence(result.vertices, cfg.smoothing_window);
    const fs::path sdir = dir / "smoothed";
    ensure_dir(sdir);
    for (size_t f = 0; f < smoothed.size(); ++f) {
      write_mesh(sdir / frame_name("mesh_", static_cast<int>(f), ".obj"), smoothed[f], model.faces());
    }
  }
  {
    std::ofstream d(dir / "diagnostics.txt");
    write_diagnostics(d, result);
    std::ofstream t(dir / "trace.txt");
    t << "frame stage iter objective\n";
    write_trace(t, result);
    if (!d || !t) throw Error("cannot write diagnostics in " + dir.string());
  }
  int untrackable = 0;
  double mse = 0.0;
  for (const auto& d : result.diagnostics) {
    untrackable += d.untrackable ? 1 : 0;
    mse += d.silhouette_mse;
  }
  out << "track: " << result.vertices.size() << " frames (" << to_string(cfg.tracking.mode) << "), " << untrackable
      << " untrackable, mean silhouette mse " << fmt("%.6f", mse / static_cast<double>(result.vertices.size())) << " -> "
      << dir.string() << "\n";
  return 0;
}

struct EvalOptions {
  std::string pred, gt, observations;
  bool discard_sparse = false;
  int min_joints = 6;
};

int run_eval(const EvalOptions& o, std::ostream& out) {
  const fs::path pred(o.pred), gt(o.gt);
  for (const auto& p : {pred, gt}) {
    if (!fs::is_directory(p)) throw ConfigError(p.string() + " is not a directory");
  }
  if (o.discard_sparse && o.observations.empty()) throw ConfigError("--discard-sparse needs --observations");
  if (o.min_joints < 0) throw ConfigError("--min-joints must be non-negative");

  // name -> (pred dir, gt dir, observation dir)
  std::vector<std::tuple<std::string, fs::path, fs::path, fs::path>> seqs;
  if (fs::exists(pred / frame_name("mesh_", 0, ".obj"))) {
    std::string name = fs::absolute(pred).lexically_normal().filename().string();
    if (name.empty()) name = fs::absolute(pred).lexically_normal().parent_path().filename().string();
    seqs.emplace_back(name, pred, gt, o.observations.empty() ? fs::path() : fs::path(o.observations));
  } else {
    std::vector<fs::path> subs;
    for (const auto& e : fs::directory_iterator(pred)) {
      if (e.is_directory() && fs::exists(e.path() / frame_name("mesh_", 0, ".obj"))) subs.push_back(e.path());
    }
    std::sort(subs.begin(), subs.end());
    for (const auto& s : subs) {
      const std::string name = s.filename().string();
      if (!fs::is_directory(gt / name)) throw ConfigError("no ground truth for sequence '" + name + "'");
      seqs.emplace_back(name, s, gt / name, o.observations.empty() ? fs::path() : fs::path(o.observations) / name);
    }
  }
  if (seqs.empty()) throw ConfigError("no predicted meshes under " + pred.string());

  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %8s %8s %12s\n", "sequence", "frames", "used", "chamfer_cm");
  out << buf;
  for (const auto& [name, pdir, gdir, odir] : seqs) {
    const int n = count_frames(pdir, "mesh_", ".obj");
    double sum = 0.0;
    int used = 0;
    for (int f = 0; f < n; ++f) {
      const fs::path g = gdir / frame_name("mesh_", f, ".obj");
      if (!fs::exists(g)) throw ParseError("missing ground-truth frame " + std::to_string(f) + " for '" + name + "'");
      if (o.discard_sparse) {
        const auto j = read_joints(odir / frame_name("joints_", f, ".txt"));
        const int detected = static_cast<int>((j.col(2).array() > 0.0).count());
        if (detected < o.min_joints) continue;
      }
      sum += eval_chamfer_cm(read_mesh(pdir / frame_name("mesh_", f, ".obj")).vertices, read_mesh(g).vertices);
      ++used;
    }
    std::snprintf(buf, sizeof(buf), "%-24s %8d %8d %12.6f\n", name.c_str(), n, used, used ? sum / used : 0.0);
    out << buf;
  }
  return 0;
}

int run_check_gradients(int configurations, std::uint64_t seed, std::ostream& out) {
  GradientSuiteOptions go;
  go.configurations = configurations;
  go.seed = seed;
  const auto checks = run_gradient_suite(go);
  bool ok = true;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-24s %8s %14s %10s %s\n", "energy", "configs", "max_rel_err", "tolerance", "result");
  out << buf;
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof(buf), "%-24s %8d %14.6e %10.1e %s\n", c.name.c_str(), c.configurations,
                  c.max_relative_error, c.tolerance, c.passed() ? "PASS" : "FAIL");
    out << buf;
    ok = ok && c.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Monocular clothed-body tracking with a deformable parametric template", "morphtrack"};
  app.require_subcommand(1);
  app.fallthrough(false);

  Common synth_c, reg_c, track_c;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic toy sequence with ground truth");
  synth_c.add(synth);
  std::string synth_out;
  synth->add_option("-o,--out", synth_out, "output directory (overrides paths.output)");

  CLI::App* reg = app.add_subcommand("register", "fit template displacements to a scan");
  reg_c.add(reg);
  int template_frame = -1;
  reg->add_option("--template-frame", template_frame, "frame whose scan and body parameters define the template");

  CLI::App* track = app.add_subcommand("track", "track a sequence of observations");
  track_c.add(track);

  CLI::App* eval = app.add_subcommand("eval", "Chamfer distance (cm) between predicted and ground-truth meshes");
  EvalOptions eo;
  eval->add_option("--pred", eo.pred, "predicted mesh directory")->required();
  eval->add_option("--gt", eo.gt, "ground-truth mesh directory")->required();
  eval->add_option("--observations", eo.observations, "observation directory, for --discard-sparse");
  eval->add_flag("--discard-sparse", eo.discard_sparse, "skip frames with fewer than --min-joints detected joints");
  eval->add_option("--min-joints", eo.min_joints, "threshold for --discard-sparse (default 6)");

  CLI::App* grad = app.add_subcommand("check-gradients", "finite-difference check of every energy");
  int configurations = 100;
  std::uint64_t seed = 11;
  grad->add_option("--configurations", configurations, "random configurations per energy");
  grad->add_option("--seed", seed, "random seed");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    err << "\n" << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) {
      std::vector<std::string> sets = synth_c.sets;
      if (!synth_out.empty()) sets.push_back("paths.output=" + fs::absolute(synth_out).string());
      RunConfig cfg = RunConfig::load(synth_c.config, sets);
      return run_synth(cfg, out);
    }
    if (reg->parsed()) {
      const RunConfig cfg = reg_c.load();
      const int frame = template_frame >= 0 ? template_frame : cfg.template_frame;
      return run_register(cfg, frame, out);
    }
    if (track->parsed()) return run_track(track_c.load(), out);
    if (eval->parsed()) return run_eval(eo, out);
    if (grad->parsed()) {
      if (configurations < 1) throw ConfigError("--configurations must be at least 1");
      return run_check_gradients(configurations, seed, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace morphtrack

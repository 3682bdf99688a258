#include "morphtrack/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace morphtrack {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string location(const KeyValues& kv, const std::string& key) {
  const auto it = kv.lines.find(key);
  if (it == kv.lines.end() || it->second < 0) return "override '" + key + "'";
  return kv.source.string() + ":" + std::to_string(it->second);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

struct Binding {
  std::function<void(const std::string& key, const std::string& value)> set;
  std::function<std::string()> get;
};

Binding real(double& x) {
  return {[&x](const std::string& k, const std::string& v) { x = to_double(k, v); }, [&x] { return num(x); }};
}

Binding integer(int& x) {
  return {[&x](const std::string& k, const std::string& v) {
            const long long i = to_integer(k, v);
            if (i < INT32_MIN || i > INT32_MAX) throw ConfigError(k + ": value out of range");
            x = static_cast<int>(i);
          },
          [&x] { return std::to_string(x); }};
}

Binding seed(std::uint64_t& x) {
  return {[&x](const std::string& k, const std::string& v) {
            const long long i = to_integer(k, v);
            if (i < 0) throw ConfigError(k + ": seed must be non-negative");
            x = static_cast<std::uint64_t>(i);
          },
          [&x] { return std::to_string(x); }};
}

Binding boolean(bool& x) {
  return {[&x](const std::string& k, const std::string& v) { x = to_bool(k, v); },
          [&x] { return std::string(x ? "true" : "false"); }};
}

void bind_optimizer(std::map<std::string, Binding>& b, const std::string& prefix, OptimizerConfig& c) {
  b[prefix + ".algorithm"] = {[&c](const std::string& k, const std::string& v) {
                                try {
                                  c.algorithm = parse_algorithm(v);
                                } catch (const ConfigError& e) {
                                  throw ConfigError(k + ": " + e.what());
                                }
                              },
                              [&c] { return to_string(c.algorithm); }};
  b[prefix + ".gradient_mode"] = {[&c](const std::string& k, const std::string& v) {
                                    try {
                                      c.gradient_mode = parse_gradient_mode(v);
                                    } catch (const ConfigError& e) {
                                      throw ConfigError(k + ": " + e.what());
                                    }
                                  },
                                  [&c] { return to_string(c.gradient_mode); }};
  b[prefix + ".max_iters"] = integer(c.max_iters);
  b[prefix + ".tolerance"] = real(c.tolerance);
  b[prefix + ".step_size"] = real(c.step_size);
  b[prefix + ".translation_step_size"] = real(c.translation_step_size);
  b[prefix + ".beta_step_size"] = real(c.beta_step_size);
  b[prefix + ".final_step_ratio"] = real(c.final_step_ratio);
  b[prefix + ".damping"] = real(c.damping);
}

std::map<std::string, Binding> bindings(RunConfig& c) {
  std::map<std::string, Binding> b;
  b["camera.fx"] = real(c.camera.fx);
  b["camera.fy"] = real(c.camera.fy);
  b["camera.cx"] = real(c.camera.cx);
  b["camera.cy"] = real(c.camera.cy);
  b["camera.width"] = integer(c.camera.width);
  b["camera.height"] = integer(c.camera.height);

  EnergyWeights& w = c.weights;
  b["weights.lambda_sil"] = real(w.lambda_sil);
  b["weights.lambda_stab"] = real(w.lambda_stab);
  b["weights.lambda_prior"] = real(w.lambda_prior);
  b["weights.lambda_arap"] = real(w.lambda_arap);
  b["weights.lambda_lap"] = real(w.lambda_lap);
  b["weights.lambda_offset"] = real(w.lambda_offset);
  b["weights.gm_sigma"] = real(w.gm_sigma);
  b["weights.raster_tau"] = real(w.raster_tau);

  bind_optimizer(b, "pose", c.tracking.pose);
  bind_optimizer(b, "surface", c.tracking.surface);
  bind_optimizer(b, "registration", c.registration);

  b["tracking.mode"] = {[&c](const std::string& k, const std::string& v) {
                          try {
                            c.tracking.mode = parse_stage_mode(v);
                          } catch (const ConfigError& e) {
                            throw ConfigError(k + ": " + e.what());
                          }
                        },
                        [&c] { return to_string(c.tracking.mode); }};
  b["tracking.model_height"] = real(c.tracking.model_height);
  b["tracking.smoothing_window"] = integer(c.smoothing_window);
  b["tracking.template_frame"] = integer(c.template_frame);

  SynthSettings& s = c.synth;
  b["synth.height"] = real(s.body.height);
  b["synth.ring_segments"] = integer(s.body.ring_segments);
  b["synth.rings_per_part"] = integer(s.body.rings_per_part);
  b["synth.num_betas"] = integer(s.body.num_betas);
  b["synth.pose_dirs"] = boolean(s.body.pose_dirs);
  b["synth.frames"] = integer(s.walk.frames);
  b["synth.period"] = real(s.walk.period);
  b["synth.leg_swing"] = real(s.walk.leg_swing);
  b["synth.arm_swing"] = real(s.walk.arm_swing);
  b["synth.knee_bend"] = real(s.walk.knee_bend);
  b["synth.step"] = real(s.walk.step);
  b["synth.depth"] = real(s.walk.depth);
  b["synth.phase"] = real(s.walk.phase);
  b["synth.out_of_plane"] = real(s.walk.out_of_plane);
  b["synth.joint_sigma"] = real(s.noise.joint_sigma);
  b["synth.dropout"] = real(s.noise.dropout);
  b["synth.mask_radius"] = integer(s.noise.mask_radius);
  b["synth.pose_init_sigma"] = real(s.noise.pose_init_sigma);
  b["synth.seed"] = seed(s.noise.seed);
  b["synth.image_size"] = integer(s.image_size);
  b["synth.graph_nodes"] = integer(s.graph_nodes);
  b["synth.prior_components"] = integer(s.prior_components);
  b["synth.prior_samples"] = integer(s.prior_samples);
  b["synth.prior_regularization"] = real(s.prior_regularization);
  return b;
}

}  // namespace

const std::vector<std::string>& path_keys() {
  static const std::vector<std::string> keys = {"model",   "graph", "prior", "observations", "pose_inits", "joint_mapping",
                                                "displacements", "scan", "body", "output", "ground_truth"};
  return keys;
}

KeyValues KeyValues::parse(const std::string& text, const fs::path& source) {
  KeyValues kv;
  kv.source = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    const std::string where = (source.empty() ? std::string("line ") : source.string() + ":") + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (kv.values.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    kv.values[key] = value;
    kv.lines[key] = lineno;
  }
  return kv;
}

KeyValues KeyValues::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValues::set(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  values[key] = trim(assignment.substr(eq + 1));
  lines[key] = -1;
}

RunConfig RunConfig::from(const KeyValues& kv) {
  RunConfig c;
  auto b = bindings(c);
  const fs::path base = kv.source.empty() ? fs::current_path() : fs::absolute(kv.source).parent_path();
  for (const auto& [key, value] : kv.values) {
    c.given.insert(key);
    if (key.rfind("paths.", 0) == 0) {
      const std::string name = key.substr(6);
      if (std::find(path_keys().begin(), path_keys().end(), name) == path_keys().end()) {
        throw ConfigError(location(kv, key) + ": unknown path key '" + key + "'");
      }
      if (value.empty()) continue;
      fs::path p(value);
      if (p.is_relative()) {
        const auto it = kv.lines.find(key);
        p = (it != kv.lines.end() && it->second < 0 ? fs::current_path() : base) / p;
      }
      c.paths[name] = p.lexically_normal();
      continue;
    }
    const auto it = b.find(key);
    if (it == b.end()) throw ConfigError(location(kv, key) + ": unknown key '" + key + "'");
    try {
      it->second.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(location(kv, key) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path, const std::vector<std::string>& overrides) {
  KeyValues kv = path.empty() ? KeyValues() : KeyValues::load(path);
  for (const auto& o : overrides) kv.set(o);
  RunConfig c = from(kv);
  c.validate();
  return c;
}

void RunConfig::validate() const {
  weights.validate();
  tracking.validate();
  registration.validate();
  try {
    camera.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("camera: ") + e.what());
  }
  if (smoothing_window < 1 || smoothing_window % 2 == 0) {
    throw ConfigError("tracking.smoothing_window must be a positive odd integer, got " + std::to_string(smoothing_window));
  }
  if (template_frame < 0) throw ConfigError("tracking.template_frame must be non-negative");
  try {
    synth.noise.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  const auto& s = synth;
  if (!(s.body.height > 0.0)) throw ConfigError("synth.height must be positive");
  if (s.body.ring_segments < 3) throw ConfigError("synth.ring_segments must be at least 3");
  if (s.body.rings_per_part < 2) throw ConfigError("synth.rings_per_part must be at least 2");
  if (s.body.num_betas < 0 || s.body.num_betas > 2) throw ConfigError("synth.num_betas must be 0, 1 or 2");
  if (s.walk.frames < 1) throw ConfigError("synth.frames must be at least 1");
  if (!(s.walk.period > 0.0)) throw ConfigError("synth.period must be positive");
  if (!(s.walk.depth > 0.0)) throw ConfigError("synth.depth must be positive");
  if (s.image_size < 8) throw ConfigError("synth.image_size must be at least 8");
  if (s.graph_nodes < 0) throw ConfigError("synth.graph_nodes must be non-negative");
  if (s.prior_components < 1) throw ConfigError("synth.prior_components must be at least 1");
  if (s.prior_samples < s.prior_components) throw ConfigError("synth.prior_samples must be at least prior_components");
  if (!(s.prior_regularization >= 0.0)) throw ConfigError("synth.prior_regularization must be non-negative");
}

bool RunConfig::has_path(const std::string& name) const { return paths.count(name) > 0; }

const fs::path& RunConfig::path(const std::string& name) const {
  const auto it = paths.find(name);
  if (it == paths.end()) throw ConfigError("paths." + name + " is not configured");
  return it->second;
}

void RunConfig::require_paths(const std::vector<std::string>& names) const {
  for (const auto& n : names) {
    if (!fs::exists(path(n))) throw ConfigError("paths." + n + ": " + path(n).string() + " does not exist");
  }
}

std::string format_config(const RunConfig& config, const fs::path& base) {
  RunConfig copy = config;
  const auto b = bindings(copy);
  std::string out;
  std::string section;
  for (const auto& [name, p] : config.paths) {
    out += "paths." + name + " = " + p.lexically_relative(base).string() + "\n";
  }
  for (const auto& [key, binding] : b) {
    if (key.rfind("synth.", 0) == 0) continue;
    const std::string s = key.substr(0, key.find('.'));
    if (s != section) {
      out += "\n";
      section = s;
    }
    out += key + " = " + binding.get() + "\n";
  }
  return out;
}

}  // namespace morphtrack

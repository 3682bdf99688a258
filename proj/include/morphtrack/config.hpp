#pragma once

#include "morphtrack/camera_raster.hpp"
#include "morphtrack/energies.hpp"
#include "morphtrack/optim.hpp"
#include "morphtrack/synth_oracle.hpp"
#include "morphtrack/tracker.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace morphtrack {

/// Flat `key = value` text; `#` starts a comment. Keys are dotted
/// (`weights.lambda_sil`, `pose.max_iters`, `paths.model`, ...).
struct KeyValues {
  std::map<std::string, std::string> values;
  std::map<std::string, int> lines;
  std::filesystem::path source;

  static KeyValues parse(const std::string& text, const std::filesystem::path& source = {});
  static KeyValues load(const std::filesystem::path& path);
  /// `key=value` override; throws ConfigError when malformed.
  void set(const std::string& assignment);
};

struct SynthSettings {
  ToyBodyOptions body;
  WalkOptions walk;
  NoiseModel noise;
  int image_size = 120;
  int graph_nodes = 0;          // 0: about a tenth of the vertex count
  int prior_components = 8;
  int prior_samples = 400;
  double prior_regularization = 1e-2;  // added to every component covariance
};

struct RunConfig {
  // Paths are resolved against the directory of the config file.
  std::map<std::string, std::filesystem::path> paths;
  EnergyWeights weights;
  TrackConfig tracking;
  OptimizerConfig registration{Algorithm::gauss_newton_damped, 300};
  Camera camera;
  int smoothing_window = 1;
  int template_frame = 0;
  SynthSettings synth;
  // Keys set by the file or an override, as opposed to defaults.
  std::set<std::string> given;

  static RunConfig from(const KeyValues& kv);
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

  /// Throws ConfigError when any numeric setting is out of range.
  void validate() const;
  /// Throws ConfigError unless every named path is configured and exists.
  void require_paths(const std::vector<std::string>& names) const;
  bool has_path(const std::string& name) const;
  const std::filesystem::path& path(const std::string& name) const;
};

/// Known path keys, without the `paths.` prefix.
const std::vector<std::string>& path_keys();

/// Text of a config with every setting at its current value, paths relative to base.
std::string format_config(const RunConfig& config, const std::filesystem::path& base);

}  // namespace morphtrack

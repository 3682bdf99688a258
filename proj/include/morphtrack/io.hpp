#pragma once

#include "morphtrack/body_model.hpp"
#include "morphtrack/camera_raster.hpp"
#include "morphtrack/deform_graph.hpp"
#include "morphtrack/energies.hpp"
#include "morphtrack/stages.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace morphtrack {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Structured text arrays
//
//   # comment
//   array <name> <f64|i32> <dim0> [dim1 ...]
//   <prod(dim0..n-2) rows of dim_{n-1} values>
//
// A 1-D array is written one value per row.

struct TextArray {
  std::string name;
  bool integer = false;
  std::vector<int> dims;
  std::vector<double> values;  // row-major

  long long count() const;
  /// Throws ParseError unless the array is 2-D with the given column count
  /// (rows unchecked when negative).
  MatrixXd matrix(int rows, int cols) const;
};

TextArray make_array(const std::string& name, const Eigen::Ref<const MatrixXd>& m, bool integer = false);

std::vector<TextArray> read_arrays(const fs::path& path);
void write_arrays(const fs::path& path, const std::vector<TextArray>& arrays);

/// Array by name; throws ParseError when it is missing (and not optional).
const TextArray* find_array(const std::vector<TextArray>& arrays, const std::string& name, bool required = true);

// ---------------------------------------------------------------------------
// Domain files

BodyModel load_model(const fs::path& path);
void save_model(const fs::path& path, const BodyModel& model);

DeformGraph load_graph(const fs::path& path);
void save_graph(const fs::path& path, const DeformGraph& graph);

GmmPrior load_prior(const fs::path& path);
void save_prior(const fs::path& path, const GmmPrior& prior);

Points3d load_points(const fs::path& path, const std::string& name);
void save_points(const fs::path& path, const std::string& name, const Points3d& points);

BodyParams load_params(const fs::path& path);
void save_params(const fs::path& path, const BodyParams& params);

FrameState load_state(const fs::path& path);
void save_state(const fs::path& path, const FrameState& state);

JointMapping load_joint_mapping(const fs::path& path);
void save_joint_mapping(const fs::path& path, const JointMapping& mapping);

// ---------------------------------------------------------------------------
// Meshes and images

struct Mesh {
  Points3d vertices;
  Faces faces;
};

/// `v x y z` and `f a b c` records, 1-based indices.
void write_mesh(const fs::path& path, const Points3d& vertices, const Faces& faces);
Mesh read_mesh(const fs::path& path);

/// 8-bit P5 graymap; pixels are quantized to round(255 p).
void write_pgm(const fs::path& path, const SilhouetteImage& image);
/// Float Pf graymap, little-endian, rows stored bottom to top.
void write_pfm(const fs::path& path, const SilhouetteImage& image);
/// Reads either P5 (scaled to [0, 1]) or Pf.
SilhouetteImage read_silhouette(const fs::path& path);

// ---------------------------------------------------------------------------
// Observation directories
//
//   joints_000000.txt   one `u v confidence` row per joint
//   mask_000000.pgm     silhouette (P5 or Pf)

std::string frame_name(const std::string& prefix, int frame, const std::string& extension);

Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> read_joints(const fs::path& path);
void write_joints(const fs::path& path, const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& joints);

/// Frames are numbered from 0 without gaps. Each mask must match the camera
/// size. Throws ParseError naming the missing frame, the bad row or the mask.
std::vector<Observation> read_observations(const fs::path& dir, const Camera& camera);
void write_observations(const fs::path& dir, const std::vector<Observation>& observations);

/// params_%06d.txt per frame; absent files give std::nullopt.
std::vector<std::optional<BodyParams>> read_pose_inits(const fs::path& dir, int frames);

/// Number of consecutive frames `<prefix>NNNNNN<extension>` starting at 0.
int count_frames(const fs::path& dir, const std::string& prefix, const std::string& extension);

}  // namespace morphtrack

#include "morphtrack/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

namespace morphtrack {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_double(std::string_view s, double& v) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec == std::errc() && r.ptr == s.data() + s.size()) return true;
  // from_chars rejects "inf"/"nan" spellings some writers use, and a leading '+'.
  std::string tmp(s);
  char* end = nullptr;
  v = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && !tmp.empty();
}

bool parse_int(std::string_view s, int& v) {
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  return r.ec == std::errc() && r.ptr == s.data() + s.size();
}

std::string where(const fs::path& path, int line) { return path.string() + ":" + std::to_string(line); }

std::ifstream open_in(const fs::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

void format_number(std::string& buf, double v, bool integer) {
  char tmp[32];
  if (integer) {
    std::snprintf(tmp, sizeof(tmp), "%lld", static_cast<long long>(std::llround(v)));
  } else {
    std::snprintf(tmp, sizeof(tmp), "%.17g", v);
  }
  buf += tmp;
}

Points3d to_points(const MatrixXd& m) { return m; }

}  // namespace

long long TextArray::count() const {
  long long n = 1;
  for (int d : dims) n *= d;
  return n;
}

MatrixXd TextArray::matrix(int rows, int cols) const {
  if (dims.size() == 1 && cols == 1) {
    if (rows >= 0 && dims[0] != rows) {
      throw ParseError("array '" + name + "' has " + std::to_string(dims[0]) + " entries, expected " + std::to_string(rows));
    }
    return Eigen::Map<const VectorXd>(values.data(), dims[0]);
  }
  if (dims.size() != 2 || dims[1] != cols || (rows >= 0 && dims[0] != rows)) {
    std::string shape;
    for (int d : dims) shape += (shape.empty() ? "" : "x") + std::to_string(d);
    throw ParseError("array '" + name + "' has shape " + shape + ", expected " +
                     (rows >= 0 ? std::to_string(rows) : std::string("?")) + "x" + std::to_string(cols));
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), dims[0],
                                                                                                   dims[1]);
}

TextArray make_array(const std::string& name, const Eigen::Ref<const MatrixXd>& m, bool integer) {
  TextArray a;
  a.name = name;
  a.integer = integer;
  a.dims = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
  a.values.reserve(static_cast<size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.values.push_back(m(r, c));
  return a;
}

std::vector<TextArray> read_arrays(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<TextArray> out;
  std::string line;
  int lineno = 0;
  TextArray* cur = nullptr;
  long long expected = 0;
  int row_width = 0;
  auto next_content = [&](std::vector<std::string_view>& tokens) {
    while (std::getline(in, line)) {
      ++lineno;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      tokens = split(line);
      if (!tokens.empty()) return true;
    }
    return false;
  };
  std::vector<std::string_view> tok;
  while (true) {
    if (cur && static_cast<long long>(cur->values.size()) == expected) cur = nullptr;
    if (!next_content(tok)) break;
    if (!cur) {
      if (tok[0] != "array" || tok.size() < 4) throw ParseError(where(path, lineno) + ": expected 'array <name> <type> <dims...>'");
      TextArray a;
      a.name = std::string(tok[1]);
      if (tok[2] == "i32") {
        a.integer = true;
      } else if (tok[2] != "f64") {
        throw ParseError(where(path, lineno) + ": unknown array type '" + std::string(tok[2]) + "'");
      }
      for (size_t i = 3; i < tok.size(); ++i) {
        int d = 0;
        if (!parse_int(tok[i], d) || d < 0) throw ParseError(where(path, lineno) + ": bad dimension '" + std::string(tok[i]) + "'");
        a.dims.push_back(d);
      }
      for (const auto& prev : out) {
        if (prev.name == a.name) throw ParseError(where(path, lineno) + ": duplicate array '" + a.name + "'");
      }
      out.push_back(std::move(a));
      cur = &out.back();
      expected = cur->count();
      row_width = cur->dims.size() == 1 ? 1 : cur->dims.back();
      cur->values.reserve(static_cast<size_t>(expected));
      continue;
    }
    if (static_cast<int>(tok.size()) != row_width) {
      throw ParseError(where(path, lineno) + ": array '" + cur->name + "' row has " + std::to_string(tok.size()) +
                       " values, expected " + std::to_string(row_width));
    }
    for (auto t : tok) {
      double v = 0.0;
      if (!parse_double(t, v)) throw ParseError(where(path, lineno) + ": bad number '" + std::string(t) + "'");
      if (cur->integer && v != std::floor(v)) throw ParseError(where(path, lineno) + ": non-integer in i32 array '" + cur->name + "'");
      cur->values.push_back(v);
    }
  }
  if (cur && static_cast<long long>(cur->values.size()) != expected) {
    throw ParseError(path.string() + ": array '" + cur->name + "' is truncated");
  }
  return out;
}

void write_arrays(const fs::path& path, const std::vector<TextArray>& arrays) {
  std::ofstream out = open_out(path);
  std::string buf;
  for (const auto& a : arrays) {
    buf = "array " + a.name + (a.integer ? " i32" : " f64");
    for (int d : a.dims) buf += " " + std::to_string(d);
    out << buf << '\n';
    const size_t width = a.dims.size() == 1 ? 1 : static_cast<size_t>(a.dims.empty() ? 1 : a.dims.back());
    if (width == 0) continue;
    for (size_t i = 0; i < a.values.size(); i += width) {
      buf.clear();
      for (size_t k = 0; k < width; ++k) {
        if (k) buf += ' ';
        format_number(buf, a.values[i + k], a.integer);
      }
      out << buf << '\n';
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

const TextArray* find_array(const std::vector<TextArray>& arrays, const std::string& name, bool required) {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  if (required) throw ParseError("missing array '" + name + "'");
  return nullptr;
}

namespace {

// N×3×B stored as (3N)×B.
MatrixXd read_blend(const TextArray& a, int n) {
  if (a.dims.size() != 3 || a.dims[0] != n || a.dims[1] != 3) {
    throw ParseError("array '" + a.name + "' must have shape " + std::to_string(n) + "x3xB");
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a.values.data(), 3 * n,
                                                                                                   a.dims[2]);
}

TextArray blend_array(const std::string& name, const MatrixXd& m) {
  TextArray a = make_array(name, m);
  a.dims = {static_cast<int>(m.rows() / 3), 3, static_cast<int>(m.cols())};
  return a;
}

}  // namespace

BodyModel load_model(const fs::path& path) {
  const auto arrays = read_arrays(path);
  const MatrixXd rest = find_array(arrays, "rest_vertices")->matrix(-1, 3);
  const int n = static_cast<int>(rest.rows());
  const MatrixXd faces = find_array(arrays, "faces")->matrix(-1, 3);
  const MatrixXd weights = find_array(arrays, "skin_weights")->matrix(n, find_array(arrays, "skin_weights")->dims.back());
  const int nj = static_cast<int>(weights.cols());
  const MatrixXd regressor = find_array(arrays, "joint_regressor")->matrix(nj, n);
  const MatrixXd parents = find_array(arrays, "kinematic_parents")->matrix(nj, 1);
  MatrixXd shape, pose;
  if (const TextArray* s = find_array(arrays, "shape_dirs", false)) shape = read_blend(*s, n);
  if (const TextArray* p = find_array(arrays, "pose_dirs", false)) pose = read_blend(*p, n);
  std::vector<int> par(static_cast<size_t>(nj));
  for (int j = 0; j < nj; ++j) par[static_cast<size_t>(j)] = static_cast<int>(parents(j, 0));
  return BodyModel(to_points(rest), faces.cast<int>(), weights, regressor, std::move(par), shape, pose);
}

void save_model(const fs::path& path, const BodyModel& model) {
  std::vector<TextArray> arrays;
  arrays.push_back(make_array("rest_vertices", model.rest_vertices()));
  arrays.push_back(make_array("faces", model.faces().cast<double>(), true));
  arrays.push_back(make_array("skin_weights", model.skin_weights()));
  arrays.push_back(make_array("joint_regressor", model.joint_regressor()));
  const auto& par = model.kinematic_parents();
  VectorXd p(static_cast<Eigen::Index>(par.size()));
  for (size_t j = 0; j < par.size(); ++j) p[static_cast<Eigen::Index>(j)] = par[j];
  TextArray pa = make_array("kinematic_parents", p, true);
  pa.dims = {static_cast<int>(par.size())};
  arrays.push_back(pa);
  if (model.num_betas() > 0) arrays.push_back(blend_array("shape_dirs", model.shape_dirs()));
  if (model.has_pose_dirs()) arrays.push_back(blend_array("pose_dirs", model.pose_dirs()));
  write_arrays(path, arrays);
}

DeformGraph load_graph(const fs::path& path) {
  const auto arrays = read_arrays(path);
  DeformGraph g;
  g.node_positions = to_points(find_array(arrays, "node_positions")->matrix(-1, 3));
  const int k = g.num_nodes();
  const TextArray* nb = find_array(arrays, "node_neighbors");
  const MatrixXd nbm = nb->matrix(k, nb->dims.size() == 2 ? nb->dims[1] : 0);
  g.node_neighbors.resize(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    for (Eigen::Index c = 0; c < nbm.cols(); ++c) {
      const int l = static_cast<int>(nbm(i, c));
      if (l >= 0) g.node_neighbors[static_cast<size_t>(i)].push_back(l);
    }
  }
  const TextArray* vw = find_array(arrays, "vertex_weights");
  if (vw->dims.size() != 3 || vw->dims[2] != 2) throw ParseError("array 'vertex_weights' must have shape Nxkx2");
  const int n = vw->dims[0], width = vw->dims[1];
  g.vertex_weights.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < width; ++c) {
      const size_t at = (static_cast<size_t>(i) * width + c) * 2;
      const int node = static_cast<int>(vw->values[at]);
      if (node >= 0) g.vertex_weights[static_cast<size_t>(i)].push_back({node, vw->values[at + 1]});
    }
  }
  if (const TextArray* r = find_array(arrays, "node_rotations", false)) {
    g.node_rotations = to_points(r->matrix(k, 3));
  } else {
    g.node_rotations = Points3d::Zero(k, 3);
  }
  if (const TextArray* t = find_array(arrays, "node_translations", false)) {
    g.node_translations = to_points(t->matrix(k, 3));
  } else {
    g.node_translations = Points3d::Zero(k, 3);
  }
  g.validate();
  return g;
}

void save_graph(const fs::path& path, const DeformGraph& g) {
  const int k = g.num_nodes();
  size_t deg = 0;
  for (const auto& nb : g.node_neighbors) deg = std::max(deg, nb.size());
  MatrixXd nbm = MatrixXd::Constant(k, static_cast<Eigen::Index>(deg), -1.0);
  for (int i = 0; i < k; ++i) {
    const auto& nb = g.node_neighbors[static_cast<size_t>(i)];
    for (size_t c = 0; c < nb.size(); ++c) nbm(i, static_cast<Eigen::Index>(c)) = nb[c];
  }
  const int width = max_influences(g);
  TextArray vw;
  vw.name = "vertex_weights";
  vw.dims = {g.num_vertices(), width, 2};
  for (const auto& row : g.vertex_weights) {
    for (int c = 0; c < width; ++c) {
      if (c < static_cast<int>(row.size())) {
        vw.values.push_back(row[static_cast<size_t>(c)].node);
        vw.values.push_back(row[static_cast<size_t>(c)].weight);
      } else {
        vw.values.push_back(-1.0);
        vw.values.push_back(0.0);
      }
    }
  }
  write_arrays(path, {make_array("node_positions", g.node_positions), make_array("node_neighbors", nbm, true), vw,
                      make_array("node_rotations", g.node_rotations),
                      make_array("node_translations", g.node_translations)});
}

GmmPrior load_prior(const fs::path& path) {
  const auto arrays = read_arrays(path);
  const VectorXd w = find_array(arrays, "weights")->matrix(-1, 1);
  const int k = static_cast<int>(w.size());
  const TextArray* ma = find_array(arrays, "means");
  const int d = ma->dims.size() == 2 ? ma->dims[1] : 0;
  const MatrixXd means = ma->matrix(k, d);
  const TextArray* ca = find_array(arrays, "covariances");
  if (ca->dims.size() != 3 || ca->dims[0] != k || ca->dims[1] != d || ca->dims[2] != d) {
    throw ParseError("array 'covariances' must have shape " + std::to_string(k) + "x" + std::to_string(d) + "x" +
                     std::to_string(d));
  }
  std::vector<VectorXd> mu;
  std::vector<MatrixXd> cov;
  for (int j = 0; j < k; ++j) {
    mu.push_back(means.row(j).transpose());
    cov.push_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        ca->values.data() + static_cast<size_t>(j) * d * d, d, d));
  }
  return GmmPrior(w, mu, cov);
}

void save_prior(const fs::path& path, const GmmPrior& prior) {
  const int k = prior.num_components(), d = prior.dim();
  TextArray w = make_array("weights", prior.weights());
  w.dims = {k};
  MatrixXd means(k, d);
  for (int j = 0; j < k; ++j) means.row(j) = prior.means()[static_cast<size_t>(j)].transpose();
  TextArray cov;
  cov.name = "covariances";
  cov.dims = {k, d, d};
  for (const auto& c : prior.covariances())
    for (int r = 0; r < d; ++r)
      for (int s = 0; s < d; ++s) cov.values.push_back(c(r, s));
  write_arrays(path, {w, make_array("means", means), cov});
}

Points3d load_points(const fs::path& path, const std::string& name) {
  return to_points(find_array(read_arrays(path), name)->matrix(-1, 3));
}

void save_points(const fs::path& path, const std::string& name, const Points3d& points) {
  write_arrays(path, {make_array(name, points)});
}

namespace {

TextArray vector_array(const std::string& name, const VectorXd& v) {
  TextArray a = make_array(name, v);
  a.dims = {static_cast<int>(v.size())};
  return a;
}

BodyParams params_from(const std::vector<TextArray>& arrays) {
  BodyParams p;
  p.theta = find_array(arrays, "theta")->matrix(-1, 1);
  p.beta = find_array(arrays, "beta")->matrix(-1, 1);
  p.trans = find_array(arrays, "trans")->matrix(3, 1);
  return p;
}

void params_to(std::vector<TextArray>& arrays, const BodyParams& p) {
  arrays.push_back(vector_array("theta", p.theta));
  arrays.push_back(vector_array("beta", p.beta));
  arrays.push_back(vector_array("trans", p.trans));
}

}  // namespace

BodyParams load_params(const fs::path& path) { return params_from(read_arrays(path)); }

void save_params(const fs::path& path, const BodyParams& params) {
  std::vector<TextArray> arrays;
  params_to(arrays, params);
  write_arrays(path, arrays);
}

FrameState load_state(const fs::path& path) {
  const auto arrays = read_arrays(path);
  FrameState s;
  s.body = params_from(arrays);
  s.graph_rotations = to_points(find_array(arrays, "graph_rotations")->matrix(-1, 3));
  s.graph_translations = to_points(find_array(arrays, "graph_translations")->matrix(s.graph_rotations.rows(), 3));
  return s;
}

void save_state(const fs::path& path, const FrameState& state) {
  std::vector<TextArray> arrays;
  params_to(arrays, state.body);
  arrays.push_back(make_array("graph_rotations", state.graph_rotations));
  arrays.push_back(make_array("graph_translations", state.graph_translations));
  write_arrays(path, arrays);
}

JointMapping load_joint_mapping(const fs::path& path) {
  std::ifstream in = open_in(path);
  JointMapping out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto tok = split(line);
    if (tok.empty()) continue;
    int a = 0, b = 0;
    if (tok.size() != 2 || !parse_int(tok[0], a) || !parse_int(tok[1], b) || a < 0 || b < 0) {
      throw ParseError(where(path, lineno) + ": expected '<model joint> <observation joint>'");
    }
    out.emplace_back(a, b);
  }
  return out;
}

void save_joint_mapping(const fs::path& path, const JointMapping& mapping) {
  std::ofstream out = open_out(path);
  out << "# model_joint observation_joint\n";
  for (const auto& [a, b] : mapping) out << a << ' ' << b << '\n';
}

void write_mesh(const fs::path& path, const Points3d& vertices, const Faces& faces) {
  std::ofstream out = open_out(path);
  char buf[128];
  for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", vertices(i, 0), vertices(i, 1), vertices(i, 2));
    out << buf;
  }
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    out << "f " << faces(f, 0) + 1 << ' ' << faces(f, 1) + 1 << ' ' << faces(f, 2) + 1 << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

Mesh read_mesh(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<double> v;
  std::vector<int> f;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto tok = split(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError(where(path, lineno) + ": vertex needs 3 coordinates");
      for (int c = 1; c <= 3; ++c) {
        double x = 0.0;
        if (!parse_double(tok[static_cast<size_t>(c)], x)) throw ParseError(where(path, lineno) + ": bad coordinate");
        v.push_back(x);
      }
    } else if (tok[0] == "f") {
      std::vector<int> idx;
      for (size_t k = 1; k < tok.size(); ++k) {
        std::string_view t = tok[k];
        t = t.substr(0, t.find('/'));
        int i = 0;
        if (!parse_int(t, i) || i == 0) throw ParseError(where(path, lineno) + ": bad face index");
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(v.size() / 3) + i);
      }
      if (idx.size() < 3) throw ParseError(where(path, lineno) + ": face needs at least 3 vertices");
      for (size_t k = 1; k + 1 < idx.size(); ++k) {
        f.push_back(idx[0]);
        f.push_back(idx[k]);
        f.push_back(idx[k + 1]);
      }
    }
  }
  Mesh m;
  m.vertices = Eigen::Map<const Points3d>(v.data(), static_cast<Eigen::Index>(v.size() / 3), 3);
  m.faces = Eigen::Map<const Faces>(f.data(), static_cast<Eigen::Index>(f.size() / 3), 3);
  const int n = static_cast<int>(m.vertices.rows());
  if (m.faces.size() > 0 && (m.faces.minCoeff() < 0 || m.faces.maxCoeff() >= n)) {
    throw ParseError(path.string() + ": face index out of range");
  }
  return m;
}

void write_pgm(const fs::path& path, const SilhouetteImage& image) {
  std::ofstream out = open_out(path, true);
  out << "P5\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(image.width()) * image.height());
  for (int r = 0; r < image.height(); ++r)
    for (int c = 0; c < image.width(); ++c) {
      const double p = std::clamp(image(r, c), 0.0, 1.0);
      bytes[static_cast<size_t>(r) * image.width() + c] = static_cast<unsigned char>(std::lround(255.0 * p));
    }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

void write_pfm(const fs::path& path, const SilhouetteImage& image) {
  std::ofstream out = open_out(path, true);
  out << "Pf\n" << image.width() << ' ' << image.height() << "\n-1.0\n";
  std::vector<float> row(static_cast<size_t>(image.width()));
  for (int r = image.height() - 1; r >= 0; --r) {
    for (int c = 0; c < image.width(); ++c) row[static_cast<size_t>(c)] = static_cast<float>(image(r, c));
    for (float x : row) {
      unsigned char b[4];
      std::memcpy(b, &x, 4);
      if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + 4);
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

namespace {

std::string header_token(std::istream& in, const fs::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok += static_cast<char>(ch);
  }
  if (tok.empty()) throw ParseError(path.string() + ": truncated image header");
  return tok;
}

}  // namespace

SilhouetteImage read_silhouette(const fs::path& path) {
  std::ifstream in = open_in(path, true);
  const std::string magic = header_token(in, path);
  int w = 0, h = 0;
  if (!parse_int(header_token(in, path), w) || !parse_int(header_token(in, path), h) || w <= 0 || h <= 0) {
    throw ParseError(path.string() + ": bad image size");
  }
  SilhouetteImage img(w, h);
  if (magic == "P5") {
    int maxval = 0;
    if (!parse_int(header_token(in, path), maxval) || maxval <= 0 || maxval > 255) {
      throw ParseError(path.string() + ": only 8-bit graymaps are supported");
    }
    std::vector<unsigned char> bytes(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ParseError(path.string() + ": truncated pixel data");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) img(r, c) = bytes[static_cast<size_t>(r) * w + c] / static_cast<double>(maxval);
  } else if (magic == "Pf") {
    double scale = 0.0;
    if (!parse_double(header_token(in, path), scale) || scale == 0.0) throw ParseError(path.string() + ": bad scale");
    const bool little = scale < 0.0;
    for (int r = h - 1; r >= 0; --r) {
      for (int c = 0; c < w; ++c) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (in.gcount() != 4) throw ParseError(path.string() + ": truncated pixel data");
        if (little != (std::endian::native == std::endian::little)) std::reverse(b, b + 4);
        float x;
        std::memcpy(&x, b, 4);
        img(r, c) = x;
      }
    }
  } else {
    throw ParseError(path.string() + ": not a P5 or Pf graymap");
  }
  img.validate();
  return img;
}

std::string frame_name(const std::string& prefix, int frame, const std::string& extension) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d", frame);
  return prefix + buf + extension;
}

Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> read_joints(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::vector<double> v;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto tok = split(line);
    if (tok.empty()) continue;
    double x[3];
    if (tok.size() != 3 || !parse_double(tok[0], x[0]) || !parse_double(tok[1], x[1]) || !parse_double(tok[2], x[2])) {
      throw ParseError(where(path, lineno) + ": expected 'u v confidence'");
    }
    if (!std::isfinite(x[0]) || !std::isfinite(x[1])) throw ParseError(where(path, lineno) + ": non-finite joint");
    if (!(x[2] >= 0.0 && x[2] <= 1.0)) {
      throw ParseError(where(path, lineno) + ": confidence " + std::string(tok[2]) + " outside [0, 1]");
    }
    v.insert(v.end(), x, x + 3);
  }
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
      v.data(), static_cast<Eigen::Index>(v.size() / 3), 3);
}

void write_joints(const fs::path& path, const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& joints) {
  std::ofstream out = open_out(path);
  char buf[96];
  for (Eigen::Index j = 0; j < joints.rows(); ++j) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", joints(j, 0), joints(j, 1), joints(j, 2));
    out << buf;
  }
}

namespace {

// Frame indices of files named <prefix>NNNNNN<ext> for any ext in the set.
std::map<int, fs::path> indexed_files(const fs::path& dir, const std::string& prefix, const std::set<std::string>& exts) {
  std::map<int, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0) continue;
    const std::string ext = entry.path().extension().string();
    if (!exts.count(ext)) continue;
    const std::string digits = name.substr(prefix.size(), name.size() - prefix.size() - ext.size());
    int idx = 0;
    if (digits.empty() || !parse_int(digits, idx) || idx < 0) continue;
    out[idx] = entry.path();
  }
  return out;
}

}  // namespace

int count_frames(const fs::path& dir, const std::string& prefix, const std::string& extension) {
  int n = 0;
  while (fs::exists(dir / frame_name(prefix, n, extension))) ++n;
  return n;
}

std::vector<Observation> read_observations(const fs::path& dir, const Camera& camera) {
  if (!fs::is_directory(dir)) throw ParseError("observation directory " + dir.string() + " does not exist");
  const auto joints = indexed_files(dir, "joints_", {".txt"});
  const auto masks = indexed_files(dir, "mask_", {".pgm", ".pfm"});
  int last = -1;
  if (!joints.empty()) last = std::max(last, joints.rbegin()->first);
  if (!masks.empty()) last = std::max(last, masks.rbegin()->first);
  if (last < 0) throw ParseError("no frames in " + dir.string());
  std::vector<Observation> out;
  for (int f = 0; f <= last; ++f) {
    const auto j = joints.find(f);
    const auto m = masks.find(f);
    if (j == joints.end()) throw ParseError("missing frame " + std::to_string(f) + ": no " + frame_name("joints_", f, ".txt"));
    if (m == masks.end()) throw ParseError("missing frame " + std::to_string(f) + ": no " + frame_name("mask_", f, ".pgm"));
    Observation obs;
    obs.camera = camera;
    obs.joints2d = read_joints(j->second);
    obs.silhouette = read_silhouette(m->second);
    if (obs.silhouette.width() != camera.width || obs.silhouette.height() != camera.height) {
      throw ParseError(m->second.string() + ": mask is " + std::to_string(obs.silhouette.width()) + "x" +
                       std::to_string(obs.silhouette.height()) + " but the camera is " + std::to_string(camera.width) +
                       "x" + std::to_string(camera.height));
    }
    out.push_back(std::move(obs));
  }
  return out;
}

void write_observations(const fs::path& dir, const std::vector<Observation>& observations) {
  fs::create_directories(dir);
  for (size_t f = 0; f < observations.size(); ++f) {
    const int i = static_cast<int>(f);
    write_joints(dir / frame_name("joints_", i, ".txt"), observations[f].joints2d);
    write_pgm(dir / frame_name("mask_", i, ".pgm"), observations[f].silhouette);
  }
}

std::vector<std::optional<BodyParams>> read_pose_inits(const fs::path& dir, int frames) {
  std::vector<std::optional<BodyParams>> out(static_cast<size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    const fs::path p = dir / frame_name("params_", f, ".txt");
    if (fs::exists(p)) out[static_cast<size_t>(f)] = load_params(p);
  }
  return out;
}

}  // namespace morphtrack

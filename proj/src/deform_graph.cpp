#include "morphtrack/deform_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace morphtrack {

namespace {

// Node indices sorted by distance to p (ties broken by index), truncated to count.
std::vector<int> nearest_nodes(const Points3d& nodes, const Vector3d& p, int count, std::vector<double>* dist) {
  const int k = static_cast<int>(nodes.rows());
  std::vector<double> d(static_cast<size_t>(k));
  for (int n = 0; n < k; ++n) d[static_cast<size_t>(n)] = (nodes.row(n).transpose() - p).norm();
  std::vector<int> order(static_cast<size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  count = std::min(count, k);
  std::partial_sort(order.begin(), order.begin() + count, order.end(), [&](int a, int b) {
    const double da = d[static_cast<size_t>(a)], db = d[static_cast<size_t>(b)];
    return da < db || (da == db && a < b);
  });
  order.resize(static_cast<size_t>(count));
  if (dist != nullptr) {
    dist->clear();
    for (int n : order) dist->push_back(d[static_cast<size_t>(n)]);
  }
  return order;
}

std::vector<Matrix3d> node_rotation_matrices(const Points3d& rotations) {
  std::vector<Matrix3d> r(static_cast<size_t>(rotations.rows()));
  for (Eigen::Index k = 0; k < rotations.rows(); ++k) {
    r[static_cast<size_t>(k)] = rodrigues<double>(rotations.row(k).transpose());
  }
  return r;
}

}  // namespace

void DeformGraph::reset_transforms() {
  node_rotations = Points3d::Zero(num_nodes(), 3);
  node_translations = Points3d::Zero(num_nodes(), 3);
}

void DeformGraph::validate() const {
  const int k = num_nodes();
  if (k < 2) throw InvariantError("deformation graph needs at least 2 nodes, got " + std::to_string(k));
  if (static_cast<int>(node_neighbors.size()) != k) throw InvariantError("node_neighbors size mismatch");
  if (node_rotations.rows() != k || node_translations.rows() != k) {
    throw InvariantError("node transform arrays must have one row per node");
  }
  for (int n = 0; n < k; ++n) {
    const auto& nb = node_neighbors[static_cast<size_t>(n)];
    if (nb.empty()) throw InvariantError("node " + std::to_string(n) + " has no neighbors");
    for (int l : nb) {
      if (l < 0 || l >= k || l == n) throw InvariantError("node " + std::to_string(n) + " has invalid neighbor " + std::to_string(l));
      const auto& back = node_neighbors[static_cast<size_t>(l)];
      if (std::find(back.begin(), back.end(), n) == back.end()) {
        throw InvariantError("node_neighbors not symmetric between " + std::to_string(n) + " and " + std::to_string(l));
      }
    }
  }
  for (size_t i = 0; i < vertex_weights.size(); ++i) {
    double sum = 0.0;
    for (const auto& [node, w] : vertex_weights[i]) {
      if (node < 0 || node >= k) throw InvariantError("vertex " + std::to_string(i) + " references invalid node");
      if (!(w >= 0.0)) throw InvariantError("vertex " + std::to_string(i) + " has a negative node weight");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw InvariantError("node weights of vertex " + std::to_string(i) + " sum to " + std::to_string(sum));
    }
  }
}

DeformGraph build_graph(const Points3d& vertices, const Faces& faces, const GraphBuildOptions& options) {
  const int n = static_cast<int>(vertices.rows());
  const int k = options.num_nodes;
  if (k > n) throw InvariantError("requested " + std::to_string(k) + " nodes but the mesh has " + std::to_string(n) + " vertices");
  if (k < 2) throw InvariantError("deformation graph needs at least 2 nodes");
  if (options.k_influence < 1) throw InvariantError("k_influence must be >= 1");
  if (options.n_adj < 1) throw InvariantError("n_adj must be >= 1");
  if (faces.size() > 0 && (faces.minCoeff() < 0 || faces.maxCoeff() >= n)) {
    throw InvariantError("faces reference vertices out of range");
  }
  const Eigen::RowVector3d span = vertices.colwise().maxCoeff() - vertices.colwise().minCoeff();
  if (span.maxCoeff() <= 0.0) throw InvariantError("degenerate mesh: all vertices coincide");

  // Farthest-point sampling seeded at vertex 0.
  std::vector<int> picked;
  picked.reserve(static_cast<size_t>(k));
  std::vector<double> dist(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  int next = 0;
  for (int s = 0; s < k; ++s) {
    picked.push_back(next);
    dist[static_cast<size_t>(next)] = -1.0;
    const Vector3d p = vertices.row(next).transpose();
    int best = -1;
    double best_d = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      auto& di = dist[static_cast<size_t>(i)];
      if (di < 0.0) continue;
      di = std::min(di, (vertices.row(i).transpose() - p).norm());
      if (di > best_d) {
        best_d = di;
        best = i;
      }
    }
    next = best;
  }

  DeformGraph g;
  g.node_positions.resize(k, 3);
  for (int s = 0; s < k; ++s) g.node_positions.row(s) = vertices.row(picked[static_cast<size_t>(s)]);

  std::vector<std::set<int>> adj(static_cast<size_t>(k));
  for (int s = 0; s < k; ++s) {
    const auto near = nearest_nodes(g.node_positions, g.node_positions.row(s).transpose(), options.n_adj + 1, nullptr);
    int added = 0;
    for (int l : near) {
      if (l == s || added >= options.n_adj) continue;
      adj[static_cast<size_t>(s)].insert(l);
      adj[static_cast<size_t>(l)].insert(s);
      ++added;
    }
  }
  g.node_neighbors.resize(static_cast<size_t>(k));
  for (int s = 0; s < k; ++s) g.node_neighbors[static_cast<size_t>(s)].assign(adj[static_cast<size_t>(s)].begin(), adj[static_cast<size_t>(s)].end());

  const int kin = std::min(options.k_influence, k);
  g.vertex_weights.resize(static_cast<size_t>(n));
  std::vector<double> d;
  for (int i = 0; i < n; ++i) {
    const auto near = nearest_nodes(g.node_positions, vertices.row(i).transpose(), kin + 1, &d);
    double dmax = 0.0;
    if (static_cast<int>(near.size()) > kin) {
      dmax = d[static_cast<size_t>(kin)];
    } else {
      dmax = d.back() * (1.0 + 1e-6);
    }
    dmax = std::max(dmax, 1e-9);
    auto& row = g.vertex_weights[static_cast<size_t>(i)];
    double sum = 0.0;
    for (int m = 0; m < kin; ++m) {
      const double t = 1.0 - d[static_cast<size_t>(m)] / dmax;
      const double w = t * t;
      row.push_back({near[static_cast<size_t>(m)], w});
      sum += w;
    }
    if (sum <= 0.0) {
      for (auto& e : row) e.weight = 1.0 / kin;
    } else {
      for (auto& e : row) e.weight /= sum;
    }
  }
  g.reset_transforms();
  return g;
}

Points3d displacements(const DeformGraph& graph, const Points3d& rest_vertices) {
  return displacements(graph, graph.node_rotations, graph.node_translations, rest_vertices);
}

Points3d displacements(const DeformGraph& graph, const Points3d& rotations, const Points3d& translations,
                       const Points3d& rest_vertices) {
  const int n = graph.num_vertices();
  if (rest_vertices.rows() != n) throw DimensionError("rest vertex count does not match the graph");
  const std::vector<Matrix3d> rot = node_rotation_matrices(rotations);
  std::vector<Matrix3d> rot_minus_id(rot.size());
  for (size_t k = 0; k < rot.size(); ++k) rot_minus_id[k] = rot[k] - Matrix3d::Identity();
  Points3d d(n, 3);
  for (int i = 0; i < n; ++i) {
    const Vector3d v = rest_vertices.row(i).transpose();
    Vector3d acc = Vector3d::Zero();
    for (const auto& [k, w] : graph.vertex_weights[static_cast<size_t>(i)]) {
      const Vector3d gk = graph.node_positions.row(k).transpose();
      acc += w * (rot_minus_id[static_cast<size_t>(k)] * (v - gk) + translations.row(k).transpose());
    }
    d.row(i) = acc.transpose();
  }
  return d;
}

GraphGradient displacements_backward(const DeformGraph& graph, const Points3d& rotations,
                                     const Points3d& rest_vertices, const Points3d& d_displacements) {
  const int kn = graph.num_nodes();
  GraphGradient g{Points3d::Zero(kn, 3), Points3d::Zero(kn, 3)};
  std::vector<Matrix3d> moment(static_cast<size_t>(kn), Matrix3d::Zero());
  for (int i = 0; i < graph.num_vertices(); ++i) {
    const Vector3d gd = d_displacements.row(i).transpose();
    const Vector3d v = rest_vertices.row(i).transpose();
    for (const auto& [k, w] : graph.vertex_weights[static_cast<size_t>(i)]) {
      g.translations.row(k) += w * gd.transpose();
      moment[static_cast<size_t>(k)].noalias() += w * gd * (v - graph.node_positions.row(k).transpose()).transpose();
    }
  }
  for (int k = 0; k < kn; ++k) {
    const auto& m = moment[static_cast<size_t>(k)];
    if (m.isZero(0.0)) continue;
    const RotationJacobian rj = rodrigues_jacobian(rotations.row(k).transpose());
    for (int c = 0; c < 3; ++c) g.rotations(k, c) = rj.d_rotation[static_cast<size_t>(c)].cwiseProduct(m).sum();
  }
  return g;
}

double arap_energy(const DeformGraph& graph) {
  return arap_energy(graph, graph.node_rotations, graph.node_translations, nullptr);
}

double arap_energy(const DeformGraph& graph, const Points3d& rotations, const Points3d& translations,
                   GraphGradient* gradient) {
  const int kn = graph.num_nodes();
  if (gradient != nullptr) {
    gradient->rotations = Points3d::Zero(kn, 3);
    gradient->translations = Points3d::Zero(kn, 3);
  }
  double energy = 0.0;
  for (int k = 0; k < kn; ++k) {
    const RotationJacobian rj = rodrigues_jacobian(rotations.row(k).transpose());
    const Matrix3d rmi = rj.rotation - Matrix3d::Identity();
    const Vector3d gk = graph.node_positions.row(k).transpose();
    const Vector3d tk = translations.row(k).transpose();
    for (int l : graph.node_neighbors[static_cast<size_t>(k)]) {
      const Vector3d edge = graph.node_positions.row(l).transpose() - gk;
      const Vector3d d = rmi * edge + tk - translations.row(l).transpose();
      energy += d.squaredNorm();
      if (gradient != nullptr) {
        gradient->translations.row(k) += 2.0 * d.transpose();
        gradient->translations.row(l) -= 2.0 * d.transpose();
        for (int c = 0; c < 3; ++c) {
          gradient->rotations(k, c) += 2.0 * d.dot(rj.d_rotation[static_cast<size_t>(c)] * edge);
        }
      }
    }
  }
  return energy;
}

int max_influences(const DeformGraph& graph) {
  size_t m = 0;
  for (const auto& row : graph.vertex_weights) m = std::max(m, row.size());
  return static_cast<int>(m);
}

}  // namespace morphtrack

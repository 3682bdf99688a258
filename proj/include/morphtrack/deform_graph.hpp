#pragma once

#include "morphtrack/common.hpp"
#include "morphtrack/rotation.hpp"

#include <vector>

namespace morphtrack {

struct NodeInfluence {
  int node;
  double weight;
};

/// Embedded deformation graph: sparse nodes with local rigid transforms whose
/// blended influence warps a dense mesh. Topology is fixed after build; the
/// node rotations (axis-angle) and translations are the mutable parameters.
struct DeformGraph {
  Points3d node_positions;
  std::vector<std::vector<int>> node_neighbors;
  std::vector<std::vector<NodeInfluence>> vertex_weights;
  Points3d node_rotations;
  Points3d node_translations;

  int num_nodes() const { return static_cast<int>(node_positions.rows()); }
  int num_vertices() const { return static_cast<int>(vertex_weights.size()); }

  void reset_transforms();
  /// Throws InvariantError when weights, symmetry or node count are violated.
  void validate() const;
};

struct GraphBuildOptions {
  int num_nodes = 0;
  int k_influence = 4;
  int n_adj = 6;
};

/// Farthest-point node sampling seeded at vertex 0, n_adj-nearest symmetric
/// node adjacency, and (1 - d/d_max)^2 vertex weights over the k_influence
/// nearest nodes. d_max is the distance to the (k_influence+1)-th nearest node.
DeformGraph build_graph(const Points3d& vertices, const Faces& faces, const GraphBuildOptions& options);

/// D_i = sum_k w_ik [R(A_k)(v_i - g_k) + g_k + T_k] - v_i.
Points3d displacements(const DeformGraph& graph, const Points3d& rest_vertices);
Points3d displacements(const DeformGraph& graph, const Points3d& rotations, const Points3d& translations,
                       const Points3d& rest_vertices);

struct GraphGradient {
  Points3d rotations;
  Points3d translations;
};

/// Pulls dE/dD back to the node rotations and translations.
GraphGradient displacements_backward(const DeformGraph& graph, const Points3d& rotations,
                                     const Points3d& rest_vertices, const Points3d& d_displacements);

/// sum_k sum_{l in N(k)} |R(A_k)(g_l - g_k) + T_k + g_k - (g_l + T_l)|^2.
double arap_energy(const DeformGraph& graph);
double arap_energy(const DeformGraph& graph, const Points3d& rotations, const Points3d& translations,
                   GraphGradient* gradient = nullptr);

/// Per-vertex (node, weight) rows padded to a common width.
int max_influences(const DeformGraph& graph);

}  // namespace morphtrack

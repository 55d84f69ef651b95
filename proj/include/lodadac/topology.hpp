#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lodadac/common.hpp"

namespace lodadac::topology {

/// Undirected communication graph over agents 0..n-1. Edges are stored as
/// (i, j) with i < j, sorted and unique.
struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;

  std::vector<int> degrees() const;
  bool connected() const;
};

/// Builds a Graph from an arbitrary pair list, normalizing order and dropping
/// duplicates. Throws std::invalid_argument on out-of-range ids or self-loops.
Graph make_graph(int n, const std::vector<std::pair<int, int>>& pairs);

/// Parses a plain-text edge list: one "i j" pair per line, 0-indexed, '#'
/// starts a comment. n is one past the largest id unless given explicitly.
Graph parse_edge_list(std::istream& in, int n = 0);
Graph load_edge_list(const std::string& path, int n = 0);

enum class Kind { ring, grid2d, complete, custom };

std::string to_string(Kind kind);
Kind kind_from_string(const std::string& s);

/// Row-major dense n x n doubly stochastic matrix together with its support
/// graph and the cached spectral quantity rho = ||W - J||_2.
class MixingMatrix {
public:
  MixingMatrix(Graph graph, std::vector<double> weights);

  int n() const { return graph_.n; }
  double operator()(int i, int j) const { return w_[static_cast<std::size_t>(i) * graph_.n + j]; }
  const std::vector<double>& weights() const { return w_; }
  const Graph& graph() const { return graph_; }
  double rho() const { return rho_; }
  /// Neighbor count of agent i (edges in the graph, self excluded).
  int out_degree(int i) const { return degrees_[i]; }
  const std::vector<int>& degrees() const { return degrees_; }

private:
  Graph graph_;
  std::vector<double> w_;
  std::vector<int> degrees_;
  double rho_ = 0.0;
};

Graph ring_graph(int n);
/// Non-toroidal sqrt(n) x sqrt(n) lattice.
Graph grid2d_graph(int n);
Graph complete_graph(int n);

/// Metropolis-Hastings weights: W_ij = 1/(1+max(deg_i,deg_j)) on edges, the
/// diagonal absorbs the remainder of each row.
MixingMatrix metropolis_weights(const Graph& g);

/// Builds the mixing matrix for a named family. For `custom` the graph must be
/// supplied and n must match it (pass n = graph->n).
MixingMatrix build_topology(Kind kind, int n, const Graph* custom = nullptr);

/// ||W - 11^T/n||_2 for a row-major square matrix of side n, by power
/// iteration on (W-J)^T (W-J).
double spectral_gap(std::span<const double> w, int n);

struct ValidationCheck {
  std::string name;
  bool passed = false;
  double residual = 0.0;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  double rho = 0.0;
  bool all_passed() const;
  const ValidationCheck& find(const std::string& name) const;
};

/// Checks nonnegativity, double stochasticity, sparsity against `mask` (when
/// given), simplicity of eigenvalue 1 and rho < 1. `tol` bounds the
/// admissible residual of each equality check.
ValidationReport validate_mixing(std::span<const double> w, int n, const Graph* mask = nullptr,
                                 double tol = 1e-12);
ValidationReport validate_mixing(const MixingMatrix& w, double tol = 1e-12);

}  // namespace lodadac::topology

#include "lodadac/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lodadac::topology {

namespace {

constexpr double kPowerTol = 1e-12;
constexpr int kPowerMaxIter = 10000;

// Connected components of the undirected graph on n nodes induced by `adj`.
int count_components(int n, const std::vector<std::vector<int>>& adj) {
  std::vector<int> seen(n, 0);
  int components = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (seen[s]) continue;
    ++components;
    seen[s] = 1;
    stack.push_back(s);
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int u : adj[v])
        if (!seen[u]) {
          seen[u] = 1;
          stack.push_back(u);
        }
    }
  }
  return components;
}

// y = (W - J) x for row-major W.
void apply_centered(std::span<const double> w, int n, std::span<const double> x, std::span<double> y) {
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += w[static_cast<std::size_t>(i) * n + j] * x[j];
    y[i] = s - mean;
  }
}

// y = (W - J)^T x.
void apply_centered_t(std::span<const double> w, int n, std::span<const double> x, std::span<double> y) {
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  for (int j = 0; j < n; ++j) y[j] = -mean;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) y[j] += w[static_cast<std::size_t>(i) * n + j] * x[i];
}

}  // namespace

std::vector<int> Graph::degrees() const {
  std::vector<int> deg(n, 0);
  for (auto [i, j] : edges) {
    ++deg[i];
    ++deg[j];
  }
  return deg;
}

bool Graph::connected() const {
  std::vector<std::vector<int>> adj(n);
  for (auto [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  return n > 0 && count_components(n, adj) == 1;
}

Graph make_graph(int n, const std::vector<std::pair<int, int>>& pairs) {
  if (n < 2) throw std::invalid_argument("graph needs at least 2 agents, got " + std::to_string(n));
  Graph g;
  g.n = n;
  for (auto [a, b] : pairs) {
    if (a < 0 || b < 0 || a >= n || b >= n)
      throw std::invalid_argument("edge (" + std::to_string(a) + "," + std::to_string(b) +
                                  ") out of range for n=" + std::to_string(n));
    if (a == b) throw std::invalid_argument("self-loop on agent " + std::to_string(a));
    g.edges.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  return g;
}

Graph parse_edge_list(std::istream& in, int n) {
  std::vector<std::pair<int, int>> pairs;
  std::string line;
  int max_id = -1;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int a = 0, b = 0;
    if (!(ls >> a)) continue;  // blank or comment-only
    std::string rest;
    if (!(ls >> b) || (ls >> rest))
      throw std::invalid_argument("edge list line " + std::to_string(lineno) + ": expected \"i j\"");
    pairs.emplace_back(a, b);
    max_id = std::max({max_id, a, b});
  }
  return make_graph(n > 0 ? n : max_id + 1, pairs);
}

Graph load_edge_list(const std::string& path, int n) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open edge list: " + path);
  return parse_edge_list(in, n);
}

std::string to_string(Kind kind) {
  switch (kind) {
    case Kind::ring: return "ring";
    case Kind::grid2d: return "grid2d";
    case Kind::complete: return "complete";
    case Kind::custom: return "custom";
  }
  return "?";
}

Kind kind_from_string(const std::string& s) {
  if (s == "ring") return Kind::ring;
  if (s == "grid2d") return Kind::grid2d;
  if (s == "complete") return Kind::complete;
  if (s == "custom") return Kind::custom;
  throw std::invalid_argument("unknown topology kind: " + s);
}

MixingMatrix::MixingMatrix(Graph graph, std::vector<double> weights)
    : graph_(std::move(graph)), w_(std::move(weights)), degrees_(graph_.degrees()) {
  if (w_.size() != static_cast<std::size_t>(graph_.n) * graph_.n)
    throw std::invalid_argument("mixing matrix size does not match graph");
  rho_ = spectral_gap(w_, graph_.n);
}

Graph ring_graph(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) pairs.emplace_back(i, (i + 1) % n);
  return make_graph(n, pairs);
}

Graph grid2d_graph(int n) {
  int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) throw std::invalid_argument("grid2d requires a perfect-square n, got " + std::to_string(n));
  std::vector<std::pair<int, int>> pairs;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      int v = r * side + c;
      if (c + 1 < side) pairs.emplace_back(v, v + 1);
      if (r + 1 < side) pairs.emplace_back(v, v + side);
    }
  return make_graph(n, pairs);
}

Graph complete_graph(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  return make_graph(n, pairs);
}

MixingMatrix metropolis_weights(const Graph& g) {
  if (!g.connected()) throw std::invalid_argument("communication graph is disconnected");
  const int n = g.n;
  const auto deg = g.degrees();
  std::vector<double> w(static_cast<std::size_t>(n) * n, 0.0);
  for (auto [i, j] : g.edges) {
    double v = 1.0 / (1.0 + std::max(deg[i], deg[j]));
    w[static_cast<std::size_t>(i) * n + j] = v;
    w[static_cast<std::size_t>(j) * n + i] = v;
  }
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j = 0; j < n; ++j)
      if (j != i) off += w[static_cast<std::size_t>(i) * n + j];
    w[static_cast<std::size_t>(i) * n + i] = 1.0 - off;
  }
  return MixingMatrix(g, std::move(w));
}

MixingMatrix build_topology(Kind kind, int n, const Graph* custom) {
  if (n < 2) throw std::invalid_argument("topology needs n >= 2, got " + std::to_string(n));
  switch (kind) {
    case Kind::ring: return metropolis_weights(ring_graph(n));
    case Kind::grid2d: return metropolis_weights(grid2d_graph(n));
    case Kind::complete: {
      // Uniform weights make W = J exactly.
      Graph g = complete_graph(n);
      std::vector<double> w(static_cast<std::size_t>(n) * n, 1.0 / n);
      return MixingMatrix(std::move(g), std::move(w));
    }
    case Kind::custom:
      if (!custom) throw std::invalid_argument("custom topology requires a graph");
      if (custom->n != n) throw std::invalid_argument("custom graph size does not match n");
      return metropolis_weights(*custom);
  }
  throw std::invalid_argument("unknown topology kind");
}

double spectral_gap(std::span<const double> w, int n) {
  if (n < 1 || w.size() != static_cast<std::size_t>(n) * n)
    throw std::invalid_argument("spectral_gap: matrix is not square");
  // Deterministic start: normalized ones plus a fixed perturbation. The ones
  // component is annihilated by (W-J)^T(W-J) for doubly stochastic W, the
  // perturbation keeps the iterate off that null direction.
  Vec v(n), tmp(n), next(n);
  for (int i = 0; i < n; ++i) v[i] = 1.0 / std::sqrt(static_cast<double>(n)) + 1e-3 * std::sin(1.0 + 7.0 * i) + 1e-4 * i;
  double nv = std::sqrt(norm_sq(v));
  for (double& x : v) x /= nv;

  double lambda = 0.0;
  for (int it = 0; it < kPowerMaxIter; ++it) {
    apply_centered(w, n, v, tmp);
    apply_centered_t(w, n, tmp, next);
    double rayleigh = dot(v, next);
    double nn = std::sqrt(norm_sq(next));
    if (nn == 0.0) return 0.0;
    lambda = std::max(rayleigh, 0.0);
    double resid = 0.0;
    for (int i = 0; i < n; ++i) {
      double r = next[i] - rayleigh * v[i];
      resid += r * r;
    }
    for (int i = 0; i < n; ++i) v[i] = next[i] / nn;
    if (std::sqrt(resid) <= kPowerTol * std::max(1.0, lambda)) break;
  }
  return std::sqrt(lambda);
}

bool ValidationReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const ValidationCheck& c) { return c.passed; });
}

const ValidationCheck& ValidationReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return c;
  throw std::out_of_range("no validation check named " + name);
}

ValidationReport validate_mixing(std::span<const double> w, int n, const Graph* mask, double tol) {
  ValidationReport rep;
  auto at = [&](int i, int j) { return w[static_cast<std::size_t>(i) * n + j]; };

  double min_entry = 0.0;
  bool finite = true;
  for (double v : w) {
    finite = finite && std::isfinite(v);
    min_entry = std::min(min_entry, v);
  }
  rep.checks.push_back({"finite", finite, finite ? 0.0 : 1.0});
  rep.checks.push_back({"nonnegative", min_entry >= 0.0, -min_entry});

  double row_dev = 0.0, col_dev = 0.0;
  for (int i = 0; i < n; ++i) {
    double rs = 0.0, cs = 0.0;
    for (int j = 0; j < n; ++j) {
      rs += at(i, j);
      cs += at(j, i);
    }
    row_dev = std::max(row_dev, std::abs(rs - 1.0));
    col_dev = std::max(col_dev, std::abs(cs - 1.0));
  }
  double ds = std::max(row_dev, col_dev);
  rep.checks.push_back({"doubly_stochastic", ds <= tol, ds});

  if (mask) {
    double leak = 0.0;
    std::vector<char> allowed(static_cast<std::size_t>(n) * n, 0);
    for (auto [i, j] : mask->edges) {
      allowed[static_cast<std::size_t>(i) * n + j] = 1;
      allowed[static_cast<std::size_t>(j) * n + i] = 1;
    }
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j && !allowed[static_cast<std::size_t>(i) * n + j]) leak = std::max(leak, std::abs(at(i, j)));
    rep.checks.push_back({"sparsity_mask", leak == 0.0, leak});
  }

  // For a nonnegative doubly stochastic matrix the multiplicity of eigenvalue 1
  // equals the number of connected components of its support.
  std::vector<std::vector<int>> adj(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && at(i, j) != 0.0) adj[i].push_back(j), adj[j].push_back(i);
  int components = count_components(n, adj);
  rep.checks.push_back({"simple_eigenvalue_one", components == 1, static_cast<double>(components - 1)});

  rep.rho = finite ? spectral_gap(w, n) : std::numeric_limits<double>::infinity();
  rep.checks.push_back({"rho_below_one", rep.rho < 1.0, rep.rho});
  return rep;
}

ValidationReport validate_mixing(const MixingMatrix& w, double tol) {
  return validate_mixing(w.weights(), w.n(), &w.graph(), tol);
}

}  // namespace lodadac::topology

#pragma once

#include <Eigen/Dense>

#include <queue>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace tbgsim {

/// Thrown when an operation requires a connected graph but the algebraic
/// connectivity is (numerically) zero.
struct DisconnectedGraph : std::runtime_error {
  DisconnectedGraph() : std::runtime_error("graph is not connected") {}
};

/// Undirected weighted communication graph over n agents, stored as a
/// symmetric nonnegative adjacency matrix with zero diagonal.
class Graph {
 public:
  using Edge = std::tuple<int, int, double>;

  Graph(int n, const std::vector<Edge>& edges) : n_(n), w_(Eigen::MatrixXd::Zero(n, n)) {
    if (n <= 0) throw std::invalid_argument("graph: agent count must be positive");
    for (const auto& [i, j, weight] : edges) {
      if (i < 0 || i >= n || j < 0 || j >= n) throw std::invalid_argument("graph: edge index out of range");
      if (i == j) throw std::invalid_argument("graph: self-loops are not allowed");
      if (weight <= 0.0) throw std::invalid_argument("graph: edge weight must be positive");
      if (w_(i, j) != 0.0) throw std::invalid_argument("graph: duplicate edge");
      w_(i, j) = weight;
      w_(j, i) = weight;
    }
  }

  /// Chain 0-1-...-(n-1) with unit weights.
  static Graph path(int n) {
    std::vector<Edge> edges;
    for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1, 1.0);
    return Graph(n, edges);
  }

  /// Cycle 0-1-...-(n-1)-0 with unit weights.
  static Graph cycle(int n) {
    if (n < 3) throw std::invalid_argument("graph: a cycle needs at least 3 nodes");
    std::vector<Edge> edges;
    for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1, 1.0);
    edges.emplace_back(n - 1, 0, 1.0);
    return Graph(n, edges);
  }

  int size() const { return n_; }
  const Eigen::MatrixXd& weights() const { return w_; }

  /// Graph Laplacian L with L_ii = sum_j w_ij and L_ij = -w_ij; rows sum to
  /// zero exactly by construction.
  Eigen::MatrixXd laplacian() const {
    Eigen::MatrixXd lap = -w_;
    for (int i = 0; i < n_; ++i) lap(i, i) = w_.row(i).sum();
    return lap;
  }

  /// Breadth-first reachability over positive-weight edges.
  bool is_connected() const {
    std::vector<bool> seen(n_, false);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = true;
    int reached = 1;
    while (!frontier.empty()) {
      const int v = frontier.front();
      frontier.pop();
      for (int u = 0; u < n_; ++u) {
        if (!seen[u] && w_(v, u) > 0.0) {
          seen[u] = true;
          ++reached;
          frontier.push(u);
        }
      }
    }
    return reached == n_;
  }

 private:
  int n_;
  Eigen::MatrixXd w_;
};

/// Laplacian eigenvalue summary used by the coefficient selector.
struct SpectralBounds {
  double lambda2 = 0.0;     ///< second-smallest eigenvalue of L (algebraic connectivity)
  double lambdaN = 0.0;     ///< largest eigenvalue of L
  double lambdaN_L2 = 0.0;  ///< largest eigenvalue of L^2 (= lambdaN^2 for symmetric L)
};

inline Graph build_graph(int n, const std::vector<Graph::Edge>& edges) { return Graph(n, edges); }

inline Eigen::MatrixXd laplacian(const Graph& g) { return g.laplacian(); }

inline bool is_connected(const Graph& g) { return g.is_connected(); }

/// Dense symmetric eigen-decomposition of the Laplacian. Throws
/// DisconnectedGraph when the algebraic connectivity is below 1e-10 (BFS is
/// the authoritative connectivity check and is consulted first).
inline SpectralBounds spectral_bounds(const Graph& g) {
  if (!g.is_connected()) throw DisconnectedGraph();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g.laplacian());
  if (solver.info() != Eigen::Success) throw std::runtime_error("spectral_bounds: eigensolver failed");
  const Eigen::VectorXd& ev = solver.eigenvalues();  // ascending
  const int n = g.size();
  SpectralBounds out;
  out.lambda2 = (n >= 2) ? ev(1) : 0.0;
  out.lambdaN = ev(n - 1);
  out.lambdaN_L2 = out.lambdaN * out.lambdaN;
  if (n >= 2 && out.lambda2 <= 1e-10) throw DisconnectedGraph();
  return out;
}

}  // namespace tbgsim

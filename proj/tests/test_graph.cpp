#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tbgsim/graph.hpp"

namespace {

// Independent eigenvalue oracle: classical cyclic Jacobi sweeps on a symmetric
// matrix. Deliberately avoids Eigen's solver so spectral_bounds is checked
// against different arithmetic.
std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd a) {
  const int n = static_cast<int>(a.rows());
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-26) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-18) continue;
        const double theta = 0.5 * (a(q, q) - a(p, p)) / a(p, q);
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        Eigen::MatrixXd g = Eigen::MatrixXd::Identity(n, n);
        g(p, p) = c;
        g(q, q) = c;
        g(p, q) = s;
        g(q, p) = -s;
        a = (g.transpose() * a * g).eval();
      }
    }
  }
  std::vector<double> ev(n);
  for (int i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

}  // namespace

TEST_CASE("path graph Laplacian has the textbook tridiagonal form") {
  const tbgsim::Graph g = tbgsim::Graph::path(3);
  const Eigen::MatrixXd lap = g.laplacian();
  Eigen::MatrixXd expected(3, 3);
  expected << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  REQUIRE((lap - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Laplacian rows sum to zero exactly and the matrix is symmetric") {
  const tbgsim::Graph g = tbgsim::Graph::cycle(4);
  const Eigen::MatrixXd lap = g.laplacian();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(4);
  REQUIRE((lap * ones).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((lap - lap.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("spectral bounds of the 3-path match closed-form eigenvalues") {
  const tbgsim::Graph g = tbgsim::Graph::path(3);
  const tbgsim::SpectralBounds sb = tbgsim::spectral_bounds(g);
  // Path-3 Laplacian eigenvalues are {0, 1, 3}.
  REQUIRE(sb.lambda2 == Catch::Approx(1.0).epsilon(1e-10));
  REQUIRE(sb.lambdaN == Catch::Approx(3.0).epsilon(1e-10));
  REQUIRE(sb.lambdaN_L2 == Catch::Approx(9.0).epsilon(1e-10));
}

TEST_CASE("spectral bounds agree with an independent Jacobi eigensolver") {
  for (const tbgsim::Graph& g : {tbgsim::Graph::path(3), tbgsim::Graph::cycle(4),
                                 tbgsim::Graph::path(5)}) {
    const tbgsim::SpectralBounds sb = tbgsim::spectral_bounds(g);
    const std::vector<double> ev = jacobi_eigenvalues(g.laplacian());
    REQUIRE(ev.front() == Catch::Approx(0.0).margin(1e-8));
    REQUIRE(sb.lambda2 == Catch::Approx(ev[1]).margin(1e-8));
    REQUIRE(sb.lambdaN == Catch::Approx(ev.back()).margin(1e-8));
    const std::vector<double> ev2 =
        jacobi_eigenvalues((g.laplacian() * g.laplacian()).eval());
    REQUIRE(sb.lambdaN_L2 == Catch::Approx(ev2.back()).margin(1e-7));
  }
}

TEST_CASE("4-cycle spectral pins") {
  const tbgsim::SpectralBounds sb = tbgsim::spectral_bounds(tbgsim::Graph::cycle(4));
  REQUIRE(sb.lambda2 == Catch::Approx(2.0).epsilon(1e-10));
  REQUIRE(sb.lambdaN == Catch::Approx(4.0).epsilon(1e-10));
  REQUIRE(sb.lambdaN_L2 == Catch::Approx(16.0).epsilon(1e-10));
}

TEST_CASE("connectivity detection") {
  REQUIRE(tbgsim::Graph::path(4).is_connected());
  const tbgsim::Graph disconnected(4, {{0, 1, 1.0}, {2, 3, 1.0}});
  REQUIRE_FALSE(disconnected.is_connected());
  REQUIRE_THROWS_AS(tbgsim::spectral_bounds(disconnected), tbgsim::DisconnectedGraph);
  const tbgsim::Graph edgeless(2, {});
  REQUIRE_FALSE(edgeless.is_connected());
  REQUIRE_THROWS_AS(tbgsim::spectral_bounds(edgeless), tbgsim::DisconnectedGraph);
}

TEST_CASE("graph construction rejects malformed edge lists") {
  REQUIRE_THROWS_AS(tbgsim::Graph(3, {{0, 3, 1.0}}), std::invalid_argument);   // out of range
  REQUIRE_THROWS_AS(tbgsim::Graph(3, {{1, 1, 1.0}}), std::invalid_argument);   // self loop
  REQUIRE_THROWS_AS(tbgsim::Graph(3, {{0, 1, 0.0}}), std::invalid_argument);   // zero weight
  REQUIRE_THROWS_AS(tbgsim::Graph(3, {{0, 1, -2.0}}), std::invalid_argument);  // negative weight
  REQUIRE_THROWS_AS(tbgsim::Graph(3, {{0, 1, 1.0}, {1, 0, 1.0}}), std::invalid_argument);
  REQUIRE_THROWS_AS(tbgsim::Graph::cycle(2), std::invalid_argument);
  REQUIRE_THROWS_AS(tbgsim::Graph(0, {}), std::invalid_argument);
}

TEST_CASE("weighted edges enter the Laplacian with their weight") {
  const tbgsim::Graph g(3, {{0, 1, 2.5}, {1, 2, 0.5}});
  const Eigen::MatrixXd lap = g.laplacian();
  REQUIRE(lap(0, 0) == 2.5);
  REQUIRE(lap(0, 1) == -2.5);
  REQUIRE(lap(1, 1) == 3.0);
  REQUIRE(lap(2, 2) == 0.5);
}

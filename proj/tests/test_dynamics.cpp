#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "tbgsim/costs.hpp"
#include "tbgsim/dynamics.hpp"
#include "tbgsim/graph.hpp"
#include "tbgsim/integrator.hpp"
#include "tbgsim/tbg.hpp"

namespace {

std::vector<tbgsim::CostFunction> rap_quadratics() {
  return {tbgsim::quadratic_cost(4.0, 3.0), tbgsim::quadratic_cost(2.0, 4.0),
          tbgsim::quadratic_cost(1.0, 5.0), tbgsim::quadratic_cost(3.0, 2.0)};
}

Eigen::VectorXd vec(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("resource-allocation dynamics: hand-computed initial derivative") {
  // 4-cycle, quadratic catalog, q0 = 145 split evenly, gain 80, varrho 8.
  const tbgsim::Graph g = tbgsim::Graph::cycle(4);
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(80.0, 7.0, 80.0);
  const tbgsim::RapSystem sys(g, rap_quadratics(), Eigen::VectorXd::Constant(4, 145.0 / 4.0),
                              tbg, 8.0);
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(16);
  s0.head(4) = vec({40.0, 35.0, 45.0, 40.0});
  Eigen::VectorXd ds;
  sys(0.0, s0, ds);
  // dx_1 = -8 * (4*40 + 3) + 80 * (0 - 40) = -1304 - 3200.
  REQUIRE(ds(0) == Catch::Approx(-4504.0).epsilon(1e-12));
  // dy_1 = 80 * (145/4 - 40) with y = z = 0.
  REQUIRE(ds(4) == Catch::Approx(-300.0).epsilon(1e-12));
  // z and u start at rest and see only Laplacian terms of y = z = u = 0 and x.
  REQUIRE(ds(8) == 0.0);
  // du_1 = 80 * (L(y - x))_1 = -80 * (Lx)_1 = -80 * (2*40 - 35 - 40).
  REQUIRE(ds(12) == Catch::Approx(-80.0 * 5.0).epsilon(1e-12));
}

TEST_CASE("consensus dynamics: hand-computed initial derivative") {
  const tbgsim::Graph g = tbgsim::Graph::path(3);
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(20.0, 1.0, 20.0);
  const tbgsim::ConsensusSystem sys(g, tbgsim::consensus_quadratics(), tbg, 0.2);
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(6);
  s0.head(3) = vec({20.0, 5.0, -15.0});
  Eigen::VectorXd ds;
  sys(0.0, s0, ds);
  // dx_1 = -0.2 * (20 - 1) - 20 * (20 - 5) = -3.8 - 300.
  REQUIRE(ds(0) == Catch::Approx(-303.8).epsilon(1e-12));
  // dw_1 = 20 * (Lx)_1 = 20 * 15.
  REQUIRE(ds(3) == Catch::Approx(300.0).epsilon(1e-12));
}

TEST_CASE("baseline flag replaces the fixed coefficient with the live gain") {
  const tbgsim::Graph g = tbgsim::Graph::path(3);
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(20.0, 1.0, 20.0);
  const tbgsim::ConsensusSystem sys(g, tbgsim::consensus_quadratics(), tbg, 0.2, true);
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(6);
  s0.head(3) = vec({20.0, 5.0, -15.0});
  Eigen::VectorXd ds;
  sys(0.0, s0, ds);
  // Gradient coefficient becomes 20: dx_1 = -20 * 19 - 20 * 15.
  REQUIRE(ds(0) == Catch::Approx(-680.0).epsilon(1e-12));
}

TEST_CASE("recovered resource-allocation equilibrium is a fixed point") {
  const tbgsim::Graph g = tbgsim::Graph::cycle(4);
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(80.0, 7.0, 80.0);
  const auto costs = rap_quadratics();
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(4, 145.0 / 4.0);
  const tbgsim::RapSystem sys(g, costs, q, tbg, 8.0);
  // Exact shared-marginal solution of the quadratic catalog at q0 = 145.
  const Eigen::VectorXd x_star = vec({17.66, 34.82, 68.64, 23.88});
  const tbgsim::RapState eq =
      tbgsim::rap_equilibrium(x_star, costs, q, g, 8.0, 80.0, 0.0, 0.0);
  Eigen::VectorXd ds;
  sys(0.0, tbgsim::pack(eq), ds);
  REQUIRE(ds.lpNorm<Eigen::Infinity>() <= 1e-7);
  REQUIRE(eq.z.mean() == Catch::Approx(0.0).margin(1e-10));
  REQUIRE(eq.u.mean() == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("recovered consensus equilibrium is a fixed point") {
  const tbgsim::Graph g = tbgsim::Graph::path(3);
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(20.0, 1.0, 20.0);
  const auto costs = tbgsim::consensus_quadratics();
  const tbgsim::ConsensusSystem sys(g, costs, tbg, 0.2);
  const Eigen::VectorXd x_star = Eigen::VectorXd::Constant(3, 10.0 / 3.0);
  const tbgsim::ConsensusState eq =
      tbgsim::consensus_equilibrium(x_star, costs, g, 0.2, 20.0, 0.0);
  Eigen::VectorXd ds;
  sys(0.0, tbgsim::pack(eq), ds);
  REQUIRE(ds.lpNorm<Eigen::Infinity>() <= 1e-10);
  REQUIRE(eq.w.mean() == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("coefficient selection: resource-allocation pins") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(80.0, 7.0, 80.0);

  const auto path3 = tbgsim::spectral_bounds(tbgsim::Graph::path(3));
  const auto cs3 = tbgsim::select_coefficients_rap(path3, 1.0, tbg);
  REQUIRE(cs3.gamma == 2.0);
  REQUIRE(cs3.beta == Catch::Approx(14.0).epsilon(1e-12));
  REQUIRE(cs3.rho == Catch::Approx(194.5).epsilon(1e-12));

  const auto cyc4 = tbgsim::spectral_bounds(tbgsim::Graph::cycle(4));
  const auto cs4 = tbgsim::select_coefficients_rap(cyc4, 4.0, tbg);
  REQUIRE(cs4.beta == Catch::Approx(12.25).epsilon(1e-12));
  REQUIRE(cs4.rho == Catch::Approx(109.53125).epsilon(1e-12));

  // The selected weights satisfy their defining inequalities.
  for (const auto* pair : {&cs3, &cs4}) {
    const auto& cs = *pair;
    const auto& sb = (pair == &cs3) ? path3 : cyc4;
    REQUIRE(2.0 * cs.beta * sb.lambda2 >= 1.0 + 3.0 * sb.lambdaN_L2 - 1e-9);
    REQUIRE(2.0 * cs.rho >=
            1.0 + cs.beta * cs.beta + cs.gamma * cs.gamma * sb.lambdaN_L2 + cs.gamma * cs.gamma -
                1e-9);
    REQUIRE(cs.rho * sb.lambda2 + cs.gamma * sb.lambda2 >= 0.5 + cs.beta * cs.beta - 1e-9);
  }
}

TEST_CASE("coefficient selection: consensus pins and margins") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(20.0, 1.0, 20.0);
  const auto path3 = tbgsim::spectral_bounds(tbgsim::Graph::path(3));
  const auto cs = tbgsim::select_coefficients_consensus(path3, 1.0, tbg);
  REQUIRE(cs.rho == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(cs.beta == Catch::Approx(0.5).epsilon(1e-12));
  REQUIRE(cs.rho * path3.lambda2 >= 0.5 - 1e-12);
  REQUIRE(cs.beta * path3.lambda2 >= 0.5 - 1e-12);
  // Auto-chosen coefficient: 0.9 * alpha * min(rho,beta) / (D * Upsilon1) = 9.
  REQUIRE(cs.Upsilon1 == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(cs.varrho == Catch::Approx(9.0).epsilon(1e-12));
  REQUIRE(cs.delta == Catch::Approx(18.0).epsilon(1e-12));
  REQUIRE(cs.margin_limit == Catch::Approx(20.0).epsilon(1e-12));
  REQUIRE(cs.margin_ok);

  const auto cyc4 = tbgsim::spectral_bounds(tbgsim::Graph::cycle(4));
  const auto cs4 = tbgsim::select_coefficients_consensus(cyc4, 1.0, tbg);
  REQUIRE(cs4.rho == Catch::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("an oversized override coefficient breaks the margin") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(80.0, 7.0, 80.0);
  const auto cyc4 = tbgsim::spectral_bounds(tbgsim::Graph::cycle(4));
  const auto cs = tbgsim::select_coefficients_rap(cyc4, 4.0, tbg, 8.0);
  REQUIRE(cs.varrho == 8.0);
  REQUIRE(cs.delta > cs.margin_limit);
  REQUIRE_FALSE(cs.margin_ok);
  // The auto choice saturates 90% of the margin instead.
  const auto cs_auto = tbgsim::select_coefficients_rap(cyc4, 4.0, tbg);
  REQUIRE(cs_auto.delta == Catch::Approx(72.0).epsilon(1e-9));
  REQUIRE(cs_auto.margin_ok);
}

TEST_CASE("rotation frame is an isometry on 1000 seeded random vectors") {
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> dist(-10.0, 10.0);
  for (int n : {3, 4}) {
    const tbgsim::OrthogonalFrame frame = tbgsim::orthogonal_frame(n);
    REQUIRE(frame.R1.size() == n);
    REQUIRE(frame.R2.cols() == n - 1);
    for (int k = 0; k < 1000; ++k) {
      Eigen::VectorXd v(n);
      for (int i = 0; i < n; ++i) v(i) = dist(rng);
      const Eigen::VectorXd rotated = frame.rotate(v);
      REQUIRE(std::abs(rotated.norm() - v.norm()) <= 1e-12 * std::max(1.0, v.norm()));
    }
    // Agreement direction maps onto the first coordinate.
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd r = frame.rotate(ones);
    REQUIRE(r(0) == Catch::Approx(std::sqrt(static_cast<double>(n))).epsilon(1e-12));
    REQUIRE(r.tail(n - 1).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("Lyapunov functionals sit inside their quadratic envelopes") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> dist(-5.0, 5.0);
  const tbgsim::OrthogonalFrame frame = tbgsim::orthogonal_frame(4);
  tbgsim::CoefficientSet cs;
  cs.rho = 109.53125;
  cs.beta = 12.25;
  cs.gamma = 2.0;
  auto rand_vec = [&] {
    Eigen::VectorXd v(4);
    for (int i = 0; i < 4; ++i) v(i) = dist(rng);
    return v;
  };
  for (int k = 0; k < 200; ++k) {
    const tbgsim::RapState s{rand_vec(), rand_vec(), rand_vec(), rand_vec()};
    const tbgsim::RapState eq{rand_vec(), rand_vec(), rand_vec(), rand_vec()};
    const double v = tbgsim::lyapunov_rap(s, eq, cs, frame);
    const auto [lo, hi] = tbgsim::lyapunov_rap_sandwich(s, eq, cs, frame);
    REQUIRE(v >= lo * (1.0 - 1e-9) - 1e-9);
    REQUIRE(v <= hi * (1.0 + 1e-9) + 1e-9);
  }

  const tbgsim::OrthogonalFrame frame3 = tbgsim::orthogonal_frame(3);
  tbgsim::CoefficientSet ccs;
  ccs.rho = ccs.beta = 0.5;
  auto rand_vec3 = [&] {
    Eigen::VectorXd v(3);
    for (int i = 0; i < 3; ++i) v(i) = dist(rng);
    return v;
  };
  for (int k = 0; k < 200; ++k) {
    const tbgsim::ConsensusState s{rand_vec3(), rand_vec3()};
    const tbgsim::ConsensusState eq{rand_vec3(), rand_vec3()};
    const double v = tbgsim::lyapunov_consensus(s, eq, ccs, frame3);
    const auto [lo, hi] = tbgsim::lyapunov_consensus_sandwich(s, eq, ccs, frame3);
    REQUIRE(v >= lo * (1.0 - 1e-9) - 1e-9);
    REQUIRE(v <= hi * (1.0 + 1e-9) + 1e-9);
  }
}

TEST_CASE("stationarity residuals vanish at the exact optimum") {
  const auto costs = rap_quadratics();
  const Eigen::VectorXd x_star = vec({17.66, 34.82, 68.64, 23.88});
  const auto res = tbgsim::kkt_residual_rap(x_star, costs, 145.0);
  REQUIRE(res.grad_spread <= 1e-9);
  REQUIRE(res.demand_gap <= 1e-9);
  const auto off = tbgsim::kkt_residual_rap(vec({40.0, 35.0, 45.0, 40.0}), costs, 145.0);
  REQUIRE(off.demand_gap == Catch::Approx(15.0).epsilon(1e-12));
  REQUIRE(off.grad_spread > 100.0);

  const tbgsim::Graph g = tbgsim::Graph::path(3);
  const auto ccosts = tbgsim::consensus_quadratics();
  const Eigen::VectorXd agree = Eigen::VectorXd::Constant(3, 10.0 / 3.0);
  const tbgsim::ConsensusState eq =
      tbgsim::consensus_equilibrium(agree, ccosts, g, 0.2, 20.0, 0.0);
  const auto cres = tbgsim::kkt_residual_consensus(agree, eq.w, ccosts, g, 0.2, 20.0);
  REQUIRE(cres.consensus_residual <= 1e-10);
  REQUIRE(cres.stationarity_residual <= 1e-10);
}

TEST_CASE("agreement-direction projections of z, u, w are conserved") {
  // Short integrations of both catalogs: the auxiliary block means are
  // first integrals of the dynamics and must hold to machine level.
  const tbgsim::Graph g4 = tbgsim::Graph::cycle(4);
  const tbgsim::Tbg tbg_rap = tbgsim::make_constant_tbg(80.0, 7.0, 80.0);
  const tbgsim::RapSystem rap(g4, rap_quadratics(), Eigen::VectorXd::Constant(4, 145.0 / 4.0),
                              tbg_rap, 8.0);
  Eigen::VectorXd s0 = Eigen::VectorXd::Zero(16);
  s0.head(4) = vec({40.0, 35.0, 45.0, 40.0});
  double max_drift = 0.0;
  tbgsim::integrate([&](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) { rap(t, s, ds); },
                    s0, tbg_rap, {7.0 / 30000.0, 0.2, 10},
                    [&](double, const Eigen::VectorXd& s) {
                      max_drift = std::max({max_drift, std::abs(s.segment(8, 4).mean()),
                                            std::abs(s.tail(4).mean())});
                    });
  REQUIRE(max_drift <= 1e-9);

  const tbgsim::Graph g3 = tbgsim::Graph::path(3);
  const tbgsim::Tbg tbg_con = tbgsim::make_constant_tbg(20.0, 1.0, 20.0);
  const tbgsim::ConsensusSystem con(g3, tbgsim::consensus_quadratics(), tbg_con, 0.2);
  Eigen::VectorXd c0 = Eigen::VectorXd::Zero(6);
  c0.head(3) = vec({20.0, 5.0, -15.0});
  double w_drift = 0.0;
  tbgsim::integrate([&](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) { con(t, s, ds); },
                    c0, tbg_con, {1e-3, 1.2, 1},
                    [&](double, const Eigen::VectorXd& s) {
                      w_drift = std::max(w_drift, std::abs(s.tail(3).mean()));
                    });
  REQUIRE(w_drift <= 1e-9);
}

TEST_CASE("system construction validation") {
  const tbgsim::Graph g = tbgsim::Graph::path(3);
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 1.0, 1.0);
  REQUIRE_THROWS_AS(
      tbgsim::RapSystem(g, rap_quadratics(), Eigen::VectorXd::Zero(3), tbg, 1.0),
      std::invalid_argument);  // 4 costs on a 3-node graph
  REQUIRE_THROWS_AS(
      tbgsim::RapSystem(g, tbgsim::consensus_quadratics(), Eigen::VectorXd::Zero(2), tbg, 1.0),
      std::invalid_argument);  // demand length mismatch
  REQUIRE_THROWS_AS(tbgsim::ConsensusSystem(g, tbgsim::consensus_quadratics(), tbg, 0.0),
                    std::invalid_argument);  // nonpositive coefficient
  REQUIRE_THROWS_AS(tbgsim::orthogonal_frame(0), std::invalid_argument);
}

TEST_CASE("pack and unpack round-trip both state layouts") {
  const tbgsim::RapState rs{vec({1.0, 2.0}), vec({3.0, 4.0}), vec({5.0, 6.0}), vec({7.0, 8.0})};
  const tbgsim::RapState rs2 = tbgsim::unpack_rap(tbgsim::pack(rs));
  REQUIRE(rs2.x == rs.x);
  REQUIRE(rs2.y == rs.y);
  REQUIRE(rs2.z == rs.z);
  REQUIRE(rs2.u == rs.u);
  const tbgsim::ConsensusState cs{vec({1.5, -2.5}), vec({0.25, 4.0})};
  const tbgsim::ConsensusState cs2 = tbgsim::unpack_consensus(tbgsim::pack(cs));
  REQUIRE(cs2.x == cs.x);
  REQUIRE(cs2.w == cs.w);
}

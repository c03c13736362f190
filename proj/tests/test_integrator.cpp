#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "tbgsim/integrator.hpp"
#include "tbgsim/tbg.hpp"

namespace {

const tbgsim::Rhs kDecay = [](double, const Eigen::VectorXd& s, Eigen::VectorXd& ds) { ds = -s; };

Eigen::VectorXd one(double v) {
  Eigen::VectorXd s(1);
  s << v;
  return s;
}

}  // namespace

TEST_CASE("RK4 reproduces exponential decay to 1e-10 at dt = 1e-4") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  const tbgsim::Trajectory traj = tbgsim::integrate(kDecay, one(1.0), tbg, {1e-4, 1.0, 1});
  REQUIRE(traj.times.back() == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(std::abs(traj.states.back()(0) - std::exp(-1.0)) <= 1e-10);
}

TEST_CASE("halving dt shrinks the end error by a fourth-order factor") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  auto end_error = [&](double dt) {
    const tbgsim::Trajectory traj = tbgsim::integrate(kDecay, one(1.0), tbg, {dt, 1.0, 1});
    return std::abs(traj.states.back()(0) - std::exp(-1.0));
  };
  const double ratio = end_error(0.1) / end_error(0.05);
  REQUIRE(ratio >= 8.0);
  REQUIRE(ratio <= 32.0);
}

TEST_CASE("the switch time always lands on the step grid") {
  // t_p = 0.35 does not divide dt = 0.1; the step is shrunk so a sample hits
  // t_p exactly and the second segment ends exactly at t_end.
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(2.0, 0.35, 5.0);
  const tbgsim::Trajectory traj = tbgsim::integrate(kDecay, one(1.0), tbg, {0.1, 1.0, 1});
  bool has_tp = false;
  for (double t : traj.times) has_tp = has_tp || t == 0.35;
  REQUIRE(has_tp);
  REQUIRE(traj.times.front() == 0.0);
  REQUIRE(traj.times.back() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("runs ending before the switch stop exactly at t_end") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 10.0, 1.0);
  const tbgsim::Trajectory traj = tbgsim::integrate(kDecay, one(1.0), tbg, {0.3, 1.0, 1});
  REQUIRE(traj.times.back() == Catch::Approx(1.0).margin(1e-12));
  // dt = 0.3 is rounded down to h = 0.25 (four even steps); the RK4 end
  // error for exponential decay at that step is ~1.5e-5.
  REQUIRE(std::abs(traj.states.back()(0) - std::exp(-1.0)) <= 5e-5);
}

TEST_CASE("integration is bit-identical across repeated runs") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(3.0, 0.4, 6.0);
  const tbgsim::Rhs rhs = [&](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) {
    ds = -tbg.gain(t) * s + Eigen::VectorXd::Constant(s.size(), 0.25 * std::sin(t));
  };
  const tbgsim::Trajectory a = tbgsim::integrate(rhs, one(2.0), tbg, {1e-3, 1.0, 1});
  const tbgsim::Trajectory b = tbgsim::integrate(rhs, one(2.0), tbg, {1e-3, 1.0, 1});
  REQUIRE(a.times == b.times);
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    REQUIRE(a.states[i](0) == b.states[i](0));  // exact equality, no tolerance
  }
}

TEST_CASE("finite-escape dynamics raise a divergence error with the blow-up time") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 2.0, 1.0);
  const tbgsim::Rhs quad = [](double, const Eigen::VectorXd& s, Eigen::VectorXd& ds) {
    ds = s.array().square();
  };
  // v' = v^2 from v0 = 1 escapes at t = 1.
  try {
    tbgsim::integrate(quad, one(1.0), tbg, {1e-3, 2.0, 1});
    FAIL("expected a divergence error");
  } catch (const tbgsim::DivergenceError& e) {
    REQUIRE(e.t >= 0.9);
    REQUIRE(e.t <= 1.1);
  }
}

TEST_CASE("observer is called once per step plus once at t = 0") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  int calls = 0;
  double last_t = -1.0;
  tbgsim::integrate(kDecay, one(1.0), tbg, {0.1, 1.0, 1},
                    [&](double t, const Eigen::VectorXd&) {
                      ++calls;
                      last_t = t;
                    });
  REQUIRE(calls == 11);  // 5 steps to t_p, 5 after, plus the initial state
  REQUIRE(last_t == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("decimated sampling keeps boundary samples") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  const tbgsim::Trajectory traj = tbgsim::integrate(kDecay, one(1.0), tbg, {0.05, 1.0, 3});
  REQUIRE(traj.times.front() == 0.0);
  bool has_tp = false;
  for (double t : traj.times) has_tp = has_tp || t == 0.5;
  REQUIRE(has_tp);
  REQUIRE(traj.times.back() == Catch::Approx(1.0).margin(1e-12));
  // Decimation strictly reduces the sample count (21 undecimated).
  REQUIRE(traj.times.size() < 21);
  // The observer still sees every step.
  int calls = 0;
  tbgsim::integrate(kDecay, one(1.0), tbg, {0.05, 1.0, 3},
                    [&](double, const Eigen::VectorXd&) { ++calls; });
  REQUIRE(calls == 21);
}

TEST_CASE("trajectory lookup finds the first sample at or after a time") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  const tbgsim::Trajectory traj = tbgsim::integrate(kDecay, one(1.0), tbg, {0.1, 1.0, 1});
  REQUIRE(traj.times[traj.index_at_or_after(0.5)] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(traj.times[traj.index_at_or_after(0.45)] == Catch::Approx(0.5).margin(1e-12));
  REQUIRE_THROWS_AS(traj.index_at_or_after(2.0), std::out_of_range);
}

TEST_CASE("refinement loop reports zero halvings for an already-fine step") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  const tbgsim::RefinementReport report =
      tbgsim::refine_until_stable(kDecay, one(1.0), tbg, {1e-3, 1.0, 1}, 1e-6, 4);
  REQUIRE(report.converged);
  REQUIRE(report.halvings == 0);
  REQUIRE(report.end_changes.size() == 1);
}

TEST_CASE("refinement loop stops at the halving budget when unconverged") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  const tbgsim::RefinementReport report =
      tbgsim::refine_until_stable(kDecay, one(1.0), tbg, {0.25, 1.0, 1}, 1e-14, 2);
  REQUIRE_FALSE(report.converged);
  REQUIRE(report.halvings == 2);
}

TEST_CASE("configuration validation") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(1.0, 0.5, 1.0);
  REQUIRE_THROWS_AS(tbgsim::integrate(kDecay, one(1.0), tbg, {0.0, 1.0, 1}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(tbgsim::integrate(kDecay, one(1.0), tbg, {0.1, -1.0, 1}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(tbgsim::integrate(kDecay, one(1.0), tbg, {0.1, 1.0, 0}),
                    std::invalid_argument);
  REQUIRE(tbgsim::stability_guard_dt(100.0, 10.0) == Catch::Approx(1e-4));
  REQUIRE(tbgsim::stability_guard_dt(100.0, 0.5) == Catch::Approx(1e-3));
}

TEST_CASE("decimated runs agree with undecimated runs at shared times") {
  const tbgsim::Tbg tbg = tbgsim::make_constant_tbg(2.0, 0.3, 7.0);
  const tbgsim::Trajectory full = tbgsim::integrate(kDecay, one(1.0), tbg, {0.01, 1.0, 1});
  const tbgsim::Trajectory thin = tbgsim::integrate(kDecay, one(1.0), tbg, {0.01, 1.0, 7});
  for (std::size_t i = 0; i < thin.times.size(); ++i) {
    const std::size_t j = full.index_at_or_after(thin.times[i]);
    REQUIRE(full.times[j] == thin.times[i]);
    REQUIRE(full.states[j](0) == thin.states[i](0));
  }
}

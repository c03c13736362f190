#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tbgsim/integrator.hpp"
#include "tbgsim/tbg.hpp"

namespace tbgsim {

/// Raised when a perturbation magnitude exceeds the contraction margin
/// alpha / D, outside which the decay envelope has no positive exponent.
class MarginError : public std::runtime_error {
 public:
  MarginError(double delta, double limit)
      : std::runtime_error("perturbation delta " + std::to_string(delta) +
                          " exceeds the contraction margin " + std::to_string(limit)),
        delta(delta),
        limit(limit) {}
  double delta;
  double limit;
};

/// One scalar verification run: sampled solution, matching envelope column,
/// and violation statistics against that envelope.
struct ScalarRun {
  std::string label;
  std::vector<double> times;
  std::vector<double> values;  ///< |v(t)| is compared against bound(t)
  std::vector<double> bound;
  int violations = 0;
  double max_rel_violation = 0.0;
  double tail_max_abs = 0.0;  ///< max |v| over the trailing window (forced runs)
  double tail_bound = 0.0;    ///< forced-run residual-ball radius with 5% slack
  bool passed = false;
};

namespace detail {

inline ScalarRun integrate_scalar(const Tbg& tbg, const std::function<double(double, double)>& rhs,
                                  double v0, double t_end, double dt) {
  ScalarRun run;
  Eigen::VectorXd s0(1);
  s0(0) = v0;
  auto vec_rhs = [&](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) {
    ds(0) = rhs(t, s(0));
  };
  IntegratorConfig cfg;
  cfg.dt = dt;
  cfg.t_end = t_end;
  cfg.sample_every = 1;
  const Trajectory traj = integrate(vec_rhs, s0, tbg, cfg);
  run.times = traj.times;
  run.values.reserve(traj.states.size());
  for (const auto& s : traj.states) run.values.push_back(s(0));
  return run;
}

inline void score_against_bound(ScalarRun& run, double rel_tol = 1e-6) {
  run.violations = 0;
  run.max_rel_violation = 0.0;
  for (std::size_t k = 0; k < run.times.size(); ++k) {
    const double excess = std::abs(run.values[k]) - run.bound[k] * (1.0 + rel_tol) - 1e-12;
    if (excess > 0.0) {
      ++run.violations;
      if (run.bound[k] > 0.0)
        run.max_rel_violation =
            std::max(run.max_rel_violation, std::abs(run.values[k]) / run.bound[k] - 1.0);
    }
  }
  run.passed = run.violations == 0;
}

}  // namespace detail

/// Unforced scalar contraction v' = -gain(t) v checked against the
/// evolution envelope D mu(t,0)^alpha |v0|.
inline ScalarRun run_linear(const Tbg& tbg, double v0, double t_end, double dt) {
  ScalarRun run = detail::integrate_scalar(
      tbg, [&](double t, double v) { return -tbg.gain(t) * v; }, v0, t_end, dt);
  run.label = "linear";
  run.bound.reserve(run.times.size());
  for (double t : run.times) run.bound.push_back(evolution_bound(tbg, t, 0.0) * std::abs(v0));
  detail::score_against_bound(run);
  return run;
}

/// Multiplicatively perturbed contraction v' = (-gain(t) + d(t)) v checked
/// against the margin-reduced envelope D mu(t,0)^(alpha - D delta) |v0| with
/// delta the sampled supremum of |d|. Throws MarginError when delta eats the
/// whole exponent.
inline ScalarRun run_perturbed(const Tbg& tbg, const std::function<double(double)>& disturbance,
                               double v0, double t_end, double dt) {
  double delta = 0.0;
  for (int k = 0; k <= 1000; ++k) delta = std::max(delta, std::abs(disturbance(t_end * k / 1000.0)));
  const double limit = tbg.alpha / tbg.d_const;
  if (delta > limit) throw MarginError(delta, limit);

  ScalarRun run = detail::integrate_scalar(
      tbg, [&](double t, double v) { return (-tbg.gain(t) + disturbance(t)) * v; }, v0, t_end, dt);
  run.label = "perturbed";
  run.bound.reserve(run.times.size());
  for (double t : run.times) run.bound.push_back(perturbed_bound(tbg, t, 0.0, delta) * std::abs(v0));
  detail::score_against_bound(run);
  return run;
}

/// Bounded-forcing contraction v' = -gain(t) v + F(t, v) with |F| <= m_hat.
/// The envelope column adds the residual-ball radius D m_hat / post_rate to
/// the unforced envelope; pass/fail is judged on the trailing 10% window,
/// where |v| must sit inside that ball with 5% slack. Throws when the
/// forcing samples exceed the declared bound.
inline ScalarRun run_forced(const Tbg& tbg, const std::function<double(double, double)>& forcing,
                            double m_hat, double v0, double t_end, double dt) {
  const double post_rate = tbg.gain(tbg.t_p * (1.0 + 1e-9) + 1e-12);
  ScalarRun run = detail::integrate_scalar(
      tbg,
      [&](double t, double v) {
        const double f = forcing(t, v);
        return -tbg.gain(t) * v + f;
      },
      v0, t_end, dt);
  run.label = "forced";
  for (std::size_t k = 0; k < run.times.size(); ++k) {
    const double f = forcing(run.times[k], run.values[k]);
    if (std::abs(f) > m_hat * (1.0 + 1e-9))
      throw std::invalid_argument("run_forced: forcing exceeds its declared bound");
  }
  const double ball = tbg.d_const * m_hat / post_rate;
  run.bound.reserve(run.times.size());
  for (double t : run.times)
    run.bound.push_back(evolution_bound(tbg, t, 0.0) * std::abs(v0) + ball);
  run.tail_bound = ball * 1.05;
  const double tail_start = t_end - 0.1 * t_end;
  run.violations = 0;
  run.max_rel_violation = 0.0;
  run.tail_max_abs = 0.0;
  for (std::size_t k = 0; k < run.times.size(); ++k) {
    if (run.times[k] < tail_start) continue;
    run.tail_max_abs = std::max(run.tail_max_abs, std::abs(run.values[k]));
    if (std::abs(run.values[k]) > run.tail_bound) {
      ++run.violations;
      run.max_rel_violation =
          std::max(run.max_rel_violation, std::abs(run.values[k]) / run.tail_bound - 1.0);
    }
  }
  run.passed = run.violations == 0;
  return run;
}

/// Result of the integral-inequality consistency check.
struct GronwallReport {
  double min_slack = 0.0;  ///< most negative margin of the integral form
  double worst_t = 0.0;
  bool passed = false;
};

/// Verifies that the margin-reduced envelope v(t) = D mu(t,t0)^(alpha - D delta)
/// dominates its own image under the integral comparison operator
///   T[v](t) = mu(t,t0)^alpha v(t0) + delta * Int_{t0}^{t} mu(t,s)^alpha v(s) ds
/// on every grid point. T is monotone and bounds every true solution of the
/// perturbed contraction, so v >= T[v] certifies that the envelope used by
/// run_perturbed is sound; the slack is identically zero for the constant
/// generator and strictly positive whenever the gain exceeds alpha. A
/// generator whose gain dips below alpha produces negative slack. Quadrature
/// is trapezoidal with doubling refinement until the value stabilizes.
inline GronwallReport gronwall_check(const Tbg& tbg, double delta, const std::vector<double>& grid) {
  if (grid.size() < 2) throw std::invalid_argument("gronwall_check: need at least two grid points");
  const double limit = tbg.alpha / tbg.d_const;
  if (delta >= limit) throw MarginError(delta, limit);
  const double t0 = grid.front();
  const double d = tbg.d_const;
  auto v = [&](double t) { return perturbed_bound(tbg, t, t0, delta); };

  GronwallReport report;
  report.min_slack = std::numeric_limits<double>::infinity();
  for (double t : grid) {
    auto quadrature = [&](int m) {
      double acc = 0.0;
      const double h = (t - t0) / m;
      // kernel mu(t,s)^alpha carries the overshoot constant only once (in v).
      auto f = [&](double s) { return evolution_bound(tbg, t, s) / d * v(s); };
      for (int j = 0; j < m; ++j) acc += 0.5 * h * (f(t0 + h * j) + f(t0 + h * (j + 1)));
      return acc;
    };
    double integral = 0.0;
    if (t > t0) {
      int m = 64;
      integral = quadrature(m);
      for (; m <= 4096;) {
        m *= 2;
        const double next = quadrature(m);
        const double change = std::abs(next - integral);
        integral = next;
        if (change < 1e-8) break;
      }
    }
    const double image = evolution_bound(tbg, t, t0) / d * v(t0) + delta * integral;
    const double slack = v(t) - image;
    if (slack < report.min_slack) {
      report.min_slack = slack;
      report.worst_t = t;
    }
  }
  report.passed = report.min_slack >= -1e-6;
  return report;
}

/// Canonical six-case scalar battery: one unforced run, two multiplicative
/// perturbations below the margin, and three bounded forcings, all at the
/// same predefined time.
struct ScalarSuite {
  std::vector<ScalarRun> cases;
  bool ordering_ok = false;  ///< stronger perturbation ends with the larger |v|
  bool all_passed = false;
  double runtime_seconds = 0.0;
};

inline ScalarSuite run_scalar_suite() {
  const auto start = std::chrono::steady_clock::now();
  constexpr double kTp = 0.05;
  constexpr double kV0 = 10.0;
  constexpr double kDt = 1e-5;
  const Tbg mild = make_theta_tbg(100.0, kTp, 10.0);    // post-switch rate matches the envelope
  const Tbg strong = make_theta_tbg(100.0, kTp, 200.0); // fast post-switch rate, small residual ball

  ScalarSuite suite;
  suite.cases.push_back(run_linear(mild, kV0, 0.2, kDt));
  suite.cases.back().label = "case1-linear";

  suite.cases.push_back(run_perturbed(mild, [](double) { return 20.0; }, kV0, kTp, kDt));
  suite.cases.back().label = "case2-perturbed-20";
  suite.cases.push_back(run_perturbed(mild, [](double) { return 30.0; }, kV0, kTp, kDt));
  suite.cases.back().label = "case3-perturbed-30";

  suite.cases.push_back(run_forced(
      strong, [](double t, double) { return 40.0 * std::sin(t); }, 40.0, kV0, 0.2, kDt));
  suite.cases.back().label = "case4-forced-40sin";
  suite.cases.push_back(run_forced(
      strong, [](double t, double) { return 50.0 * std::cos(t); }, 50.0, kV0, 0.2, kDt));
  suite.cases.back().label = "case5-forced-50cos";
  suite.cases.push_back(run_forced(
      strong, [](double, double) { return 60.0; }, 60.0, kV0, 0.2, kDt));
  suite.cases.back().label = "case6-forced-60";

  suite.ordering_ok =
      std::abs(suite.cases[2].values.back()) > std::abs(suite.cases[1].values.back());
  suite.all_passed = suite.ordering_ok;
  for (const auto& c : suite.cases) suite.all_passed = suite.all_passed && c.passed;
  suite.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return suite;
}

}  // namespace tbgsim

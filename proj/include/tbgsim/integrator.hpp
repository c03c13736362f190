#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "tbgsim/tbg.hpp"

namespace tbgsim {

/// Raised when the state stops being finite; carries the step time at which
/// the blow-up was detected.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(double when)
      : std::runtime_error("state diverged (non-finite) at t = " + std::to_string(when)), t(when) {}
  double t;
};

struct IntegratorConfig {
  double dt = 1e-3;      ///< requested step; adjusted down so the gain switch lies on the grid
  double t_end = 1.0;
  int sample_every = 1;  ///< record every k-th step (boundaries always recorded)
};

/// Advisory step bound 0.1 / (max gain * max(1, M)); also the auto-step
/// formula when a scenario leaves dt unset. Violations are reported, not
/// fatal: pinned steps are validated by the discretization-refinement loop.
inline double stability_guard_dt(double gain_max, double m_bound) {
  return 0.1 / (gain_max * std::max(1.0, m_bound));
}

/// Recorded solution samples. `states` holds full state snapshots aligned
/// with `times`; diagnostics are attached later by the analysis layer.
struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;

  /// Index of the first sample with time >= t - 1e-12.
  std::size_t index_at_or_after(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
      if (times[i] >= t - 1e-12) return i;
    throw std::out_of_range("trajectory: no sample at or after requested time");
  }

  const Eigen::VectorXd& state_at(double t) const { return states[index_at_or_after(t)]; }
};

using Rhs = std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Called after every accepted step (and once at t = 0) with the undecimated
/// state. Used for streamed diagnostics that would alias under decimation.
using StepObserver = std::function<void(double, const Eigen::VectorXd&)>;

namespace detail {

/// One RK4 step with explicitly supplied stage times (t1 for the first
/// stage, t2 for both midpoint stages, t4 for the final stage). Callers pass
/// times clamped into the current integration segment so the right-hand side
/// is never sampled on the far side of a gain switch.
inline void rk4_step(const Rhs& rhs, double t1, double t2, double t4, double h, Eigen::VectorXd& s,
                     Eigen::VectorXd& k1, Eigen::VectorXd& k2, Eigen::VectorXd& k3,
                     Eigen::VectorXd& k4, Eigen::VectorXd& tmp) {
  rhs(t1, s, k1);
  tmp = s + 0.5 * h * k1;
  rhs(t2, tmp, k2);
  tmp = s + 0.5 * h * k2;
  rhs(t2, tmp, k3);
  tmp = s + h * k3;
  rhs(t4, tmp, k4);
  s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// Classical fixed-step RK4. Integration is split at the generator's switch
/// time t_p so no stage straddles the gain discontinuity: the step is
/// adjusted down to t_p / ceil(t_p / dt) on [0, t_p], and the remainder is
/// covered by an evenly divided step on [t_p, t_end]. Deterministic:
/// identical inputs give bit-identical trajectories.
inline Trajectory integrate(const Rhs& rhs, const Eigen::VectorXd& s0, const Tbg& tbg,
                            const IntegratorConfig& cfg, const StepObserver& observer = {}) {
  if (cfg.dt <= 0.0 || cfg.t_end <= 0.0 || cfg.sample_every < 1)
    throw std::invalid_argument("integrate: dt, t_end and sample_every must be positive");

  double h1, h2 = 0.0;
  std::int64_t n1, n2 = 0;
  if (cfg.t_end <= tbg.t_p) {
    // The run ends at or before the switch: one evenly divided segment.
    h1 = cfg.t_end / std::ceil(cfg.t_end / cfg.dt - 1e-12);
    n1 = std::llround(cfg.t_end / h1);
  } else {
    h1 = tbg.t_p / std::ceil(tbg.t_p / cfg.dt - 1e-12);
    n1 = std::llround(tbg.t_p / h1);
    n2 = static_cast<std::int64_t>(std::ceil((cfg.t_end - tbg.t_p) / h1 - 1e-9));
    h2 = (cfg.t_end - tbg.t_p) / static_cast<double>(n2);
  }

  Trajectory traj;
  traj.times.reserve(static_cast<std::size_t>((n1 + n2) / cfg.sample_every + 3));
  traj.states.reserve(traj.times.capacity());

  // Stage vectors are pre-sized so the right-hand side may either assign or
  // write coefficients in place.
  Eigen::VectorXd s = s0, k1(s0.size()), k2(s0.size()), k3(s0.size()), k4(s0.size()),
                  tmp(s0.size());
  const auto record = [&](double t) {
    traj.times.push_back(t);
    traj.states.push_back(s);
  };

  record(0.0);
  if (observer) observer(0.0, s);

  std::int64_t step_index = 0;
  const auto run_segment = [&](double t0, double h, std::int64_t steps, double seg_end) {
    // The raw products t0 + h*k can drift past the segment boundary by an
    // ulp; stage times are clamped just inside the segment so branch
    // selection at the gain switch stays one-sided, and the last step is
    // recorded at the exact boundary.
    const double lo = std::nextafter(t0, seg_end);
    const double hi = std::nextafter(seg_end, t0);
    const auto inside = [&](double t) { return std::min(std::max(t, lo), hi); };
    for (std::int64_t k = 0; k < steps; ++k) {
      const double t = t0 + h * static_cast<double>(k);
      detail::rk4_step(rhs, inside(t), inside(t + 0.5 * h), inside(t + h), h, s, k1, k2, k3, k4,
                       tmp);
      const bool segment_end = (k + 1 == steps);
      const double t_next = segment_end ? seg_end : t0 + h * static_cast<double>(k + 1);
      if (!s.allFinite()) throw DivergenceError(t_next);
      ++step_index;
      if (step_index % cfg.sample_every == 0 || segment_end) record(t_next);
      if (observer) observer(t_next, s);
    }
  };

  run_segment(0.0, h1, n1, n2 > 0 ? tbg.t_p : cfg.t_end);
  if (n2 > 0) run_segment(tbg.t_p, h2, n2, cfg.t_end);
  return traj;
}

/// Discretization-refinement record: the finest trajectory plus the end-state
/// changes observed at each halving.
struct RefinementReport {
  Trajectory trajectory;
  int halvings = 0;
  std::vector<double> end_changes;  ///< max-norm end-state delta per halving
  bool converged = false;           ///< end-state change fell below tolerance
};

/// Repeatedly halves dt (at most `max_halvings` comparisons) until the end
/// state moves by less than `tol` in max-norm between consecutive
/// refinements. `halvings` counts only the comparisons that still showed
/// movement >= tol, so an already-stable dt reports zero halvings.
inline RefinementReport refine_until_stable(const Rhs& rhs, const Eigen::VectorXd& s0, const Tbg& tbg,
                                            IntegratorConfig cfg, double tol = 1e-6, int max_halvings = 4) {
  RefinementReport report;
  report.trajectory = integrate(rhs, s0, tbg, cfg);
  Eigen::VectorXd prev_end = report.trajectory.states.back();
  for (int k = 0; k < max_halvings; ++k) {
    cfg.dt *= 0.5;
    Trajectory finer = integrate(rhs, s0, tbg, cfg);
    const double change = (finer.states.back() - prev_end).lpNorm<Eigen::Infinity>();
    report.end_changes.push_back(change);
    prev_end = finer.states.back();
    report.trajectory = std::move(finer);
    if (change < tol) {
      report.converged = true;
      break;
    }
    ++report.halvings;
  }
  return report;
}

}  // namespace tbgsim

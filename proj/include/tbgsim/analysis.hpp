#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tbgsim/costs.hpp"
#include "tbgsim/dynamics.hpp"
#include "tbgsim/graph.hpp"
#include "tbgsim/integrator.hpp"
#include "tbgsim/tbg.hpp"

namespace tbgsim {

enum class Verdict { PredefinedTimeOptimal, ApproximateOnly, Failed };

enum class OptimumMethod { LinearKkt, MonotoneBracket, GridRefine, Stated };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::PredefinedTimeOptimal: return "predefined-time-optimal";
    case Verdict::ApproximateOnly: return "approximate-only";
    default: return "failed";
  }
}

inline const char* to_string(OptimumMethod m) {
  switch (m) {
    case OptimumMethod::LinearKkt: return "linear-kkt";
    case OptimumMethod::MonotoneBracket: return "monotone-bracket";
    case OptimumMethod::GridRefine: return "grid-refine";
    default: return "stated";
  }
}

/// Reference solution used for convergence scoring. `candidates` collects
/// equally good stationary points when the problem has several (distances
/// are then taken to the nearest one).
struct ReferenceOptimum {
  Eigen::VectorXd x_star;
  OptimumMethod method = OptimumMethod::Stated;
  double objective_value = std::numeric_limits<double>::quiet_NaN();
  bool unique = false;
  std::vector<Eigen::VectorXd> candidates;
  double lambda = std::numeric_limits<double>::quiet_NaN();  ///< shared marginal value (allocation problems)
};

namespace detail {

/// Largest interval [lo, hi] around the level crossing of a nondecreasing
/// gradient: lo is the leftmost point with g >= level - tol, hi the rightmost
/// with g <= level + tol. Returns nullopt when the level is outside the
/// gradient's range on [xlo, xhi].
struct LevelSet {
  double lo, hi;
};

inline std::optional<LevelSet> monotone_level_set(const CostFunction& c, double level, double xlo,
                                                  double xhi) {
  const double tol = 1e-11 * std::max(1.0, std::abs(level));
  if (c.grad(xhi) < level - tol || c.grad(xlo) > level + tol) return std::nullopt;
  double a = xlo, b = xhi;
  // leftmost point with g >= level - tol
  for (int it = 0; it < 200 && (b - a) > 1e-14 * std::max(1.0, std::abs(b)); ++it) {
    const double mid = 0.5 * (a + b);
    if (c.grad(mid) >= level - tol) b = mid;
    else a = mid;
  }
  const double lo = b;
  a = xlo;
  b = xhi;
  // rightmost point with g <= level + tol
  for (int it = 0; it < 200 && (b - a) > 1e-14 * std::max(1.0, std::abs(b)); ++it) {
    const double mid = 0.5 * (a + b);
    if (c.grad(mid) <= level + tol) a = mid;
    else b = mid;
  }
  return LevelSet{lo, a};
}

inline bool gradient_is_monotone(const CostFunction& c) {
  return c.kind == "quadratic" || c.kind == "piecewise_cubic" || c.kind == "clipped_oscillatory" ||
         c.kind == "steep_piecewise_linear";
}

inline double objective_or_nan(const std::vector<CostFunction>& costs, const Eigen::VectorXd& x) {
  double total = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (!costs[i].has_value()) return std::numeric_limits<double>::quiet_NaN();
    total += costs[i].value(x(static_cast<int>(i)));
  }
  return total;
}

}  // namespace detail

/// Shared-marginal-value solve for the allocation problem: exact linear
/// solve when every gradient is affine, monotone bracketing otherwise, and a
/// symmetric-start pattern search on the budget plane for non-monotone
/// catalogs. A `stated` reference (from the scenario file) is the fallback
/// when the oracle cannot certify a solution.
inline ReferenceOptimum reference_optimum_rap(const std::vector<CostFunction>& costs, double q0,
                                              const std::optional<Eigen::VectorXd>& stated = std::nullopt) {
  const int n = static_cast<int>(costs.size());
  if (n == 0) throw std::invalid_argument("reference_optimum_rap: no costs");
  ReferenceOptimum ref;

  const bool all_affine = std::all_of(costs.begin(), costs.end(),
                                      [](const CostFunction& c) { return c.kind == "quadratic"; });
  if (all_affine) {
    // grad_i = a_i x_i + b_i equal to a shared lambda, sum x = q0.
    double inv_sum = 0.0, shift = 0.0;
    for (const auto& c : costs) {
      inv_sum += 1.0 / c.params[0];
      shift += c.params[1] / c.params[0];
    }
    const double lambda = (q0 + shift) / inv_sum;
    ref.x_star.resize(n);
    for (int i = 0; i < n; ++i) ref.x_star(i) = (lambda - costs[i].params[1]) / costs[i].params[0];
    ref.method = OptimumMethod::LinearKkt;
    ref.lambda = lambda;
    ref.unique = true;
    ref.candidates = {ref.x_star};
    ref.objective_value = detail::objective_or_nan(costs, ref.x_star);
    const RapResidual res = kkt_residual_rap(ref.x_star, costs, q0);
    if (res.grad_spread > 1e-9 || res.demand_gap > 1e-9)
      throw std::runtime_error("reference_optimum_rap: linear solve residual too large");
    return ref;
  }

  const bool all_monotone = std::all_of(costs.begin(), costs.end(), detail::gradient_is_monotone);
  if (all_monotone) {
    double reach = std::max(10.0, std::abs(q0));
    for (int grow = 0; grow < 8; ++grow, reach *= 2.0) {
      double lo_level = -std::numeric_limits<double>::infinity();
      double hi_level = std::numeric_limits<double>::infinity();
      for (const auto& c : costs) {
        lo_level = std::max(lo_level, c.grad(-reach));
        hi_level = std::min(hi_level, c.grad(reach));
      }
      if (lo_level > hi_level) continue;  // ranges do not overlap at this reach
      auto span = [&](double level) {
        double smin = 0.0, smax = 0.0;
        for (const auto& c : costs) {
          const auto set = detail::monotone_level_set(c, level, -reach, reach);
          if (!set) return std::optional<std::pair<double, double>>{};
          smin += set->lo;
          smax += set->hi;
        }
        return std::optional<std::pair<double, double>>{{smin, smax}};
      };
      const auto at_lo = span(lo_level), at_hi = span(hi_level);
      if (!at_lo || !at_hi || at_lo->first > q0 || at_hi->second < q0) continue;  // widen reach
      double llo = lo_level, lhi = hi_level;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (llo + lhi);
        const auto s = span(mid);
        if (!s) break;
        if (s->first > q0) lhi = mid;
        else if (s->second < q0) llo = mid;
        else {
          llo = lhi = mid;
          break;
        }
      }
      const double lambda = 0.5 * (llo + lhi);
      const auto s = span(lambda);
      if (!s || s->first > q0 + 1e-6 || s->second < q0 - 1e-6) continue;
      ref.x_star.resize(n);
      double smin = 0.0, smax = 0.0;
      std::vector<detail::LevelSet> sets;
      for (const auto& c : costs) {
        sets.push_back(*detail::monotone_level_set(c, lambda, -reach, reach));
        smin += sets.back().lo;
        smax += sets.back().hi;
      }
      const double theta = (smax > smin) ? std::clamp((q0 - smin) / (smax - smin), 0.0, 1.0) : 0.0;
      for (int i = 0; i < n; ++i) ref.x_star(i) = sets[i].lo + theta * (sets[i].hi - sets[i].lo);
      ref.method = OptimumMethod::MonotoneBracket;
      ref.lambda = lambda;
      ref.unique = std::all_of(costs.begin(), costs.end(), [](const CostFunction& c) {
        return c.convexity == Convexity::StronglyConvex || c.convexity == Convexity::StrictlyConvex;
      });
      ref.candidates = {ref.x_star};
      ref.objective_value = detail::objective_or_nan(costs, ref.x_star);
      const RapResidual res = kkt_residual_rap(ref.x_star, costs, q0);
      if (res.grad_spread <= 1e-6 && res.demand_gap <= 1e-6) return ref;
    }
    if (stated) return {*stated, OptimumMethod::Stated, detail::objective_or_nan(costs, *stated),
                        false, {*stated}, std::numeric_limits<double>::quiet_NaN()};
    throw std::runtime_error("reference_optimum_rap: monotone bracketing failed");
  }

  // Non-monotone catalog: start from the symmetric split and pattern-search
  // along budget-preserving directions e_i - e_j.
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, q0 / n);
  double best = detail::objective_or_nan(costs, x);
  if (std::isnan(best)) {
    if (stated) return {*stated, OptimumMethod::Stated, std::numeric_limits<double>::quiet_NaN(),
                        false, {*stated}, std::numeric_limits<double>::quiet_NaN()};
    throw std::runtime_error("reference_optimum_rap: non-monotone costs need value functions");
  }
  for (double step = 1.0; step > 1e-7; step *= 0.5) {
    bool improved = true;
    int guard = 0;
    while (improved && guard++ < 4000) {
      improved = false;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (i == j) continue;
          Eigen::VectorXd trial = x;
          trial(i) += step;
          trial(j) -= step;
          const double val = detail::objective_or_nan(costs, trial);
          if (val < best - 1e-15) {
            best = val;
            x = trial;
            improved = true;
          }
        }
      }
    }
  }
  ref.x_star = x;
  ref.method = OptimumMethod::GridRefine;
  ref.objective_value = best;
  ref.unique = false;
  ref.candidates = {x};
  if (stated && detail::objective_or_nan(costs, *stated) < best - 1e-9) {
    ref.x_star = *stated;
    ref.objective_value = detail::objective_or_nan(costs, *stated);
    ref.candidates.insert(ref.candidates.begin(), *stated);
  }
  return ref;
}

/// One-dimensional minimization of the summed costs over an interval that is
/// widened until the minimizer is interior; equal-value local minima are all
/// recorded as candidates.
inline ReferenceOptimum reference_optimum_consensus(const std::vector<CostFunction>& costs, double lo,
                                                    double hi,
                                                    const std::optional<Eigen::VectorXd>& stated =
                                                        std::nullopt) {
  const int n = static_cast<int>(costs.size());
  if (n == 0) throw std::invalid_argument("reference_optimum_consensus: no costs");
  auto total = [&](double c) {
    double v = 0.0;
    for (const auto& cost : costs) {
      if (!cost.has_value()) return std::numeric_limits<double>::quiet_NaN();
      v += cost.value(c);
    }
    return v;
  };
  if (std::isnan(total(0.5 * (lo + hi)))) {
    if (stated) return {*stated, OptimumMethod::Stated, std::numeric_limits<double>::quiet_NaN(),
                        false, {*stated}, std::numeric_limits<double>::quiet_NaN()};
    throw std::runtime_error("reference_optimum_consensus: costs need value functions");
  }

  constexpr int kGrid = 4001;
  int best_idx = -1;
  std::vector<double> vals(kGrid);
  for (int expand = 0; expand < 9; ++expand) {
    for (int i = 0; i < kGrid; ++i) vals[i] = total(lo + (hi - lo) * i / (kGrid - 1));
    best_idx = static_cast<int>(std::min_element(vals.begin(), vals.end()) - vals.begin());
    if (best_idx != 0 && best_idx != kGrid - 1) break;
    const double width = hi - lo;
    if (best_idx == 0) lo -= width;
    else hi += width;
  }

  auto refine = [&](double a, double b) {
    const double a0 = a, b0 = b;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - gr * (b - a), d = a + gr * (b - a);
    for (int it = 0; it < 200 && (b - a) > 1e-12 * std::max(1.0, std::abs(a)); ++it) {
      if (total(c) < total(d)) {
        b = d;
        d = c;
        c = b - gr * (b - a);
      } else {
        a = c;
        c = d;
        d = a + gr * (b - a);
      }
    }
    double best = 0.5 * (a + b);
    // Value comparisons cannot localize a smooth minimum below the square
    // root of machine precision (the objective differences drown in
    // rounding there). When the summed gradient brackets a sign change over
    // the original cell, bisect it to finish at full precision.
    const bool have_grads = std::all_of(costs.begin(), costs.end(), [](const CostFunction& cc) {
      return static_cast<bool>(cc.grad);
    });
    if (have_grads) {
      auto g = [&](double x) {
        double s = 0.0;
        for (const auto& cost : costs) s += cost.grad(x);
        return s;
      };
      double ga = g(a0), gb = g(b0);
      if (std::isfinite(ga) && std::isfinite(gb) && ga < 0.0 && gb > 0.0) {
        double aa = a0, bb = b0;
        for (int it = 0; it < 200; ++it) {
          const double m = 0.5 * (aa + bb);
          const double gm = g(m);
          if (!std::isfinite(gm)) return best;
          (gm <= 0.0 ? aa : bb) = m;
        }
        best = 0.5 * (aa + bb);
      }
    }
    return best;
  };

  const double cell = (hi - lo) / (kGrid - 1);
  const double best_c = refine(lo + cell * std::max(0, best_idx - 1), lo + cell * std::min(kGrid - 1, best_idx + 1));
  const double best_val = total(best_c);

  ReferenceOptimum ref;
  ref.x_star = Eigen::VectorXd::Constant(n, best_c);
  ref.method = OptimumMethod::GridRefine;
  ref.objective_value = best_val * 1.0;
  ref.candidates.push_back(ref.x_star);
  // Collect other interior local minima whose refined value ties the best.
  for (int i = 1; i + 1 < kGrid; ++i) {
    if (vals[i] <= vals[i - 1] && vals[i] <= vals[i + 1]) {
      const double c_loc = refine(lo + cell * (i - 1), lo + cell * (i + 1));
      if (std::abs(c_loc - best_c) < 1e-6) continue;
      if (total(c_loc) <= best_val + 1e-9 * std::max(1.0, std::abs(best_val))) {
        bool dup = false;
        for (const auto& cand : ref.candidates)
          if (std::abs(cand(0) - c_loc) < 1e-6) dup = true;
        if (!dup) ref.candidates.push_back(Eigen::VectorXd::Constant(n, c_loc));
      }
    }
  }
  ref.unique = ref.candidates.size() == 1 &&
               std::all_of(costs.begin(), costs.end(), [](const CostFunction& c) {
                 return c.convexity == Convexity::StronglyConvex;
               });
  return ref;
}

/// Options for the nearest-stationary-point searches.
struct KktSearchOptions {
  double reach = 0.0;        ///< half-width of the scan box; 0 = derive from the query point
  int level_grid = 201;      ///< coarse shared-marginal levels
  int dense_grid = 6001;     ///< per-agent gradient sampling
  int max_components = 4;    ///< per-agent level-set components kept (nearest to the query)
};

namespace detail {

/// All maximal intervals on which the sampled gradient crosses or touches
/// `level`, merged from a precomputed dense table. Intervals are refined by
/// bisection at their edges where the gradient is locally monotone.
inline std::vector<LevelSet> level_components(const CostFunction& c, const std::vector<double>& xs,
                                              const std::vector<double>& gs, double level,
                                              double query, int max_components) {
  const double tol = 1e-9 * std::max(1.0, std::abs(level));
  std::vector<LevelSet> comps;
  const int m = static_cast<int>(xs.size());
  int i = 0;
  while (i + 1 < m) {
    const bool hit_i = std::abs(gs[i] - level) <= tol;
    const bool crosses = (gs[i] - level) * (gs[i + 1] - level) < 0.0;
    if (hit_i || crosses) {
      // A component starts here: bisect the entry edge, then walk until the
      // gradient leaves the level band for good.
      double entry = xs[i];
      if (!hit_i && crosses) {
        double a = xs[i], b = xs[i + 1];
        for (int it = 0; it < 100; ++it) {
          const double mid = 0.5 * (a + b);
          if ((c.grad(mid) - level) * (gs[i] - level) > 0.0) a = mid;
          else b = mid;
        }
        entry = 0.5 * (a + b);
      }
      int j = i;
      while (j + 1 < m && (std::abs(gs[j + 1] - level) <= tol ||
                           (gs[j] - level) * (gs[j + 1] - level) < 0.0)) {
        ++j;
        // Merge through plateaus and immediate re-crossings.
        if (j + 1 < m && std::abs(gs[j] - level) > tol &&
            (gs[j] - level) * (gs[j + 1] - level) >= 0.0)
          break;
      }
      double exit = xs[j];
      if (j + 1 < m && (gs[j] - level) * (gs[j + 1] - level) < 0.0) {
        double a = xs[j], b = xs[j + 1];
        for (int it = 0; it < 100; ++it) {
          const double mid = 0.5 * (a + b);
          if ((c.grad(mid) - level) * (gs[j] - level) > 0.0) a = mid;
          else b = mid;
        }
        exit = 0.5 * (a + b);
      }
      comps.push_back({entry, std::max(entry, exit)});
      i = j + 1;
    } else {
      ++i;
    }
  }
  if (comps.empty()) return comps;
  std::sort(comps.begin(), comps.end(), [&](const LevelSet& a, const LevelSet& b) {
    auto dist = [&](const LevelSet& s) {
      return std::max({s.lo - query, query - s.hi, 0.0});
    };
    return dist(a) < dist(b);
  });
  if (static_cast<int>(comps.size()) > max_components) comps.resize(max_components);
  return comps;
}

}  // namespace detail

/// Euclidean distance from `x` to the nearest budget-feasible point with a
/// shared marginal value (all gradients equal, components summing to q0).
/// Scans a coarse-then-fine grid of candidate levels; for each level the
/// per-agent level sets are enumerated and the query is projected onto the
/// budget plane intersected with the chosen component boxes. Reference
/// candidates, when supplied, also compete.
inline double nearest_kkt_distance_rap(const Eigen::VectorXd& x, const std::vector<CostFunction>& costs,
                                       double q0, const ReferenceOptimum* reference = nullptr,
                                       const KktSearchOptions& opts_in = {}) {
  const int n = static_cast<int>(costs.size());

  // Strictly convex catalog: the stationary set is the single verified
  // reference point, so the distance is exact without any level scan.
  if (reference && !reference->candidates.empty() &&
      (reference->method == OptimumMethod::LinearKkt ||
       reference->method == OptimumMethod::MonotoneBracket) &&
      std::all_of(costs.begin(), costs.end(), [](const CostFunction& c) {
        return c.convexity == Convexity::StronglyConvex || c.convexity == Convexity::StrictlyConvex;
      })) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& cand : reference->candidates) best = std::min(best, (x - cand).norm());
    return best;
  }

  KktSearchOptions opts = opts_in;
  if (opts.reach <= 0.0)
    opts.reach = std::max({6.0, x.lpNorm<Eigen::Infinity>() + 1.0, std::abs(q0 / n) + 1.0});

  // Dense per-agent gradient tables reused for every level.
  std::vector<double> xs(opts.dense_grid);
  for (int k = 0; k < opts.dense_grid; ++k)
    xs[k] = -opts.reach + 2.0 * opts.reach * k / (opts.dense_grid - 1);
  std::vector<std::vector<double>> gs(n, std::vector<double>(opts.dense_grid));
  double level_lo = -std::numeric_limits<double>::infinity();
  double level_hi = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    double gmin = std::numeric_limits<double>::infinity(), gmax = -gmin;
    for (int k = 0; k < opts.dense_grid; ++k) {
      gs[i][k] = costs[i].grad(xs[k]);
      gmin = std::min(gmin, gs[i][k]);
      gmax = std::max(gmax, gs[i][k]);
    }
    level_lo = std::max(level_lo, gmin);
    level_hi = std::min(level_hi, gmax);
  }

  double best = std::numeric_limits<double>::infinity();
  if (reference)
    for (const auto& cand : reference->candidates) best = std::min(best, (x - cand).norm());
  if (level_lo > level_hi) return best;

  double best_level = 0.5 * (level_lo + level_hi);
  auto build_comps = [&](double level, std::vector<std::vector<detail::LevelSet>>& comps) {
    comps.assign(n, {});
    for (int i = 0; i < n; ++i) {
      comps[i] = detail::level_components(costs[i], xs, gs[i], level, x(i), opts.max_components);
      if (comps[i].empty()) return false;
    }
    return true;
  };
  // Budget mismatch when every agent sits at the midpoint of its nearest
  // component; sign changes of this quantity across levels locate the levels
  // where isolated (zero-width) level sets become budget-feasible.
  auto nearest_mid_gap = [&](double level) -> std::optional<double> {
    std::vector<std::vector<detail::LevelSet>> comps;
    if (!build_comps(level, comps)) return std::nullopt;
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += 0.5 * (comps[i][0].lo + comps[i][0].hi);
    return s - q0;
  };
  auto try_level = [&](double level) -> std::optional<double> {
    std::vector<std::vector<detail::LevelSet>> comps;
    if (!build_comps(level, comps)) return std::nullopt;
    double mid_sum = 0.0;
    for (int i = 0; i < n; ++i) mid_sum += 0.5 * (comps[i][0].lo + comps[i][0].hi);
    // Enumerate component choices (bounded by max_components^n).
    std::vector<int> pick(n, 0);
    while (true) {
      double sum_lo = 0.0, sum_hi = 0.0;
      for (int i = 0; i < n; ++i) {
        sum_lo += comps[i][pick[i]].lo;
        sum_hi += comps[i][pick[i]].hi;
      }
      if (q0 >= sum_lo - 1e-9 && q0 <= sum_hi + 1e-9) {
        // Project x onto {y in boxes, sum y = q0} by shifting a common offset.
        double nu_lo = -2.0 * opts.reach * n, nu_hi = 2.0 * opts.reach * n;
        for (int it = 0; it < 200; ++it) {
          const double nu = 0.5 * (nu_lo + nu_hi);
          double s = 0.0;
          for (int i = 0; i < n; ++i)
            s += std::clamp(x(i) - nu, comps[i][pick[i]].lo, comps[i][pick[i]].hi);
          if (s > q0) nu_lo = nu;
          else nu_hi = nu;
        }
        const double nu = 0.5 * (nu_lo + nu_hi);
        double dist2 = 0.0;
        for (int i = 0; i < n; ++i) {
          const double yi = std::clamp(x(i) - nu, comps[i][pick[i]].lo, comps[i][pick[i]].hi);
          dist2 += (x(i) - yi) * (x(i) - yi);
        }
        if (std::sqrt(dist2) < best) {
          best = std::sqrt(dist2);
          best_level = level;
        }
      }
      int d = 0;
      while (d < n) {
        if (++pick[d] < static_cast<int>(comps[d].size())) break;
        pick[d++] = 0;
      }
      if (d == n) break;
    }
    return mid_sum - q0;
  };

  const double level_step = (level_hi - level_lo) / std::max(1, opts.level_grid - 1);
  std::vector<std::pair<double, std::optional<double>>> probes;
  probes.reserve(opts.level_grid);
  for (int k = 0; k < opts.level_grid; ++k) {
    const double level = level_lo + level_step * k;
    probes.emplace_back(level, try_level(level));
  }
  // Bisect between adjacent levels whose nearest-component budget mismatch
  // changes sign: zero-width level sets are feasible only at such roots, which
  // a fixed level grid almost never lands on.
  for (std::size_t k = 0; k + 1 < probes.size(); ++k) {
    if (!probes[k].second || !probes[k + 1].second) continue;
    const double ga = *probes[k].second;
    const double gb = *probes[k + 1].second;
    if (ga == 0.0 || ga * gb >= 0.0) continue;
    double a = probes[k].first, b = probes[k + 1].first;
    for (int it = 0; it < 80; ++it) {
      const double m = 0.5 * (a + b);
      const auto gm = nearest_mid_gap(m);
      if (!gm) break;
      if (*gm * ga > 0.0) a = m;
      else b = m;
    }
    try_level(0.5 * (a + b));
  }
  // Fine pass: subdivide the neighborhood of the best coarse level.
  const double fine_lo = std::max(level_lo, best_level - 2.0 * level_step);
  const double fine_hi = std::min(level_hi, best_level + 2.0 * level_step);
  for (int f = 0; f <= 40; ++f) try_level(fine_lo + (fine_hi - fine_lo) * f / 40.0);
  return best;
}

/// Euclidean distance from `x` to the nearest agreement-line point whose
/// summed gradient vanishes (grid + bisection root finding on [lo, hi]).
inline double nearest_kkt_distance_consensus(const Eigen::VectorXd& x,
                                             const std::vector<CostFunction>& costs, double lo, double hi,
                                             const ReferenceOptimum* reference = nullptr,
                                             int grid = 20001) {
  const int n = static_cast<int>(costs.size());
  auto total_grad = [&](double c) {
    double s = 0.0;
    for (const auto& cost : costs) s += cost.grad(c);
    return s;
  };
  double best = std::numeric_limits<double>::infinity();
  if (reference)
    for (const auto& cand : reference->candidates) best = std::min(best, (x - cand).norm());
  auto consider = [&](double c) {
    double dist2 = 0.0;
    for (int i = 0; i < n; ++i) dist2 += (x(i) - c) * (x(i) - c);
    best = std::min(best, std::sqrt(dist2));
  };
  double prev_c = lo, prev_g = total_grad(lo);
  for (int k = 1; k < grid; ++k) {
    const double c = lo + (hi - lo) * k / (grid - 1);
    const double g = total_grad(c);
    if (std::abs(g) <= 1e-12) consider(c);
    else if (prev_g * g < 0.0) {
      double a = prev_c, b = c;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (a + b);
        if (total_grad(mid) * prev_g > 0.0) a = mid;
        else b = mid;
      }
      consider(0.5 * (a + b));
    }
    prev_c = c;
    prev_g = g;
  }
  return best;
}

/// Convergence verdict data for one integrated run.
struct ConvergenceReport {
  double epsilon_used = 0.0;
  double dist_at_tp = 0.0;   ///< distance at the predefined time
  double post_tp_max = 0.0;  ///< worst distance over the post-switch samples
  double tail_dist = 0.0;    ///< distance at the final sample
  Verdict verdict = Verdict::Failed;
  double first_t_within_eps = std::numeric_limits<double>::quiet_NaN();  ///< filled by the runner when streamed
};

/// Scores a trajectory with a caller-supplied distance function:
/// `PredefinedTimeOptimal` requires being inside the epsilon ball at the
/// predefined time, staying inside it afterwards, and ending within
/// tail_tol (default: epsilon). A ball entry that is later left scores
/// `ApproximateOnly`; missing the ball at the predefined time is `Failed`.
inline ConvergenceReport convergence_report(const Trajectory& traj,
                                            const std::function<double(const Eigen::VectorXd&)>& distance,
                                            double t_p, double epsilon,
                                            double tail_tol = std::numeric_limits<double>::quiet_NaN(),
                                            int post_samples = 50) {
  if (traj.times.empty() || traj.times.back() < t_p - 1e-12)
    throw std::invalid_argument("convergence_report: trajectory must span the predefined time");
  if (std::isnan(tail_tol)) tail_tol = epsilon;

  ConvergenceReport report;
  report.epsilon_used = epsilon;
  const std::size_t at_tp = traj.index_at_or_after(t_p);
  report.dist_at_tp = distance(traj.states[at_tp]);

  const std::size_t last = traj.states.size() - 1;
  const std::size_t span = last - at_tp;
  const std::size_t stride = std::max<std::size_t>(1, span / std::max(1, post_samples - 1));
  report.post_tp_max = report.dist_at_tp;
  for (std::size_t i = at_tp; i < last; i += stride)
    report.post_tp_max = std::max(report.post_tp_max, distance(traj.states[i]));
  report.tail_dist = distance(traj.states[last]);
  report.post_tp_max = std::max(report.post_tp_max, report.tail_dist);

  if (report.dist_at_tp <= epsilon && report.post_tp_max <= epsilon && report.tail_dist <= tail_tol)
    report.verdict = Verdict::PredefinedTimeOptimal;
  else if (report.dist_at_tp <= epsilon)
    report.verdict = Verdict::ApproximateOnly;
  else
    report.verdict = Verdict::Failed;
  return report;
}

/// Per-sample audit of the Lyapunov functional against its contraction
/// envelope and its two-sided quadratic sandwich. A margin breach (delta
/// exceeding alpha/D) is reported upfront and suppresses the envelope count,
/// whose exponent would be meaningless.
struct LyapunovAudit {
  bool margin_breach = false;
  double delta = 0.0;
  double margin_limit = 0.0;
  int samples = 0;
  int envelope_violations = 0;
  int sandwich_violations = 0;
  double max_envelope_excess = 0.0;  ///< worst relative overshoot of the envelope
  double max_sandwich_excess = 0.0;  ///< worst relative breach of either sandwich side
  double v0 = 0.0;
};

namespace detail {

template <typename StateOf, typename VOf, typename SandwichOf>
LyapunovAudit audit_impl(const Trajectory& traj, const Tbg& tbg, const CoefficientSet& cs,
                         const StateOf& state_of, const VOf& v_of, const SandwichOf& sandwich_of,
                         double rel_tol) {
  LyapunovAudit audit;
  audit.delta = cs.delta;
  audit.margin_limit = cs.margin_limit;
  audit.margin_breach = !cs.margin_ok;
  audit.v0 = v_of(state_of(traj.states.front()));
  const double atol = 1e-12 * std::max(1.0, audit.v0);
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const auto s = state_of(traj.states[k]);
    const double v = v_of(s);
    ++audit.samples;
    if (!audit.margin_breach) {
      const double envelope = perturbed_bound(tbg, traj.times[k], 0.0, cs.delta) * audit.v0;
      if (v > envelope * (1.0 + rel_tol) + atol) {
        ++audit.envelope_violations;
        if (envelope > 0.0)
          audit.max_envelope_excess = std::max(audit.max_envelope_excess, v / envelope - 1.0);
      }
    }
    const auto [lower, upper] = sandwich_of(s);
    if (v < lower * (1.0 - rel_tol) - atol || v > upper * (1.0 + rel_tol) + atol) {
      ++audit.sandwich_violations;
      const double breach = std::max(lower > 0.0 ? lower / std::max(v, 1e-300) - 1.0 : 0.0,
                                     upper > 0.0 ? v / upper - 1.0 : 0.0);
      audit.max_sandwich_excess = std::max(audit.max_sandwich_excess, breach);
    }
  }
  return audit;
}

}  // namespace detail

/// Audit for the resource-allocation dynamics.
inline LyapunovAudit lyapunov_audit(const Trajectory& traj, const RapSystem& sys,
                                    const CoefficientSet& cs, const OrthogonalFrame& frame,
                                    const RapState& eq, double rel_tol = 1e-3) {
  return detail::audit_impl(
      traj, sys.tbg(), cs, [](const Eigen::VectorXd& flat) { return unpack_rap(flat); },
      [&](const RapState& s) { return lyapunov_rap(s, eq, cs, frame); },
      [&](const RapState& s) { return lyapunov_rap_sandwich(s, eq, cs, frame); }, rel_tol);
}

/// Audit for the consensus dynamics.
inline LyapunovAudit lyapunov_audit(const Trajectory& traj, const ConsensusSystem& sys,
                                    const CoefficientSet& cs, const OrthogonalFrame& frame,
                                    const ConsensusState& eq, double rel_tol = 1e-3) {
  return detail::audit_impl(
      traj, sys.tbg(), cs, [](const Eigen::VectorXd& flat) { return unpack_consensus(flat); },
      [&](const ConsensusState& s) { return lyapunov_consensus(s, eq, cs, frame); },
      [&](const ConsensusState& s) { return lyapunov_consensus_sandwich(s, eq, cs, frame); }, rel_tol);
}

/// Total variation of the leading `x_dims` state components over [t_p, t_end]
/// divided by the window length. Zero iff those components are constant after
/// t_p on the recorded samples.
inline double oscillation_metric(const Trajectory& traj, double t_p, int x_dims) {
  if (traj.times.empty() || traj.times.back() < t_p - 1e-12)
    throw std::invalid_argument("oscillation_metric: trajectory must span the predefined time");
  const double span = traj.times.back() - t_p;
  if (span <= 0.0) return 0.0;
  double tv = 0.0;
  std::size_t start = traj.index_at_or_after(t_p);
  for (std::size_t k = start + 1; k < traj.states.size(); ++k)
    tv += (traj.states[k].head(x_dims) - traj.states[k - 1].head(x_dims)).cwiseAbs().sum();
  return tv / span;
}

/// Streaming variant of oscillation_metric fed from the integrator observer,
/// immune to sample decimation.
class OscillationAccumulator {
 public:
  OscillationAccumulator(double t_p, int x_dims) : t_p_(t_p), dims_(x_dims) {}

  void feed(double t, const Eigen::VectorXd& state) {
    if (t >= t_p_ - 1e-12) {
      if (have_prev_) tv_ += (state.head(dims_) - prev_).cwiseAbs().sum();
      prev_ = state.head(dims_);
      have_prev_ = true;
      t_last_ = t;
    }
  }

  double metric() const {
    const double span = t_last_ - t_p_;
    return span > 0.0 ? tv_ / span : 0.0;
  }

 private:
  double t_p_;
  int dims_;
  bool have_prev_ = false;
  double tv_ = 0.0;
  double t_last_ = 0.0;
  Eigen::VectorXd prev_;
};

/// Ball-radius candidates derived from the contraction envelope of the
/// Lyapunov functional at the predefined time; the looser and tighter
/// normalizations are both computed and the larger is used. Falls back to
/// the floor when the perturbation margin is breached.
struct EpsilonPolicy {
  double candidate_weight = 0.0;  ///< normalization by the smaller Lyapunov weight
  double candidate_alpha = 0.0;   ///< normalization by the contraction exponent
  double resolved = 0.0;
  bool from_floor = false;
};

inline EpsilonPolicy resolve_epsilon(const Tbg& tbg, const CoefficientSet& cs, double v0,
                                     double floor_value = 0.05) {
  EpsilonPolicy pol;
  if (!cs.margin_ok || v0 <= 0.0) {
    pol.resolved = floor_value;
    pol.from_floor = true;
    return pol;
  }
  const double shrink = std::pow(tbg.mu(tbg.t_p, 0.0), tbg.alpha - tbg.d_const * cs.delta);
  const double weight_floor = std::min(cs.rho, cs.beta);
  pol.candidate_weight = std::sqrt(2.0 * tbg.d_const / weight_floor * shrink * v0);
  pol.candidate_alpha = std::sqrt(2.0 * tbg.d_const / tbg.alpha * shrink * v0);
  const double candidate = std::max(pol.candidate_weight, pol.candidate_alpha);
  pol.resolved = std::max(candidate, floor_value);
  pol.from_floor = pol.resolved == floor_value && candidate < floor_value;
  return pol;
}

}  // namespace tbgsim

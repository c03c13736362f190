#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tbgsim {

enum class TbgKind { Constant, Theta, GammaPolynomial };

/// Time-base generator: a time-varying gain A(t) together with the base
/// mu(t,tau) of its certified contraction family D*mu(t,tau)^alpha.
///
/// All catalog generators build mu from a cumulative phase psi with
/// mu(t,tau) = exp(psi(tau) - psi(t)), which makes the semigroup identity
/// mu(t,tau)*mu(tau,s) = mu(t,s) exact by construction. Custom generators
/// (e.g. deliberately broken ones in tests) may supply any mu directly.
struct Tbg {
  TbgKind kind = TbgKind::Constant;
  double alpha = 1.0;    ///< contraction exponent
  double t_p = 1.0;      ///< predefined time (gain switch point)
  double d_const = 1.0;  ///< overshoot constant D >= 1
  double varsigma = 0.0; ///< ramp headroom, used by GammaPolynomial only
  std::function<double(double)> gain;            ///< A(t), strictly positive
  std::function<double(double, double)> mu;      ///< mu(t, tau) for t >= tau
};

namespace detail {

/// theta(t) = (2/pi) * e^t * (pi/2 + arctan t); theta(0) = 1.
inline double theta_fn(double t) {
  return (2.0 / std::numbers::pi) * std::exp(t) * (std::numbers::pi / 2.0 + std::atan(t));
}

/// Quintic ramp with zero first and second derivatives at both ends:
/// s in [0,1] -> 6s^5 - 15s^4 + 10s^3.
inline double quintic_ramp(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  return ((6.0 * s - 15.0) * s + 10.0) * s * s * s;
}

inline double quintic_ramp_deriv(double s) {
  if (s <= 0.0 || s >= 1.0) return 0.0;
  return ((30.0 * s - 60.0) * s + 30.0) * s * s;
}

}  // namespace detail

/// Constant-gain generator: gain alpha up to t_p, post_gain afterwards;
/// mu(t,tau) = exp(-(t-tau)).
inline Tbg make_constant_tbg(double alpha, double t_p, double post_gain, double d_const = 1.0) {
  if (alpha <= 0.0 || t_p <= 0.0 || post_gain <= 0.0 || d_const < 1.0)
    throw std::invalid_argument("make_constant_tbg: parameters must be positive (D >= 1)");
  Tbg tbg;
  tbg.kind = TbgKind::Constant;
  tbg.alpha = alpha;
  tbg.t_p = t_p;
  tbg.d_const = d_const;
  tbg.gain = [alpha, t_p, post_gain](double t) { return t <= t_p ? alpha : post_gain; };
  // psi(t) = min(t, t_p) + (post/alpha) * max(0, t - t_p)
  tbg.mu = [alpha, t_p, post_gain](double t, double tau) {
    auto psi = [&](double s) {
      return std::min(s, t_p) + (post_gain / alpha) * std::max(0.0, s - t_p);
    };
    return std::exp(psi(tau) - psi(t));
  };
  return tbg;
}

/// Accelerating generator built on theta(t) = (2/pi) e^t (pi/2 + arctan t):
/// gain(t) = alpha * theta'(t)/theta(t) up to t_p, post_gain afterwards;
/// mu(t,tau) = theta(tau)/theta(t) on [0, t_p].
inline Tbg make_theta_tbg(double alpha, double t_p, double post_gain, double d_const = 1.0) {
  if (alpha <= 0.0 || t_p <= 0.0 || post_gain <= 0.0 || d_const < 1.0)
    throw std::invalid_argument("make_theta_tbg: parameters must be positive (D >= 1)");
  Tbg tbg;
  tbg.kind = TbgKind::Theta;
  tbg.alpha = alpha;
  tbg.t_p = t_p;
  tbg.d_const = d_const;
  tbg.gain = [alpha, t_p, post_gain](double t) {
    if (t > t_p) return post_gain;
    // theta'(t)/theta(t) = 1 + 1/((pi/2 + arctan t)(1 + t^2))
    return alpha * (1.0 + 1.0 / ((std::numbers::pi / 2.0 + std::atan(t)) * (1.0 + t * t)));
  };
  tbg.mu = [alpha, t_p, post_gain](double t, double tau) {
    auto psi = [&](double s) {
      const double pre = std::log(detail::theta_fn(std::min(s, t_p)));
      return pre + (post_gain / alpha) * std::max(0.0, s - t_p);
    };
    return std::exp(psi(tau) - psi(t));
  };
  return tbg;
}

/// Prior-generation polynomial generator used for comparison runs:
/// gain(t) = v * ramp'(t) / (1 + varsigma - ramp(t)) with a quintic ramp,
/// clamped to a small positive floor where ramp' = 0 so dynamics that divide
/// by the gain stay finite. mu(t,tau) = (1+vs-ramp(t))/(1+vs-ramp(tau)).
inline Tbg make_gamma_tbg(double v, double t_p, double varsigma) {
  if (v <= 0.0 || t_p <= 0.0 || varsigma <= 0.0)
    throw std::invalid_argument("make_gamma_tbg: parameters must be positive");
  constexpr double kGainFloor = 1e-6;
  Tbg tbg;
  tbg.kind = TbgKind::GammaPolynomial;
  tbg.alpha = v;
  tbg.t_p = t_p;
  tbg.d_const = 1.0;
  tbg.varsigma = varsigma;
  tbg.gain = [v, t_p, varsigma, kGainFloor](double t) {
    const double s = t / t_p;
    const double num = v * detail::quintic_ramp_deriv(s) / t_p;
    const double den = 1.0 + varsigma - detail::quintic_ramp(s);
    return std::max(num / den, kGainFloor);
  };
  tbg.mu = [t_p, varsigma](double t, double tau) {
    auto level = [&](double s) { return 1.0 + varsigma - detail::quintic_ramp(s / t_p); };
    return level(t) / level(tau);
  };
  return tbg;
}

/// D * mu(t,tau)^alpha, the contraction-family value bounding the evolution
/// operator norm of the gain-driven scalar flow.
inline double evolution_bound(const Tbg& tbg, double t, double tau) {
  if (t < tau) throw std::invalid_argument("evolution_bound: requires t >= tau");
  return tbg.d_const * std::pow(tbg.mu(t, tau), tbg.alpha);
}

/// Envelope with a perturbation-reduced exponent: D * mu^(alpha - D*delta).
inline double perturbed_bound(const Tbg& tbg, double t, double tau, double delta) {
  if (t < tau) throw std::invalid_argument("perturbed_bound: requires t >= tau");
  return tbg.d_const * std::pow(tbg.mu(t, tau), tbg.alpha - tbg.d_const * delta);
}

/// Numerical certification record for a generator on a sample grid.
struct ContractionReport {
  std::vector<std::pair<double, double>> checked_grid;  ///< all (t, tau) pairs examined
  double max_semigroup_violation = 0.0;  ///< max relative |mu(t,tau)mu(tau,s) - mu(t,s)| / mu(t,s)
  double min_rate_floor = 0.0;           ///< min over grid of mu-growth-rate / 1 (>= 1 required)
  double epsilon_at_tp = 0.0;            ///< D * mu(t_p, 0)^alpha
  int monotone_violations = 0;           ///< count of grid steps where mu(t, grid[0]) increased
};

/// Samples all grid triples for the semigroup identity, checks the
/// logarithmic growth-rate floor of 1/mu(t,0) by central finite differences,
/// and records the contraction value reached at t_p.
inline ContractionReport verify_contraction(const Tbg& tbg, const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("verify_contraction: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i] < grid[i - 1]) throw std::invalid_argument("verify_contraction: grid must be ascending");

  ContractionReport report;
  const std::size_t g = grid.size();
  for (std::size_t k = 0; k < g; ++k)
    for (std::size_t j = 0; j <= k; ++j) report.checked_grid.emplace_back(grid[k], grid[j]);

  for (std::size_t k = 0; k < g; ++k) {
    for (std::size_t j = 0; j <= k; ++j) {
      for (std::size_t i = 0; i <= j; ++i) {
        const double whole = tbg.mu(grid[k], grid[i]);
        const double split = tbg.mu(grid[k], grid[j]) * tbg.mu(grid[j], grid[i]);
        const double rel = std::abs(split - whole) / std::max(whole, 1e-300);
        report.max_semigroup_violation = std::max(report.max_semigroup_violation, rel);
      }
    }
  }

  // Rate floor on the reciprocal base r(t) = 1/mu(t,0): r'(t)/r(t) >= 1.
  // The floor is a pre-switch property, so the difference stencil never
  // straddles t_p (where the gain may legitimately drop).
  const double h = 1e-7 * tbg.t_p;
  bool first = true;
  for (double t : grid) {
    auto recip = [&](double s) { return 1.0 / tbg.mu(s, 0.0); };
    double rate;
    const bool pre_switch = t <= tbg.t_p + 1e-15;
    if (t < h) {
      rate = (recip(t + h) - recip(t)) / h / recip(t);  // forward at the left edge
    } else if (pre_switch && t + h > tbg.t_p + 1e-15) {
      rate = (recip(t) - recip(t - h)) / h / recip(t);  // backward just before the switch
    } else {
      rate = (recip(t + h) - recip(t - h)) / (2.0 * h) / recip(t);
    }
    report.min_rate_floor = first ? rate : std::min(report.min_rate_floor, rate);
    first = false;
  }

  for (std::size_t k = 1; k < g; ++k) {
    if (tbg.mu(grid[k], grid[0]) > tbg.mu(grid[k - 1], grid[0]) + 1e-15) ++report.monotone_violations;
  }

  report.epsilon_at_tp = tbg.d_const * std::pow(tbg.mu(tbg.t_p, 0.0), tbg.alpha);
  return report;
}

/// Evenly spaced grid of n points over [lo, hi] (n >= 2).
inline std::vector<double> uniform_grid(double lo, double hi, int n) {
  if (n < 2 || hi <= lo) throw std::invalid_argument("uniform_grid: need n >= 2 and hi > lo");
  std::vector<double> grid(n);
  for (int i = 0; i < n; ++i) grid[i] = lo + (hi - lo) * i / (n - 1);
  return grid;
}

}  // namespace tbgsim

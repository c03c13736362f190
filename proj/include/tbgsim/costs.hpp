#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tbgsim {

enum class Convexity { StronglyConvex, StrictlyConvex, Convex, NonConvex };

/// Declared gradient-regularity bound: |grad(x) - grad(y)| <= M|x-y| + M_tilde
/// on the certified interval. M_tilde == 0 states a plain Lipschitz bound.
struct Smoothness {
  double M = 0.0;
  double M_tilde = 0.0;
};

/// Scalar agent cost, carried as its gradient plus declared metadata. The
/// antiderivative `value` is provided for every catalog cost (stitched to be
/// continuous across branch boundaries) and is used by reference-optimum
/// searches and tests; the dynamics consume only `grad`.
struct CostFunction {
  std::string kind;
  std::vector<double> params;
  Convexity convexity = Convexity::Convex;
  Smoothness smooth;
  std::optional<Smoothness> generalized;  ///< coarser slope with additive term, when declared
  double valid_lo = -1.0;                 ///< certified interval for the declared bounds
  double valid_hi = 1.0;
  std::function<double(double)> grad;
  std::function<double(double)> value;

  bool has_value() const { return static_cast<bool>(value); }
};

/// grad(x) = a*x + b with a > 0.
inline CostFunction quadratic_cost(double a, double b) {
  if (a <= 0.0) throw std::invalid_argument("quadratic_cost: curvature must be positive");
  CostFunction c;
  c.kind = "quadratic";
  c.params = {a, b};
  c.convexity = Convexity::StronglyConvex;
  c.smooth = {a, 0.0};
  c.valid_lo = -1e6;
  c.valid_hi = 1e6;
  c.grad = [a, b](double x) { return a * x + b; };
  c.value = [a, b](double x) { return 0.5 * a * x * x + b * x; };
  return c;
}

/// Twelve-branch piecewise gradient: linear tails 0.011x (x <= -1) and
/// 0.009x (x >= 1), shifted cubics (x + c_j)^3 + k_j on the ten interior
/// 0.2-wide cells. Continuous and nondecreasing, with isolated zero-slope
/// points at the cell centers.
inline CostFunction piecewise_cubic_cost() {
  struct Tables {
    // interior cells [lo_j, lo_j + 0.2), j = 0..9
    std::array<double, 10> center;  // additive shift c_j
    std::array<double, 10> offset;  // constant k_j
    std::array<double, 11> vconst;  // antiderivative constants: [0..9] cells, [10] right tail
    double left_tail_at_m1;         // antiderivative of the left tail at x = -1
  };
  static const Tables tables = [] {
    Tables t{};
    for (int j = 0; j < 10; ++j) {
      const double lo = -1.0 + 0.2 * j;
      t.center[j] = -(lo + 0.1);  // (x + c_j) vanishes at the cell midpoint
      // Offsets -0.01, -0.008, ..., -0.002, then 0 at the center cell, then
      // 0.002, ..., 0.008: the sequence that meets the linear tails at +-1.
      t.offset[j] = (j < 5) ? (-0.01 + 0.002 * j) : ((j == 5) ? 0.0 : 0.002 * (j - 5));
    }
    // Stitch antiderivative constants left to right, anchored at F(x)=0.0055x^2 on the left tail.
    t.left_tail_at_m1 = 0.0055;  // 0.0055 * (-1)^2
    double carry = t.left_tail_at_m1;
    for (int j = 0; j < 10; ++j) {
      const double lo = -1.0 + 0.2 * j;
      auto cell = [&](double x) {
        const double s = x + t.center[j];
        return 0.25 * s * s * s * s + t.offset[j] * x;
      };
      t.vconst[j] = carry - cell(lo);
      carry = cell(lo + 0.2) + t.vconst[j];
    }
    t.vconst[10] = carry - 0.0045;  // right tail F = 0.0045x^2 + C at x = 1
    return t;
  }();

  CostFunction c;
  c.kind = "piecewise_cubic";
  c.convexity = Convexity::StrictlyConvex;
  c.smooth = {0.03, 0.0};  // max branch slope 3*(0.1)^2 on the clamp region
  c.valid_lo = -3.0;
  c.valid_hi = 3.0;
  c.grad = [](double x) {
    if (x <= -1.0) return 0.011 * x;
    if (x >= 1.0) return 0.009 * x;
    const int j = std::min(9, static_cast<int>(std::floor((x + 1.0) / 0.2)));
    const double s = x + tables.center[j];
    return s * s * s + tables.offset[j];
  };
  c.value = [](double x) {
    if (x <= -1.0) return 0.0055 * x * x;
    if (x >= 1.0) return 0.0045 * x * x + tables.vconst[10];
    const int j = std::min(9, static_cast<int>(std::floor((x + 1.0) / 0.2)));
    const double s = x + tables.center[j];
    return 0.25 * s * s * s * s + tables.offset[j] * x + tables.vconst[j];
  };
  return c;
}

/// Oscillatory gradient 2x sin(1/x) - cos(1/x) on (0.2, 0.4), clipped to its
/// boundary values outside: flat branches make whole intervals stationary.
inline CostFunction clipped_oscillatory_cost() {
  const double lo_val = 0.4 * std::sin(5.0) - std::cos(5.0);   // value held for x <= 0.2
  const double hi_val = 0.8 * std::sin(2.5) - std::cos(2.5);   // value held for x >= 0.4
  // Antiderivative constants: anchor F = lo_val*x on the left branch, then stitch.
  const double c_mid = 0.2 * lo_val - 0.04 * std::sin(5.0);
  const double c_hi = 0.16 * std::sin(2.5) + c_mid - 0.4 * hi_val;
  CostFunction c;
  c.kind = "clipped_oscillatory";
  c.convexity = Convexity::Convex;
  c.smooth = {20.0, 0.0};
  c.valid_lo = -6.0;
  c.valid_hi = 6.0;
  c.grad = [lo_val, hi_val](double x) {
    if (x <= 0.2) return lo_val;
    if (x >= 0.4) return hi_val;
    return 2.0 * x * std::sin(1.0 / x) - std::cos(1.0 / x);
  };
  c.value = [lo_val, hi_val, c_mid, c_hi](double x) {
    if (x <= 0.2) return lo_val * x;
    if (x >= 0.4) return hi_val * x + c_hi;
    return x * x * std::sin(1.0 / x) + c_mid;
  };
  return c;
}

/// f(x) = x^2 sin(1/x) with f(0) = 0; gradient 2x sin(1/x) - cos(1/x),
/// guarded to 0 inside |x| <= 1e-9 (the derivative at 0 exists and is 0).
inline CostFunction xsq_sin_inv_cost() {
  constexpr double kGuard = 1e-9;
  CostFunction c;
  c.kind = "xsq_sin_inv";
  c.convexity = Convexity::NonConvex;
  c.smooth = {2.0, 2.0};
  c.valid_lo = -6.0;
  c.valid_hi = 6.0;
  c.grad = [](double x) {
    if (std::abs(x) <= kGuard) return 0.0;
    return 2.0 * x * std::sin(1.0 / x) - std::cos(1.0 / x);
  };
  c.value = [](double x) {
    if (std::abs(x) <= kGuard) return 0.0;
    return x * x * std::sin(1.0 / x);
  };
  return c;
}

/// Three-branch gradient: 1000x inside |x| < 0.1, 100x +/- 90 outside, all
/// multiplied by `scale`. Continuous and monotone; carries both the steep
/// Lipschitz bound (1000*scale) and the shallow-plus-additive pair
/// (100*scale, 200*scale).
inline CostFunction steep_piecewise_linear_cost(double scale) {
  if (scale <= 0.0) throw std::invalid_argument("steep_piecewise_linear_cost: scale must be positive");
  CostFunction c;
  c.kind = "steep_piecewise_linear";
  c.params = {scale};
  c.convexity = Convexity::StronglyConvex;
  c.smooth = {1000.0 * scale, 0.0};
  c.generalized = Smoothness{100.0 * scale, 200.0 * scale};
  c.valid_lo = -1e6;
  c.valid_hi = 1e6;
  c.grad = [scale](double x) {
    if (x >= 0.1) return scale * (100.0 * x + 90.0);
    if (x <= -0.1) return scale * (100.0 * x - 90.0);
    return scale * 1000.0 * x;
  };
  c.value = [scale](double x) {
    if (x >= 0.1) return scale * (50.0 * x * x + 90.0 * x - 4.5);
    if (x <= -0.1) return scale * (50.0 * x * x - 90.0 * x - 4.5);
    return scale * 500.0 * x * x;
  };
  return c;
}

/// f(x) = x sin(1/x) with f(0) = 0; gradient sin(1/x) - cos(1/x)/x, guarded
/// to 0 inside |x| <= 1e-9 (no derivative exists at 0; the guard keeps the
/// dynamics finite).
inline CostFunction x_sin_inv_cost() {
  constexpr double kGuard = 1e-9;
  CostFunction c;
  c.kind = "x_sin_inv";
  c.convexity = Convexity::NonConvex;
  c.smooth = {1000.0, 0.0};
  c.valid_lo = 0.1;
  c.valid_hi = 51.0;
  c.grad = [](double x) {
    if (std::abs(x) <= kGuard) return 0.0;
    return std::sin(1.0 / x) - std::cos(1.0 / x) / x;
  };
  c.value = [](double x) {
    if (std::abs(x) <= kGuard) return 0.0;
    return x * std::sin(1.0 / x);
  };
  return c;
}

/// The three strongly convex quadratics of the consensus quick-start
/// scenario: gradients x - 1, x - 9, x.
inline std::vector<CostFunction> consensus_quadratics() {
  return {quadratic_cost(1.0, -1.0), quadratic_cost(1.0, -9.0), quadratic_cost(1.0, 0.0)};
}

/// Build a catalog cost from its config identifier and parameter list.
inline CostFunction cost_from_spec(const std::string& kind, const std::vector<double>& params) {
  if (kind == "quadratic") {
    if (params.size() != 2) throw std::invalid_argument("cost quadratic: expected params [a, b]");
    return quadratic_cost(params[0], params[1]);
  }
  if (kind == "piecewise_cubic") return piecewise_cubic_cost();
  if (kind == "clipped_oscillatory") return clipped_oscillatory_cost();
  if (kind == "xsq_sin_inv") return xsq_sin_inv_cost();
  if (kind == "steep_piecewise_linear") {
    if (params.size() != 1) throw std::invalid_argument("cost steep_piecewise_linear: expected params [scale]");
    return steep_piecewise_linear_cost(params[0]);
  }
  if (kind == "x_sin_inv") return x_sin_inv_cost();
  throw std::invalid_argument("unknown cost kind: " + kind);
}

/// Empirical gradient-regularity estimate over all pairs of a uniform sample
/// grid: M_hat is the worst difference quotient; M_tilde_hat is the worst
/// additive excess over the declared slope (the generalized slope when one is
/// declared, the plain Lipschitz slope otherwise).
struct SmoothnessEstimate {
  double M_hat = 0.0;
  double M_tilde_hat = 0.0;
};

inline SmoothnessEstimate estimate_smoothness(const CostFunction& c, double lo, double hi, int samples) {
  if (!(lo < hi) || samples < 2) throw std::invalid_argument("estimate_smoothness: invalid interval or sample count");
  const double slope = c.generalized ? c.generalized->M : c.smooth.M;
  std::vector<double> xs(samples), gs(samples);
  for (int i = 0; i < samples; ++i) {
    xs[i] = lo + (hi - lo) * i / (samples - 1);
    gs[i] = c.grad(xs[i]);
  }
  SmoothnessEstimate est;
  for (int i = 0; i < samples; ++i) {
    for (int j = i + 1; j < samples; ++j) {
      const double dx = std::abs(xs[j] - xs[i]);
      const double dg = std::abs(gs[j] - gs[i]);
      if (dx > 1e-12) est.M_hat = std::max(est.M_hat, dg / dx);
      est.M_tilde_hat = std::max(est.M_tilde_hat, dg - slope * dx);
    }
  }
  return est;
}

}  // namespace tbgsim

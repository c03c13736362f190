#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "tbgsim/costs.hpp"
#include "tbgsim/graph.hpp"
#include "tbgsim/tbg.hpp"

namespace tbgsim {

/// Four-block state of the resource-allocation dynamics.
struct RapState {
  Eigen::VectorXd x, y, z, u;
};

/// Two-block state of the consensus-optimization dynamics.
struct ConsensusState {
  Eigen::VectorXd x, w;
};

inline Eigen::VectorXd pack(const RapState& s) {
  const auto n = s.x.size();
  Eigen::VectorXd flat(4 * n);
  flat << s.x, s.y, s.z, s.u;
  return flat;
}

inline RapState unpack_rap(const Eigen::VectorXd& flat) {
  const auto n = flat.size() / 4;
  return {flat.head(n), flat.segment(n, n), flat.segment(2 * n, n), flat.tail(n)};
}

inline Eigen::VectorXd pack(const ConsensusState& s) {
  const auto n = s.x.size();
  Eigen::VectorXd flat(2 * n);
  flat << s.x, s.w;
  return flat;
}

inline ConsensusState unpack_consensus(const Eigen::VectorXd& flat) {
  const auto n = flat.size() / 2;
  return {flat.head(n), flat.tail(n)};
}

/// Resource-allocation dynamics with gain-attenuated gradient flow. The
/// gradient (and the coupling z-term) carry the small fixed coefficient
/// varrho; with `baseline` set, both coefficients are the live gain instead —
/// the behaviour of the non-attenuated design this one is compared against.
class RapSystem {
 public:
  RapSystem(const Graph& graph, std::vector<CostFunction> costs, Eigen::VectorXd q, Tbg tbg,
            double varrho, bool baseline = false)
      : lap_(graph.laplacian()),
        costs_(std::move(costs)),
        q_(std::move(q)),
        tbg_(std::move(tbg)),
        varrho_(varrho),
        baseline_(baseline),
        n_(graph.size()),
        g_(n_),
        coupl_(n_) {
    if (static_cast<int>(costs_.size()) != n_ || q_.size() != n_)
      throw std::invalid_argument("rap system: costs/demand length must match agent count");
    if (varrho_ <= 0.0) throw std::invalid_argument("rap system: varrho must be positive");
  }

  int agents() const { return n_; }
  const Eigen::MatrixXd& lap() const { return lap_; }
  const std::vector<CostFunction>& costs() const { return costs_; }
  const Eigen::VectorXd& demand() const { return q_; }
  const Tbg& tbg() const { return tbg_; }
  double varrho() const { return varrho_; }
  bool baseline() const { return baseline_; }

  /// Flat-state derivative, blocks [x; y; z; u].
  void operator()(double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) const {
    const double gain = tbg_.gain(t);
    if (gain <= 0.0) throw std::invalid_argument("rap system: nonpositive gain");
    const double coeff = baseline_ ? gain : varrho_;
    const auto x = s.head(n_), y = s.segment(n_, n_), z = s.segment(2 * n_, n_), u = s.tail(n_);
    for (int i = 0; i < n_; ++i) g_(i) = costs_[i].grad(x(i));
    ds.resize(4 * n_);
    ds.head(n_) = -coeff * g_ + gain * (y - x);
    coupl_.noalias() = lap_ * z;
    ds.segment(n_, n_) = gain * (q_ - x) - gain * (lap_ * y) + coeff * coupl_;
    ds.segment(2 * n_, n_) = gain * (lap_ * (y - z - u));
    ds.tail(n_) = gain * (lap_ * (y - x));
  }

 private:
  Eigen::MatrixXd lap_;
  std::vector<CostFunction> costs_;
  Eigen::VectorXd q_;
  Tbg tbg_;
  double varrho_;
  bool baseline_;
  int n_;
  mutable Eigen::VectorXd g_, coupl_;
};

/// Consensus-optimization dynamics; same attenuation convention as RapSystem.
/// The auxiliary block integrates the disagreement, dw = gain * L x.
class ConsensusSystem {
 public:
  ConsensusSystem(const Graph& graph, std::vector<CostFunction> costs, Tbg tbg, double varrho,
                  bool baseline = false)
      : lap_(graph.laplacian()),
        costs_(std::move(costs)),
        tbg_(std::move(tbg)),
        varrho_(varrho),
        baseline_(baseline),
        n_(graph.size()),
        g_(n_) {
    if (static_cast<int>(costs_.size()) != n_)
      throw std::invalid_argument("consensus system: costs length must match agent count");
    if (varrho_ <= 0.0) throw std::invalid_argument("consensus system: varrho must be positive");
  }

  int agents() const { return n_; }
  const Eigen::MatrixXd& lap() const { return lap_; }
  const std::vector<CostFunction>& costs() const { return costs_; }
  const Tbg& tbg() const { return tbg_; }
  double varrho() const { return varrho_; }
  bool baseline() const { return baseline_; }

  /// Flat-state derivative, blocks [x; w].
  void operator()(double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) const {
    const double gain = tbg_.gain(t);
    if (gain <= 0.0) throw std::invalid_argument("consensus system: nonpositive gain");
    const double coeff = baseline_ ? gain : varrho_;
    const auto x = s.head(n_), w = s.tail(n_);
    for (int i = 0; i < n_; ++i) g_(i) = costs_[i].grad(x(i));
    ds.resize(2 * n_);
    ds.head(n_) = -coeff * g_ - gain * (lap_ * (x + w));
    ds.tail(n_).noalias() = gain * (lap_ * x);
  }

 private:
  Eigen::MatrixXd lap_;
  std::vector<CostFunction> costs_;
  Tbg tbg_;
  double varrho_;
  bool baseline_;
  int n_;
  mutable Eigen::VectorXd g_;
};

inline RapState rap_rhs(const RapState& s, double t, const RapSystem& sys) {
  Eigen::VectorXd ds;
  sys(t, pack(s), ds);
  return unpack_rap(ds);
}

inline ConsensusState consensus_rhs(const ConsensusState& s, double t, const ConsensusSystem& sys) {
  Eigen::VectorXd ds;
  sys(t, pack(s), ds);
  return unpack_consensus(ds);
}

/// Lyapunov weights, disturbance aggregates and the perturbation margin
/// produced by the coefficient-selection recipe (or validating an override).
struct CoefficientSet {
  double rho = 0.0, beta = 0.0, gamma = 0.0;
  double varrho = 0.0;
  double Lambda1 = 0.0, Lambda2 = 0.0, Lambda3 = 0.0;
  double Upsilon1 = 0.0, Upsilon2 = 0.0, Upsilon3 = 0.0;
  double delta = 0.0;        ///< effective perturbation: varrho * aggregate / min(rho, beta)
  double margin_limit = 0.0; ///< alpha / D; delta must stay below this
  bool margin_ok = false;
};

/// Weights for the resource-allocation Lyapunov functional. gamma = 2; beta
/// is the smallest value passing the spread inequality; rho the smallest
/// passing the two coupling inequalities (the stricter beta^2 forms). varrho
/// defaults to 90% of the margin-saturating value, or validates an override.
inline CoefficientSet select_coefficients_rap(const SpectralBounds& bounds, double m_bound, const Tbg& tbg,
                                              std::optional<double> varrho_override = std::nullopt,
                                              double m_tilde = 0.0) {
  const double l2 = bounds.lambda2, ln2 = bounds.lambdaN_L2;
  if (l2 <= 0.0) throw std::invalid_argument("select_coefficients_rap: needs a connected graph");
  CoefficientSet cs;
  cs.gamma = 2.0;
  cs.beta = (1.0 + 3.0 * ln2) / (2.0 * l2);
  const double g2 = cs.gamma * cs.gamma, b2 = cs.beta * cs.beta;
  cs.rho = std::max((1.0 + b2 + g2 * ln2 + g2) / 2.0, (0.5 + b2 - cs.gamma * l2) / l2);
  const double m2 = m_bound * m_bound;
  cs.Lambda1 = std::max({((cs.rho + cs.gamma) * (1.0 + m2) + cs.gamma * (ln2 + m2)) / 2.0,
                         ((cs.rho + cs.gamma) * ln2 + cs.gamma) / 2.0, (cs.rho + 2.0 * cs.gamma) / 2.0});
  cs.Lambda2 = std::max({(cs.gamma * ln2 + (m2 + 2.0) * (cs.rho + cs.gamma) + cs.gamma * (m2 + 1.0)) / 2.0,
                         ((cs.rho + cs.gamma) * ln2 + cs.gamma) / 2.0, (cs.rho + 2.0 * cs.gamma) / 2.0});
  cs.Lambda3 = (cs.rho + 2.0 * cs.gamma) * (m_tilde * m_tilde * m2 + m_tilde * m_tilde) / 2.0;
  const double weight_floor = std::min(cs.rho, cs.beta);
  cs.margin_limit = tbg.alpha / tbg.d_const;
  cs.varrho = varrho_override ? *varrho_override
                              : 0.9 * tbg.alpha * weight_floor / (tbg.d_const * cs.Lambda1);
  cs.delta = cs.varrho * cs.Lambda1 / weight_floor;
  cs.margin_ok = cs.delta <= cs.margin_limit * (1.0 + 1e-12);
  return cs;
}

/// Weights for the consensus Lyapunov functional: rho = beta = 1/(2*lambda2).
inline CoefficientSet select_coefficients_consensus(const SpectralBounds& bounds, double m_bound,
                                                    const Tbg& tbg,
                                                    std::optional<double> varrho_override = std::nullopt,
                                                    double m_tilde = 0.0) {
  const double l2 = bounds.lambda2;
  if (l2 <= 0.0) throw std::invalid_argument("select_coefficients_consensus: needs a connected graph");
  CoefficientSet cs;
  cs.rho = cs.beta = 1.0 / (2.0 * l2);
  cs.gamma = 0.0;  // unused by the consensus functional
  const double m2 = m_bound * m_bound;
  cs.Upsilon1 = std::max((cs.rho * (1.0 + m2) + cs.beta * (m2 + l2)) / 2.0, cs.beta * l2 / 2.0);
  cs.Upsilon2 = std::max((cs.rho * (m2 + 2.0) + cs.beta * (m2 + 1.0 + l2)) / 2.0, cs.beta * l2);
  cs.Upsilon3 = (cs.rho + cs.beta) * (m_tilde * m_tilde * m2 + m_tilde * m_tilde) / 2.0;
  const double weight_floor = std::min(cs.rho, cs.beta);
  cs.margin_limit = tbg.alpha / tbg.d_const;
  cs.varrho = varrho_override ? *varrho_override
                              : 0.9 * tbg.alpha * weight_floor / (tbg.d_const * cs.Upsilon1);
  cs.delta = cs.varrho * cs.Upsilon1 / weight_floor;
  cs.margin_ok = cs.delta <= cs.margin_limit * (1.0 + 1e-12);
  return cs;
}

/// Orthogonal change of basis separating the agreement direction (first row)
/// from the disagreement subspace (remaining rows).
struct OrthogonalFrame {
  Eigen::VectorXd R1;  ///< (1/sqrt(N)) * ones
  Eigen::MatrixXd R2;  ///< N x (N-1), orthonormal columns orthogonal to R1

  /// Full rotation [R1 R2]^T applied to a vector: first component is the
  /// scaled mean, the rest the disagreement coordinates.
  Eigen::VectorXd rotate(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(v.size());
    out(0) = R1.dot(v);
    if (v.size() > 1) out.tail(v.size() - 1) = R2.transpose() * v;
    return out;
  }

  /// Disagreement coordinates only (R2^T v).
  Eigen::VectorXd disagreement(const Eigen::VectorXd& v) const { return R2.transpose() * v; }
};

/// Deterministic Gram-Schmidt completion of the normalized ones vector.
inline OrthogonalFrame orthogonal_frame(int n) {
  if (n < 1) throw std::invalid_argument("orthogonal_frame: need n >= 1");
  OrthogonalFrame frame;
  frame.R1 = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  frame.R2.resize(n, n - 1);
  Eigen::MatrixXd basis(n, 1);
  basis.col(0) = frame.R1;
  int filled = 0;
  for (int k = 0; k < n && filled < n - 1; ++k) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
    v(k) = 1.0;
    v -= basis * (basis.transpose() * v);
    v -= basis * (basis.transpose() * v);  // second pass for numerical orthogonality
    const double norm = v.norm();
    if (norm > 1e-8) {
      v /= norm;
      basis.conservativeResize(n, basis.cols() + 1);
      basis.col(basis.cols() - 1) = v;
      frame.R2.col(filled++) = v;
    }
  }
  if (filled != n - 1) throw std::runtime_error("orthogonal_frame: completion failed");
  return frame;
}

/// Weighted quadratic form in rotated error coordinates for the
/// resource-allocation dynamics.
inline double lyapunov_rap(const RapState& s, const RapState& eq, const CoefficientSet& cs,
                           const OrthogonalFrame& frame) {
  if (s.x.size() != eq.x.size()) throw std::invalid_argument("lyapunov_rap: shape mismatch");
  const Eigen::VectorXd xi = frame.rotate(s.x - eq.x);
  const Eigen::VectorXd eta = frame.rotate(s.y - eq.y);
  const Eigen::VectorXd dz2 = frame.disagreement(s.z - eq.z);
  const Eigen::VectorXd du2 = frame.disagreement(s.u - eq.u);
  return 0.5 * cs.rho * (xi.squaredNorm() + eta.squaredNorm()) +
         0.5 * cs.beta * (dz2 + du2).squaredNorm() + 0.5 * cs.gamma * (xi - eta).squaredNorm();
}

/// Provable two-sided quadratic envelope of lyapunov_rap in the coordinates
/// (xi, eta, dz2 + du2); the z/u blocks enter only through their sum, so the
/// envelope is phrased in that sum as well.
inline std::pair<double, double> lyapunov_rap_sandwich(const RapState& s, const RapState& eq,
                                                       const CoefficientSet& cs,
                                                       const OrthogonalFrame& frame) {
  const Eigen::VectorXd xi = frame.rotate(s.x - eq.x);
  const Eigen::VectorXd eta = frame.rotate(s.y - eq.y);
  const Eigen::VectorXd sum2 =
      frame.disagreement(s.z - eq.z) + frame.disagreement(s.u - eq.u);
  const double quad = xi.squaredNorm() + eta.squaredNorm() + sum2.squaredNorm();
  return {0.5 * std::min(cs.rho, cs.beta) * quad,
          0.5 * (cs.rho + cs.beta + 3.0 * cs.gamma) * quad};
}

/// Weighted quadratic form in rotated error coordinates for the consensus
/// dynamics.
inline double lyapunov_consensus(const ConsensusState& s, const ConsensusState& eq,
                                 const CoefficientSet& cs, const OrthogonalFrame& frame) {
  if (s.x.size() != eq.x.size()) throw std::invalid_argument("lyapunov_consensus: shape mismatch");
  const Eigen::VectorXd xi = frame.rotate(s.x - eq.x);
  const Eigen::VectorXd xi2 = frame.disagreement(s.x - eq.x);
  const Eigen::VectorXd eta2 = frame.disagreement(s.w - eq.w);
  return 0.5 * cs.rho * xi.squaredNorm() + 0.5 * (cs.rho + cs.beta) * eta2.squaredNorm() +
         0.5 * cs.beta * (xi2 + eta2).squaredNorm();
}

/// Two-sided quadratic envelope of lyapunov_consensus in (xi, eta2).
inline std::pair<double, double> lyapunov_consensus_sandwich(const ConsensusState& s,
                                                             const ConsensusState& eq,
                                                             const CoefficientSet& cs,
                                                             const OrthogonalFrame& frame) {
  const Eigen::VectorXd xi = frame.rotate(s.x - eq.x);
  const Eigen::VectorXd eta2 = frame.disagreement(s.w - eq.w);
  const double quad = xi.squaredNorm() + eta2.squaredNorm();
  return {0.5 * std::min(cs.rho, cs.beta) * quad, 0.5 * (cs.rho + 3.0 * cs.beta) * quad};
}

struct RapResidual {
  double grad_spread = 0.0;  ///< max pairwise gradient disagreement
  double demand_gap = 0.0;   ///< |sum x - q0|
};

inline RapResidual kkt_residual_rap(const Eigen::VectorXd& x, const std::vector<CostFunction>& costs,
                                    double q0) {
  RapResidual r;
  const int n = static_cast<int>(costs.size());
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = costs[i].grad(x(i));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) r.grad_spread = std::max(r.grad_spread, std::abs(g[i] - g[j]));
  r.demand_gap = std::abs(x.sum() - q0);
  return r;
}

struct ConsensusResidual {
  double consensus_residual = 0.0;     ///< || L x ||
  double stationarity_residual = 0.0;  ///< || (varrho/gain) grad f + L x + L w ||
};

inline ConsensusResidual kkt_residual_consensus(const Eigen::VectorXd& x, const Eigen::VectorXd& w,
                                                const std::vector<CostFunction>& costs, const Graph& graph,
                                                double varrho, double gain) {
  const Eigen::MatrixXd lap = graph.laplacian();
  const int n = graph.size();
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) g(i) = costs[i].grad(x(i));
  ConsensusResidual r;
  r.consensus_residual = (lap * x).norm();
  r.stationarity_residual = ((varrho / gain) * g + lap * x + lap * w).norm();
  return r;
}

/// Recover the full equilibrium of the resource-allocation dynamics from the
/// optimizer x*: the auxiliary blocks are determined only up to the
/// agreement direction, so their free means are pinned to the conserved
/// means of the initial condition.
inline RapState rap_equilibrium(const Eigen::VectorXd& x_star, const std::vector<CostFunction>& costs,
                                const Eigen::VectorXd& q, const Graph& graph, double varrho, double gain,
                                double z_mean, double u_mean) {
  const int n = graph.size();
  const Eigen::MatrixXd lap = graph.laplacian();
  const double ratio = varrho / gain;
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) g(i) = costs[i].grad(x_star(i));
  RapState eq;
  eq.x = x_star;
  eq.y = x_star + ratio * g;
  // dy = 0  =>  ratio * L z* = L y* - q + x*
  const Eigen::VectorXd rhs_z = (lap * eq.y - q + x_star) / ratio;
  Eigen::VectorXd z = lap.completeOrthogonalDecomposition().solve(rhs_z);
  z.array() += z_mean - z.mean();
  eq.z = z;
  // dz = 0  =>  L u* = L y* - L z*
  Eigen::VectorXd u = eq.y - eq.z;
  u.array() += u_mean - u.mean();
  eq.u = u;
  return eq;
}

/// Consensus equilibrium: x* on the agreement line; L w* balances the
/// attenuated gradient, with the free mean pinned to the conserved one.
inline ConsensusState consensus_equilibrium(const Eigen::VectorXd& x_star,
                                            const std::vector<CostFunction>& costs, const Graph& graph,
                                            double varrho, double gain, double w_mean) {
  const int n = graph.size();
  const Eigen::MatrixXd lap = graph.laplacian();
  Eigen::VectorXd g(n);
  for (int i = 0; i < n; ++i) g(i) = costs[i].grad(x_star(i));
  const Eigen::VectorXd rhs_w = -(varrho / gain) * g - lap * x_star;
  Eigen::VectorXd w = lap.completeOrthogonalDecomposition().solve(rhs_w);
  w.array() += w_mean - w.mean();
  ConsensusState eq;
  eq.x = x_star;
  eq.w = w;
  return eq;
}

}  // namespace tbgsim

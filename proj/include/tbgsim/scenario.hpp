#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "tbgsim/analysis.hpp"
#include "tbgsim/costs.hpp"
#include "tbgsim/dynamics.hpp"
#include "tbgsim/graph.hpp"
#include "tbgsim/integrator.hpp"
#include "tbgsim/tbg.hpp"

namespace tbgsim {

/// A numeric setting or the literal "auto" (resolved by the respective
/// selection policy at run time).
using AutoOrValue = std::variant<double, std::string>;

inline bool is_auto(const AutoOrValue& v) { return std::holds_alternative<std::string>(v); }

struct GraphSpec {
  int nodes = 0;
  std::vector<Graph::Edge> edges;

  bool operator==(const GraphSpec&) const = default;
};

struct CostSpec {
  std::string kind;
  std::vector<double> params;

  bool operator==(const CostSpec&) const = default;
};

struct TbgSpec {
  std::string kind = "constant";  ///< constant | theta | gamma
  double alpha = 1.0;             ///< contraction exponent (ramp speed for gamma)
  double t_p = 1.0;
  double post_gain = 1.0;
  double d_const = 1.0;
  double varsigma = 0.1;  ///< gamma ramp offset; unused otherwise

  bool operator==(const TbgSpec&) const = default;
};

struct IntegratorSpec {
  double dt = 0.0;  ///< 0 = derive from the stability guard
  double t_end = 0.0;
  int sample_every = 1;

  bool operator==(const IntegratorSpec&) const = default;
};

/// Full description of one simulation case, loadable from JSON.
struct Scenario {
  std::string name;
  std::string problem;  ///< "rap" | "consensus"
  GraphSpec graph;
  std::vector<CostSpec> costs;
  double q0 = 0.0;  ///< total demand (allocation problems only)
  TbgSpec tbg;
  AutoOrValue varrho = 1.0;
  AutoOrValue epsilon = std::string("auto");
  std::vector<double> x0;
  std::optional<std::vector<double>> y0, z0, u0, w0;
  IntegratorSpec integrator;
  bool compare_baseline = false;
  std::optional<std::vector<double>> reference;  ///< stated optimizer, if any

  bool operator==(const Scenario&) const = default;
};

// ---------------------------------------------------------------------------
// JSON (de)serialization
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json auto_to_json(const AutoOrValue& v) {
  if (is_auto(v)) return std::get<std::string>(v);
  return std::get<double>(v);
}

inline AutoOrValue auto_from_json(const nlohmann::json& j, const char* field) {
  if (j.is_string()) {
    if (j.get<std::string>() != "auto")
      throw std::invalid_argument(std::string("scenario: ") + field + " must be a number or \"auto\"");
    return std::string("auto");
  }
  if (!j.is_number()) throw std::invalid_argument(std::string("scenario: ") + field + " must be a number or \"auto\"");
  return j.get<double>();
}

}  // namespace detail

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["name"] = sc.name;
  j["problem"] = sc.problem;
  j["graph"]["nodes"] = sc.graph.nodes;
  auto& edges = j["graph"]["edges"] = nlohmann::json::array();
  for (const auto& [a, b, w] : sc.graph.edges) edges.push_back(nlohmann::json::array({a, b, w}));
  auto& costs = j["costs"] = nlohmann::json::array();
  for (const auto& c : sc.costs) costs.push_back({{"kind", c.kind}, {"params", c.params}});
  if (sc.problem == "rap") j["q0"] = sc.q0;
  j["tbg"] = {{"kind", sc.tbg.kind},   {"alpha", sc.tbg.alpha},       {"t_p", sc.tbg.t_p},
              {"post_gain", sc.tbg.post_gain}, {"d_const", sc.tbg.d_const}};
  if (sc.tbg.kind == "gamma") j["tbg"]["varsigma"] = sc.tbg.varsigma;
  j["varrho"] = detail::auto_to_json(sc.varrho);
  j["epsilon"] = detail::auto_to_json(sc.epsilon);
  j["x0"] = sc.x0;
  if (sc.y0) j["y0"] = *sc.y0;
  if (sc.z0) j["z0"] = *sc.z0;
  if (sc.u0) j["u0"] = *sc.u0;
  if (sc.w0) j["w0"] = *sc.w0;
  j["integrator"] = {{"dt", sc.integrator.dt},
                     {"t_end", sc.integrator.t_end},
                     {"sample_every", sc.integrator.sample_every}};
  j["compare_baseline"] = sc.compare_baseline;
  if (sc.reference) j["reference"] = *sc.reference;
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario sc;
  sc.name = j.at("name").get<std::string>();
  sc.problem = j.at("problem").get<std::string>();
  if (sc.problem != "rap" && sc.problem != "consensus")
    throw std::invalid_argument("scenario: problem must be \"rap\" or \"consensus\"");
  sc.graph.nodes = j.at("graph").at("nodes").get<int>();
  for (const auto& e : j.at("graph").at("edges")) {
    if (!e.is_array() || e.size() != 3) throw std::invalid_argument("scenario: edge must be [i, j, weight]");
    sc.graph.edges.emplace_back(e[0].get<int>(), e[1].get<int>(), e[2].get<double>());
  }
  for (const auto& c : j.at("costs")) {
    CostSpec spec;
    spec.kind = c.at("kind").get<std::string>();
    if (c.contains("params")) spec.params = c.at("params").get<std::vector<double>>();
    sc.costs.push_back(std::move(spec));
  }
  if (sc.problem == "rap") sc.q0 = j.at("q0").get<double>();
  const auto& tj = j.at("tbg");
  sc.tbg.kind = tj.at("kind").get<std::string>();
  sc.tbg.alpha = tj.at("alpha").get<double>();
  sc.tbg.t_p = tj.at("t_p").get<double>();
  sc.tbg.post_gain = tj.value("post_gain", sc.tbg.alpha);
  sc.tbg.d_const = tj.value("d_const", 1.0);
  sc.tbg.varsigma = tj.value("varsigma", 0.1);
  sc.varrho = detail::auto_from_json(j.at("varrho"), "varrho");
  sc.epsilon = j.contains("epsilon") ? detail::auto_from_json(j.at("epsilon"), "epsilon")
                                     : AutoOrValue{std::string("auto")};
  sc.x0 = j.at("x0").get<std::vector<double>>();
  if (j.contains("y0")) sc.y0 = j.at("y0").get<std::vector<double>>();
  if (j.contains("z0")) sc.z0 = j.at("z0").get<std::vector<double>>();
  if (j.contains("u0")) sc.u0 = j.at("u0").get<std::vector<double>>();
  if (j.contains("w0")) sc.w0 = j.at("w0").get<std::vector<double>>();
  const auto& ij = j.at("integrator");
  sc.integrator.dt = ij.at("dt").get<double>();
  sc.integrator.t_end = ij.at("t_end").get<double>();
  sc.integrator.sample_every = ij.value("sample_every", 1);
  sc.compare_baseline = j.value("compare_baseline", false);
  if (j.contains("reference")) sc.reference = j.at("reference").get<std::vector<double>>();

  const int n = sc.graph.nodes;
  if (static_cast<int>(sc.costs.size()) != n)
    throw std::invalid_argument("scenario: need one cost per node");
  if (static_cast<int>(sc.x0.size()) != n)
    throw std::invalid_argument("scenario: x0 length must match node count");
  auto check_len = [&](const std::optional<std::vector<double>>& v, const char* what) {
    if (v && static_cast<int>(v->size()) != n)
      throw std::invalid_argument(std::string("scenario: ") + what + " length must match node count");
  };
  check_len(sc.y0, "y0");
  check_len(sc.z0, "z0");
  check_len(sc.u0, "u0");
  check_len(sc.w0, "w0");
  if (sc.tbg.t_p <= 0.0 || sc.integrator.t_end < sc.tbg.t_p)
    throw std::invalid_argument("scenario: need 0 < t_p <= t_end");
  if (sc.tbg.kind != "constant" && sc.tbg.kind != "theta" && sc.tbg.kind != "gamma")
    throw std::invalid_argument("scenario: unknown tbg kind " + sc.tbg.kind);
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  nlohmann::json j;
  in >> j;
  return scenario_from_json(j);
}

inline void save_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scenario file: " + path);
  out << scenario_to_json(sc).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Construction of runtime objects from a scenario
// ---------------------------------------------------------------------------

inline Tbg tbg_from_spec(const TbgSpec& spec) {
  if (spec.kind == "constant") return make_constant_tbg(spec.alpha, spec.t_p, spec.post_gain, spec.d_const);
  if (spec.kind == "theta") return make_theta_tbg(spec.alpha, spec.t_p, spec.post_gain, spec.d_const);
  if (spec.kind == "gamma") return make_gamma_tbg(spec.alpha, spec.t_p, spec.varsigma);
  throw std::invalid_argument("unknown tbg kind: " + spec.kind);
}

inline std::vector<CostFunction> costs_from_specs(const std::vector<CostSpec>& specs) {
  std::vector<CostFunction> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(cost_from_spec(s.kind, s.params));
  return out;
}

// ---------------------------------------------------------------------------
// Running
// ---------------------------------------------------------------------------

struct RunOptions {
  std::string out_dir;  ///< empty = no files written
  bool write_csv = true;
  std::optional<double> dt_override;
  std::optional<bool> baseline_override;  ///< force/suppress the comparison leg
  int kkt_post_samples = 50;              ///< post-switch samples scored with the distance oracle
};

/// One integrated leg (primary or gain-matched comparison) with its
/// streamed diagnostics.
struct LegResult {
  Trajectory traj;
  bool diverged = false;
  double diverged_at = std::numeric_limits<double>::quiet_NaN();
  double runtime_seconds = 0.0;
  double osc_metric = std::numeric_limits<double>::quiet_NaN();
  double max_mean_drift = 0.0;  ///< worst drift of the conserved block means
  double first_t_within_eps = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd x_end;
  std::optional<ConvergenceReport> report;
};

struct ScenarioResult {
  Scenario scenario;
  double varrho_resolved = 0.0;
  double epsilon_resolved = 0.0;
  CoefficientSet coeffs;
  ReferenceOptimum optimum;
  double guard_dt = 0.0;
  bool guard_ok = true;
  double m_bound = 1.0;        ///< declared Lipschitz slope used for guard/selector
  double m_tilde_bound = 0.0;  ///< declared generalized excess
  LegResult primary;
  std::optional<LegResult> baseline;
  std::string csv_path, plot_path, report_path;
};

namespace detail {

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Integrates one leg of a scenario with streamed oscillation, conserved-mean
/// and threshold-crossing diagnostics.
template <typename System>
LegResult run_leg(const System& sys, const Eigen::VectorXd& s0, const Tbg& tbg,
                  const IntegratorConfig& cfg, const std::vector<std::pair<int, int>>& mean_blocks,
                  const Eigen::VectorXd* x_ref, double epsilon, int n) {
  LegResult leg;
  OscillationAccumulator osc(tbg.t_p, n);
  std::vector<double> mean0(mean_blocks.size(), 0.0);
  bool have_mean0 = false;
  const auto t0 = std::chrono::steady_clock::now();
  auto observer = [&](double t, const Eigen::VectorXd& s) {
    osc.feed(t, s);
    if (!have_mean0) {
      for (std::size_t b = 0; b < mean_blocks.size(); ++b)
        mean0[b] = s.segment(mean_blocks[b].first, mean_blocks[b].second).mean();
      have_mean0 = true;
    } else {
      for (std::size_t b = 0; b < mean_blocks.size(); ++b) {
        const double drift =
            std::abs(s.segment(mean_blocks[b].first, mean_blocks[b].second).mean() - mean0[b]);
        leg.max_mean_drift = std::max(leg.max_mean_drift, drift);
      }
    }
    if (x_ref && std::isnan(leg.first_t_within_eps) &&
        (s.head(n) - *x_ref).lpNorm<Eigen::Infinity>() <= epsilon)
      leg.first_t_within_eps = t;
  };
  try {
    leg.traj = integrate([&sys](double t, const Eigen::VectorXd& s, Eigen::VectorXd& ds) { sys(t, s, ds); },
                         s0, tbg, cfg, observer);
  } catch (const DivergenceError& e) {
    leg.diverged = true;
    leg.diverged_at = e.t;
  }
  leg.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!leg.traj.states.empty()) {
    leg.x_end = leg.traj.states.back().head(n);
    if (!leg.diverged) leg.osc_metric = osc.metric();
  }
  return leg;
}

inline void write_csv_files(const ScenarioResult& res, const Scenario& sc, const Tbg& tbg,
                            const std::vector<CostFunction>& costs, const Graph& graph,
                            const std::function<double(double, const Eigen::VectorXd&)>& lyap,
                            const std::function<double(double)>& envelope, std::ofstream& csv,
                            std::ofstream& plot) {
  const int n = sc.graph.nodes;
  const bool rap = sc.problem == "rap";
  // Header.
  std::ostringstream head;
  head << "t";
  const char* blocks_rap[] = {"x", "y", "z", "u"};
  const char* blocks_con[] = {"x", "w"};
  const int nblocks = rap ? 4 : 2;
  for (int b = 0; b < nblocks; ++b)
    for (int i = 0; i < n; ++i) head << "," << (rap ? blocks_rap[b] : blocks_con[b]) << "_" << i;
  if (rap) head << ",V,envelope,grad_spread,demand_gap";
  else head << ",V,envelope,consensus_residual,stationarity_residual";
  csv << head.str() << "\n";
  std::ostringstream phead;
  for (int i = 0; i < n; ++i) phead << (i ? "," : "") << "t_" << i << ",x_" << i;
  plot << phead.str() << "\n";

  const Eigen::MatrixXd lap = graph.laplacian();
  for (std::size_t k = 0; k < res.primary.traj.times.size(); ++k) {
    const double t = res.primary.traj.times[k];
    const Eigen::VectorXd& s = res.primary.traj.states[k];
    std::ostringstream line;
    line << fmt17(t);
    for (int c = 0; c < s.size(); ++c) line << "," << fmt17(s(c));
    const double v = lyap(t, s);
    line << "," << fmt17(v) << "," << fmt17(envelope(t));
    if (rap) {
      const RapResidual r = kkt_residual_rap(s.head(n), costs, sc.q0);
      line << "," << fmt17(r.grad_spread) << "," << fmt17(r.demand_gap);
    } else {
      const ConsensusResidual r = kkt_residual_consensus(
          s.head(n), s.tail(n), costs, graph, res.varrho_resolved, tbg.gain(t));
      line << "," << fmt17(r.consensus_residual) << "," << fmt17(r.stationarity_residual);
    }
    csv << line.str() << "\n";
    std::ostringstream pline;
    for (int i = 0; i < n; ++i) pline << (i ? "," : "") << fmt17(t) << "," << fmt17(s(i));
    plot << pline.str() << "\n";
  }
}

inline void write_report_txt(std::ofstream& out, const ScenarioResult& res) {
  const auto& sc = res.scenario;
  auto leg_line = [&](const char* label, const LegResult& leg) {
    out << label << ":";
    if (leg.diverged) {
      out << " diverged at t=" << leg.diverged_at << "\n";
      return;
    }
    if (leg.report) {
      out << " verdict=" << to_string(leg.report->verdict)
          << " dist_at_tp=" << leg.report->dist_at_tp << " post_tp_max=" << leg.report->post_tp_max
          << " tail_dist=" << leg.report->tail_dist;
    }
    out << " osc=" << leg.osc_metric << " mean_drift=" << leg.max_mean_drift
        << " first_t_within_eps=" << leg.first_t_within_eps << " runtime_s=" << leg.runtime_seconds
        << "\n";
  };
  out << "scenario: " << sc.name << "\nproblem: " << sc.problem << "\nagents: " << sc.graph.nodes
      << "\nvarrho: " << res.varrho_resolved << (is_auto(sc.varrho) ? " (auto)" : " (given)")
      << "\nepsilon: " << res.epsilon_resolved << (is_auto(sc.epsilon) ? " (auto)" : " (given)")
      << "\ndelta: " << res.coeffs.delta << " margin_limit: " << res.coeffs.margin_limit
      << " margin_ok: " << (res.coeffs.margin_ok ? "yes" : "no") << "\nweights: rho="
      << res.coeffs.rho << " beta=" << res.coeffs.beta << " gamma=" << res.coeffs.gamma
      << "\noptimum: method=" << to_string(res.optimum.method) << " objective="
      << res.optimum.objective_value << " unique=" << (res.optimum.unique ? "yes" : "no") << "\nx_star:";
  for (int i = 0; i < res.optimum.x_star.size(); ++i) out << " " << res.optimum.x_star(i);
  out << "\nguard_dt: " << res.guard_dt << " dt: " << sc.integrator.dt
      << " guard_ok: " << (res.guard_ok ? "yes" : "no");
  if (!res.guard_ok)
    out << "  (advisory: step exceeds the conservative stability guard)";
  out << "\n";
  leg_line("primary", res.primary);
  if (res.baseline) leg_line("baseline", *res.baseline);
}

}  // namespace detail

/// Resolves the scenario's settings, integrates the primary (and optionally
/// the gain-matched comparison) dynamics, scores convergence with the
/// nearest-stationary-point oracle, and writes CSV/report artifacts when an
/// output directory is given.
inline ScenarioResult run_scenario(const Scenario& sc, const RunOptions& opts = {}) {
  ScenarioResult res;
  res.scenario = sc;
  const int n = sc.graph.nodes;
  const Graph graph(n, sc.graph.edges);
  const std::vector<CostFunction> costs = costs_from_specs(sc.costs);
  const Tbg tbg = tbg_from_spec(sc.tbg);
  const SpectralBounds bounds = spectral_bounds(graph);

  res.m_bound = 0.0;
  res.m_tilde_bound = 0.0;
  for (const auto& c : costs) {
    res.m_bound = std::max(res.m_bound, c.generalized ? c.generalized->M : c.smooth.M);
    res.m_tilde_bound =
        std::max(res.m_tilde_bound, c.generalized ? c.generalized->M_tilde : c.smooth.M_tilde);
  }

  const bool rap = sc.problem == "rap";
  const std::optional<double> varrho_override =
      is_auto(sc.varrho) ? std::nullopt : std::optional<double>(std::get<double>(sc.varrho));
  res.coeffs = rap ? select_coefficients_rap(bounds, res.m_bound, tbg, varrho_override, res.m_tilde_bound)
                   : select_coefficients_consensus(bounds, res.m_bound, tbg, varrho_override,
                                                   res.m_tilde_bound);
  res.varrho_resolved = res.coeffs.varrho;

  // Reference optimizer and full equilibrium.
  std::optional<Eigen::VectorXd> stated;
  if (sc.reference)
    stated = Eigen::Map<const Eigen::VectorXd>(sc.reference->data(),
                                               static_cast<int>(sc.reference->size()));
  const double x0_lo = *std::min_element(sc.x0.begin(), sc.x0.end()) - 1.0;
  const double x0_hi = *std::max_element(sc.x0.begin(), sc.x0.end()) + 1.0;
  res.optimum = rap ? reference_optimum_rap(costs, sc.q0, stated)
                    : reference_optimum_consensus(costs, x0_lo, x0_hi, stated);

  Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(sc.x0.data(), n);
  auto block_or_zero = [&](const std::optional<std::vector<double>>& v) {
    return v ? Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v->data(), n))
             : Eigen::VectorXd(Eigen::VectorXd::Zero(n));
  };
  Eigen::VectorXd q = Eigen::VectorXd::Constant(n, sc.q0 / n);

  RapState rap_eq;
  ConsensusState con_eq;
  Eigen::VectorXd s0;
  std::vector<std::pair<int, int>> mean_blocks;
  if (rap) {
    RapState init{x0, block_or_zero(sc.y0), block_or_zero(sc.z0), block_or_zero(sc.u0)};
    s0 = pack(init);
    rap_eq = rap_equilibrium(res.optimum.x_star, costs, q, graph, res.varrho_resolved, tbg.alpha,
                             init.z.mean(), init.u.mean());
    mean_blocks = {{2 * n, n}, {3 * n, n}};  // z and u means are conserved
  } else {
    ConsensusState init{x0, block_or_zero(sc.w0)};
    s0 = pack(init);
    con_eq = consensus_equilibrium(res.optimum.x_star, costs, graph, res.varrho_resolved, tbg.alpha,
                                   init.w.mean());
    mean_blocks = {{n, n}};  // w mean is conserved
  }

  // Epsilon resolution needs the initial Lyapunov value.
  const OrthogonalFrame frame = orthogonal_frame(n);
  const double v0 = rap ? lyapunov_rap(unpack_rap(s0), rap_eq, res.coeffs, frame)
                        : lyapunov_consensus(unpack_consensus(s0), con_eq, res.coeffs, frame);
  res.epsilon_resolved = is_auto(sc.epsilon) ? resolve_epsilon(tbg, res.coeffs, v0).resolved
                                             : std::get<double>(sc.epsilon);

  IntegratorConfig cfg;
  cfg.dt = opts.dt_override.value_or(sc.integrator.dt);
  res.guard_dt = stability_guard_dt(std::max(tbg.alpha, tbg.gain(sc.integrator.t_end)), res.m_bound);
  if (cfg.dt <= 0.0) cfg.dt = res.guard_dt;
  res.guard_ok = cfg.dt <= res.guard_dt * (1.0 + 1e-12);
  cfg.t_end = sc.integrator.t_end;
  cfg.sample_every = sc.integrator.sample_every;

  // Integrate the primary leg and, when requested, the gain-matched leg in
  // which the attenuated coefficients are driven by the live gain itself.
  const bool with_baseline = opts.baseline_override.value_or(sc.compare_baseline);
  if (rap) {
    const RapSystem sys(graph, costs, q, tbg, res.varrho_resolved, false);
    res.primary = detail::run_leg(sys, s0, tbg, cfg, mean_blocks, &res.optimum.x_star,
                                  res.epsilon_resolved, n);
    if (with_baseline) {
      const RapSystem base(graph, costs, q, tbg, res.varrho_resolved, true);
      res.baseline = detail::run_leg(base, s0, tbg, cfg, mean_blocks, &res.optimum.x_star,
                                     res.epsilon_resolved, n);
    }
  } else {
    const ConsensusSystem sys(graph, costs, tbg, res.varrho_resolved, false);
    res.primary = detail::run_leg(sys, s0, tbg, cfg, mean_blocks, &res.optimum.x_star,
                                  res.epsilon_resolved, n);
    if (with_baseline) {
      const ConsensusSystem base(graph, costs, tbg, res.varrho_resolved, true);
      res.baseline = detail::run_leg(base, s0, tbg, cfg, mean_blocks, &res.optimum.x_star,
                                     res.epsilon_resolved, n);
    }
  }

  // Convergence scoring with the nearest-stationary-point distance.
  std::function<double(const Eigen::VectorXd&)> distance;
  if (rap) {
    distance = [&costs, &sc, &res](const Eigen::VectorXd& s) {
      return nearest_kkt_distance_rap(s.head(sc.graph.nodes), costs, sc.q0, &res.optimum);
    };
  } else {
    distance = [&costs, &res, x0_lo, x0_hi, n](const Eigen::VectorXd& s) {
      return nearest_kkt_distance_consensus(s.head(n), costs, x0_lo, x0_hi, &res.optimum);
    };
  }
  auto score_leg = [&](LegResult& leg) {
    if (leg.diverged || leg.traj.times.empty() || leg.traj.times.back() < sc.tbg.t_p) return;
    ConvergenceReport rep = convergence_report(leg.traj, distance, sc.tbg.t_p, res.epsilon_resolved,
                                               std::numeric_limits<double>::quiet_NaN(),
                                               opts.kkt_post_samples);
    rep.first_t_within_eps = leg.first_t_within_eps;
    leg.report = rep;
  };
  score_leg(res.primary);
  if (res.baseline) score_leg(*res.baseline);

  // Artifacts.
  if (!opts.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(opts.out_dir);
    const std::string stem = (fs::path(opts.out_dir) / sc.name).string();
    if (opts.write_csv && !res.primary.traj.times.empty()) {
      res.csv_path = stem + ".csv";
      res.plot_path = stem + "_plot.csv";
      std::ofstream csv(res.csv_path), plot(res.plot_path);
      auto lyap = [&](double /*t*/, const Eigen::VectorXd& s) {
        return rap ? lyapunov_rap(unpack_rap(s), rap_eq, res.coeffs, frame)
                   : lyapunov_consensus(unpack_consensus(s), con_eq, res.coeffs, frame);
      };
      auto envelope = [&](double t) {
        return res.coeffs.margin_ok ? perturbed_bound(tbg, t, 0.0, res.coeffs.delta) * v0
                                    : std::numeric_limits<double>::quiet_NaN();
      };
      detail::write_csv_files(res, sc, tbg, costs, graph, lyap, envelope, csv, plot);
    }
    res.report_path = stem + "_report.txt";
    std::ofstream rep(res.report_path);
    detail::write_report_txt(rep, res);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Bundled catalog
// ---------------------------------------------------------------------------

/// The eight bundled scenarios. Names follow the section numbering of the
/// experiment catalog; integrator steps divide t_p exactly and respect the
/// conservative stability guard except where noted in the run report.
inline std::vector<Scenario> builtin_scenarios() {
  auto path3 = [] {
    return GraphSpec{3, {{0, 1, 1.0}, {1, 2, 1.0}}};
  };
  auto cycle4 = [] {
    return GraphSpec{4, {{0, 1, 1.0}, {1, 2, 1.0}, {2, 3, 1.0}, {3, 0, 1.0}}};
  };
  auto constant = [](double alpha, double t_p) {
    return TbgSpec{"constant", alpha, t_p, alpha, 1.0, 0.1};
  };
  std::vector<Scenario> out;

  {
    Scenario sc;
    sc.name = "example_5_1";
    sc.problem = "rap";
    sc.graph = cycle4();
    sc.costs = {{"quadratic", {4.0, 3.0}}, {"quadratic", {2.0, 4.0}},
                {"quadratic", {1.0, 5.0}}, {"quadratic", {3.0, 2.0}}};
    sc.q0 = 145.0;
    sc.tbg = constant(80.0, 7.0);
    sc.varrho = 8.0;
    sc.epsilon = 0.05;
    sc.x0 = {40.0, 35.0, 45.0, 40.0};
    sc.integrator = {7.0 / 30000.0, 8.0, 10};
    out.push_back(std::move(sc));
  }
  {
    Scenario sc;
    sc.name = "example_5_2";
    sc.problem = "rap";
    sc.graph = path3();
    sc.costs = {{"piecewise_cubic", {}}, {"piecewise_cubic", {}}, {"piecewise_cubic", {}}};
    sc.q0 = -3.0;
    sc.tbg = constant(800.0, 15.0);
    sc.varrho = 240.0;
    sc.epsilon = 0.05;
    sc.x0 = {50.0, -7.0, -50.0};
    sc.integrator = {15.0 / 480000.0, 16.0, 200};
    out.push_back(std::move(sc));
  }
  {
    Scenario sc;
    sc.name = "example_5_3";
    sc.problem = "rap";
    sc.graph = path3();
    sc.costs = {{"clipped_oscillatory", {}}, {"clipped_oscillatory", {}}, {"clipped_oscillatory", {}}};
    sc.q0 = 3.0;
    sc.tbg = constant(8000.0, 7.0);
    sc.varrho = 80.0;
    sc.epsilon = 0.05;
    sc.x0 = {5.0, -5.0, -1.0};
    sc.integrator = {7.0 / 11200000.0, 7.5, 4000};
    out.push_back(std::move(sc));
  }
  {
    Scenario sc;
    sc.name = "example_5_4";
    sc.problem = "rap";
    sc.graph = path3();
    sc.costs = {{"xsq_sin_inv", {}}, {"xsq_sin_inv", {}}, {"xsq_sin_inv", {}}};
    sc.q0 = 3.0;
    sc.tbg = constant(100.0, 1.8);
    sc.varrho = 1.0;
    sc.epsilon = 0.05;
    sc.x0 = {5.0, -5.0, -1.0};
    sc.integrator = {1.8 / 144000.0, 2.2, 50};
    sc.compare_baseline = true;
    out.push_back(std::move(sc));
  }
  {
    Scenario sc;
    sc.name = "example_5_5";
    sc.problem = "rap";
    sc.graph = path3();
    sc.costs = {{"steep_piecewise_linear", {1.0}}, {"steep_piecewise_linear", {2.0}},
                {"steep_piecewise_linear", {3.0}}};
    sc.q0 = 3.0;
    sc.tbg = constant(1000.0, 70.0);
    sc.varrho = 1.0;
    sc.epsilon = 0.05;
    sc.x0 = {50.0, -7.0, -50.0};
    sc.integrator = {70.0 / 3500000.0, 77.0, 1000};
    sc.compare_baseline = true;
    out.push_back(std::move(sc));
  }
  {
    Scenario sc;
    sc.name = "example_5_6";
    sc.problem = "consensus";
    sc.graph = path3();
    sc.costs = {{"quadratic", {1.0, -1.0}}, {"quadratic", {1.0, -9.0}}, {"quadratic", {1.0, 0.0}}};
    sc.tbg = constant(20.0, 1.0);
    sc.varrho = 0.2;
    sc.epsilon = 0.05;
    sc.x0 = {20.0, 5.0, -15.0};
    sc.integrator = {1.0 / 1000.0, 1.2, 1};
    out.push_back(std::move(sc));
  }
  {
    Scenario sc;
    sc.name = "example_5_7";
    sc.problem = "consensus";
    sc.graph = path3();
    sc.costs = {{"x_sin_inv", {}}, {"x_sin_inv", {}}, {"x_sin_inv", {}}};
    sc.tbg = constant(10.0, 1.8);
    sc.varrho = 0.1;
    sc.epsilon = 0.05;
    sc.x0 = {50.0, 3.0, -50.0};
    sc.integrator = {1.8 / 180000.0, 2.2, 50};
    sc.compare_baseline = true;
    out.push_back(std::move(sc));
  }
  {
    Scenario sc;
    sc.name = "example_5_8";
    sc.problem = "consensus";
    sc.graph = path3();
    sc.costs = {{"steep_piecewise_linear", {1.0}}, {"steep_piecewise_linear", {2.0}},
                {"steep_piecewise_linear", {3.0}}};
    sc.tbg = constant(10.0, 2.0);
    sc.varrho = 0.1;
    sc.epsilon = 0.05;
    sc.x0 = {50.0, 3.0, -50.0};
    sc.integrator = {2.0 / 600000.0, 2.4, 200};
    out.push_back(std::move(sc));
  }
  return out;
}

inline Scenario builtin_scenario(const std::string& name) {
  for (auto& sc : builtin_scenarios())
    if (sc.name == name) return sc;
  throw std::invalid_argument("unknown bundled scenario: " + name);
}

/// Runs every bundled scenario whose name contains `filter` (empty = all)
/// and writes a one-line-per-scenario summary when an output directory is
/// configured.
inline std::vector<ScenarioResult> run_catalog(const std::string& filter, const RunOptions& opts = {}) {
  std::vector<ScenarioResult> results;
  for (const auto& sc : builtin_scenarios()) {
    if (!filter.empty() && sc.name.find(filter) == std::string::npos) continue;
    results.push_back(run_scenario(sc, opts));
  }
  if (!opts.out_dir.empty()) {
    std::ofstream summary((std::filesystem::path(opts.out_dir) / "summary.txt").string());
    for (const auto& r : results) {
      summary << r.scenario.name << ": ";
      if (r.primary.diverged) summary << "diverged at t=" << r.primary.diverged_at;
      else if (r.primary.report)
        summary << to_string(r.primary.report->verdict)
                << " dist_at_tp=" << r.primary.report->dist_at_tp
                << " eps=" << r.epsilon_resolved;
      else summary << "no report";
      summary << "\n";
    }
  }
  return results;
}

}  // namespace tbgsim

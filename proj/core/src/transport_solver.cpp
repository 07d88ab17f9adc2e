#include "caustic/transport_solver.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>

#include "caustic/error.hpp"

namespace caustic {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double residual_inf(const std::vector<double>& G, std::span<const double> sigma) {
  double r = 0.0;
  for (size_t i = 0; i < G.size(); ++i) r = std::max(r, std::abs(G[i] - sigma[i]));
  return r;
}

double min_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); }

}  // namespace

std::vector<double> SolveReport::residual_history() const {
  std::vector<double> out{initial_residual};
  for (const auto& rec : history) out.push_back(rec.residual);
  return out;
}

std::string SolveReport::to_json() const {
  nlohmann::json doc;
  doc["iterations"] = iterations;
  doc["converged"] = converged;
  doc["initial_residual"] = initial_residual;
  doc["final_residual"] = final_residual;
  doc["epsilon0"] = epsilon0;
  doc["wall_seconds"] = wall_seconds;
  doc["residual_history"] = residual_history();
  std::vector<int> backtracks, cg;
  std::vector<double> min_g, secs, blend;
  for (const auto& rec : history) {
    backtracks.push_back(rec.backtracks);
    cg.push_back(rec.cg_iterations);
    min_g.push_back(rec.min_G);
    secs.push_back(rec.seconds);
    blend.push_back(rec.blend);
  }
  doc["backtracks"] = backtracks;
  doc["cg_iterations"] = cg;
  doc["min_G"] = min_g;
  doc["iteration_seconds"] = secs;
  doc["iteration_blend"] = blend;
  doc["blend_stages"] = blend_stages;
  return doc.dump(1);
}

Eigen::VectorXd newton_direction(const TransportState& state, std::span<const double> sigma, const SolverConfig& config,
                                 int orientation, int* cg_iterations) {
  const Eigen::Index n = static_cast<Eigen::Index>(state.G.size());
  if (static_cast<Eigen::Index>(sigma.size()) != n)
    throw Error(ErrorKind::DimensionMismatch, "sigma size differs from G");
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  if (cg_iterations) *cg_iterations = 0;
  if (n <= 1) return d;
  const Eigen::Index drop = static_cast<Eigen::Index>(std::max_element(sigma.begin(), sigma.end()) - sigma.begin());
  auto reduced = [drop](Eigen::Index k) { return k < drop ? k : k - 1; };

  Eigen::VectorXd rhs(n - 1);
  bool zero = true;
  for (Eigen::Index k = 0; k < n; ++k) {
    if (k == drop) continue;
    rhs[reduced(k)] = orientation * (state.G[k] - sigma[k]);
    zero = zero && rhs[reduced(k)] == 0.0;
  }
  if (zero) return d;

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<size_t>(state.DG.nonZeros()));
  for (Eigen::Index col = 0; col < state.DG.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(state.DG, col); it; ++it) {
      if (it.row() == drop || it.col() == drop) continue;
      triplets.emplace_back(reduced(it.row()), reduced(it.col()), -orientation * it.value());
    }
  }
  Eigen::SparseMatrix<double> A(n - 1, n - 1);
  A.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper, Eigen::DiagonalPreconditioner<double>> cg;
  cg.setTolerance(config.cg_tolerance);
  cg.setMaxIterations(config.cg_max_iters > 0 ? config.cg_max_iters : static_cast<int>(10 * n));
  cg.compute(A);
  const Eigen::VectorXd x = cg.solve(rhs);
  if (cg_iterations) *cg_iterations = static_cast<int>(cg.iterations());
  if (cg.info() != Eigen::Success || !x.allFinite()) {
    throw Error(ErrorKind::LinearSolveFailure, "conjugate gradient did not reach tolerance (error " + std::to_string(cg.error()) + ")");
  }
  for (Eigen::Index k = 0; k < n; ++k)
    if (k != drop) d[k] = x[reduced(k)];
  d.array() -= d.mean();
  return d;
}

SolveReport damped_newton(const OpticalModel& model, const SourceDensity& source, std::span<const double> sigma,
                          std::span<const double> psi0, const SolverConfig& config) {
  const auto t_start = Clock::now();
  const ProblemSpec& spec = model.spec();
  const size_t n = model.size();
  if (sigma.size() != n || psi0.size() != n) throw Error(ErrorKind::DimensionMismatch, "sizes of sigma, psi0 and targets differ");
  if (!(config.eta > 0.0) || config.max_backtracks < 1) throw Error(ErrorKind::ConfigError, "eta must be positive and max_backtracks >= 1");
  for (double s : sigma)
    if (!(s > 0.0)) throw Error(ErrorKind::ConfigError, "target masses must be positive");

  std::vector<double> psi_t = to_transport_vars(spec, psi0);
  renormalize_transport(spec, psi_t);
  TransportState state = evaluate_transport(model, psi_t, source, true);
  for (size_t i = 0; i < n; ++i)
    if (!(state.G[i] > 0.0)) throw Error(ErrorKind::InitialEmptyCell, "cell " + std::to_string(i) + " is empty at the initial weights");

  SolveReport report;
  report.epsilon0 = 0.5 * std::min(min_of(state.G), *std::min_element(sigma.begin(), sigma.end()));
  double residual = residual_inf(state.G, sigma);
  report.initial_residual = residual;
  const int orientation = spec.orientation();

  while (residual > config.eta) {
    if (report.iterations >= config.max_newton_iters) {
      throw Error(ErrorKind::IterationLimit, "no convergence after " + std::to_string(config.max_newton_iters) +
                                                 " Newton iterations (residual " + std::to_string(residual) + ")");
    }
    const auto t_iter = Clock::now();
    IterationRecord rec;
    const Eigen::VectorXd d = newton_direction(state, sigma, config, orientation, &rec.cg_iterations);
    bool accepted = false;
    for (int l = 0; l <= config.max_backtracks; ++l) {
      const double step = std::ldexp(1.0, -l);
      std::vector<double> trial(n);
      for (size_t i = 0; i < n; ++i) trial[i] = psi_t[i] + step * d[static_cast<Eigen::Index>(i)];
      TransportState next;
      try {
        next = evaluate_transport(model, trial, source, true);
      } catch (const Error& e) {
        // Weights outside the domain of the primitives: treat as a rejected step.
        if (e.kind() != ErrorKind::SingularWeight && e.kind() != ErrorKind::DenominatorSign) throw;
        continue;
      }
      const double next_residual = residual_inf(next.G, sigma);
      const double next_min = min_of(next.G);
      if (next_min >= report.epsilon0 && next_residual <= (1.0 - std::ldexp(1.0, -(l + 1))) * residual) {
        renormalize_transport(spec, trial);
        if (spec.is_point()) next.psi = from_transport_vars(spec, trial);
        psi_t = std::move(trial);
        state = std::move(next);
        residual = next_residual;
        rec.backtracks = l;
        rec.min_G = next_min;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      throw Error(ErrorKind::BacktrackExhausted, "no admissible step after " + std::to_string(config.max_backtracks) +
                                                     " halvings (residual " + std::to_string(residual) + ")");
    }
    ++report.iterations;
    rec.residual = residual;
    rec.seconds = seconds_since(t_iter);
    report.history.push_back(rec);
    if (config.verbose)
      std::fprintf(stderr, "  newton %3d  residual %.3e  l=%d  min G %.3e  cg %d  %.2fs\n", report.iterations, residual,
                   rec.backtracks, rec.min_G, rec.cg_iterations, rec.seconds);
  }
  report.final_residual = residual;
  report.converged = true;
  report.psi = from_transport_vars(spec, psi_t);
  report.G = state.G;
  report.wall_seconds = seconds_since(t_start);
  return report;
}

std::vector<double> default_blend_schedule(double min_sigma) {
  std::vector<double> ts;
  double t = 0.5;
  ts.push_back(t);
  while (t > 0.25 * min_sigma) {
    t *= 0.5;
    ts.push_back(t);
  }
  ts.push_back(0.0);
  return ts;
}

SourceDensity enlarged_support(const ProblemSpec& spec, std::span<const Vec3> directions, const SourceDensity& source) {
  SourceSpec s;
  if (spec.is_point()) {
    // Match the source mesh resolution: level L has 20 * 4^L faces.
    const double mean_area = source.total_area() / std::max<size_t>(source.triangle_count(), 1);
    const double level = std::log(4.0 * std::numbers::pi / (20.0 * mean_area)) / std::log(4.0);
    s.region = CapRegion{Vec3::UnitZ(), 180.0, std::clamp(static_cast<int>(std::lround(level)), 2, 6)};
    return build_source_density(s);
  }
  Vec3 lo = source.bbox_min(), hi = source.bbox_max();
  for (const auto& seed : initial_seed_points(spec, directions, source)) {
    lo = lo.cwiseMin(seed);
    hi = hi.cwiseMax(seed);
  }
  const Vec3 margin = 0.05 * (hi - lo);
  lo -= margin;
  hi += margin;
  const double side = std::max(hi.x() - lo.x(), hi.y() - lo.y());
  const int res = std::max(8, static_cast<int>(std::ceil(std::sqrt(source.triangle_count() / 2.0))));
  s.region = RectangleRegion{Vec2(0.5 * (lo.x() + hi.x()), 0.5 * (lo.y() + hi.y())), side, side, res};
  return build_source_density(s);
}

namespace {

double min_mass(const OpticalModel& model, const std::vector<double>& psi, const SourceDensity& source) {
  try {
    std::vector<double> psi_t = to_transport_vars(model.spec(), psi);
    renormalize_transport(model.spec(), psi_t);
    return min_of(evaluate_transport(model, psi_t, source, false).G);
  } catch (const Error&) {
    return 0.0;
  }
}

// Level of an icosphere whose triangles match the source mesh size.
int matching_level(const SourceDensity& source) {
  const double mean_area = source.total_area() / std::max<size_t>(source.triangle_count(), 1);
  const double level = std::log(4.0 * std::numbers::pi / (20.0 * mean_area)) / std::log(4.0);
  return std::clamp(static_cast<int>(std::lround(level)), 2, 6);
}

// Moves the log-weight of every empty cell just past the current owner of its seed,
// repeated while that keeps emptying fewer cells.
std::vector<double> repair_empty_cells(const OpticalModel& model, std::vector<double> psi, std::span<const Vec3> seeds,
                                       const SourceDensity& source, int rounds) {
  const ProblemSpec& spec = model.spec();
  const double e = spec.eccentricity();
  const double s = spec.envelope == Envelope::Union ? 1.0 : -1.0;
  const auto h = [&](size_t i, const Vec3& x) { return -std::log(1.0 - e * x.dot(model.directions()[i])); };
  for (int round = 0; round < rounds; ++round) {
    std::vector<double> G;
    try {
      std::vector<double> psi_t = to_transport_vars(spec, psi);
      G = evaluate_transport(model, psi_t, source, false).G;
    } catch (const Error&) {
      break;
    }
    std::vector<size_t> empty;
    for (size_t i = 0; i < G.size(); ++i)
      if (!(G[i] > 0.0)) empty.push_back(i);
    if (empty.empty()) break;
    std::vector<double> next = psi;
    for (size_t i : empty) {
      const Vec3& x = seeds[i];
      const auto j = static_cast<size_t>(model.cell(psi, x));
      if (j == i) continue;
      const double gap = std::log(psi[j]) + h(j, x) - std::log(psi[i]) - h(i, x);
      next[i] = psi[i] * std::exp(gap * 1.1 + s * 1e-12);
    }
    psi = std::move(next);
  }
  return psi;
}

struct BlendStart {
  SourceDensity support;
  std::vector<double> psi;
};

// Smallest cap around the source on which the fitted weights already give nonempty cells.
std::optional<BlendStart> snug_cap_start(const OpticalModel& model, const SourceDensity& source) {
  Vec3 axis = Vec3::Zero();
  for (const auto& v : source.vertices()) axis += v;
  if (axis.norm() < 1e-12) return std::nullopt;
  axis.normalize();
  double half = 0.0;
  for (const auto& v : source.vertices()) half = std::max(half, std::acos(std::clamp(v.normalized().dot(axis), -1.0, 1.0)));
  half *= 180.0 / std::numbers::pi;
  std::vector<double> psi;
  try {
    psi = fitted_initial_weights(model.spec(), model.directions(), source);
  } catch (const Error&) {
    return std::nullopt;
  }
  SourceSpec s;
  for (double grow : {1.25, 1.5, 2.0, 3.0}) {
    if (half * grow >= 179.0) break;
    s.region = CapRegion{axis, half * grow, matching_level(source)};
    SourceDensity cap = build_source_density(s);
    if (min_mass(model, psi, blend_with_uniform(source, 0.5, cap)) > 0.0) return BlendStart{std::move(cap), psi};
  }
  return std::nullopt;
}

}  // namespace

SolveReport solve_transport(const OpticalModel& model, const SourceDensity& source, std::span<const double> sigma,
                            const SolverConfig& config, std::optional<std::vector<double>> psi0) {
  const auto t_start = Clock::now();
  const ProblemSpec& spec = model.spec();
  std::vector<double> psi = psi0                ? std::move(*psi0)
                            : spec.is_point() ? initial_weights(spec, model.directions(), source)
                                              : fitted_initial_weights(spec, model.directions(), source);
  try {
    return damped_newton(model, source, sigma, psi, config);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::InitialEmptyCell) throw;
  }
  if (spec.is_point()) {
    std::vector<Vec3> seeds;
    psi = fitted_initial_weights(spec, model.directions(), source, &seeds);
    psi = repair_empty_cells(model, std::move(psi), seeds, source, 30);
    try {
      SolveReport r = damped_newton(model, source, sigma, psi, config);
      r.wall_seconds = seconds_since(t_start);
      return r;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InitialEmptyCell) throw;
    }
  }
  const double min_sigma = *std::min_element(sigma.begin(), sigma.end());
  std::optional<BlendStart> start = spec.is_point() ? snug_cap_start(model, source) : std::nullopt;
  if (!start) start = BlendStart{enlarged_support(spec, model.directions(), source), initial_weights(spec, model.directions(), source)};
  const SourceDensity& support = start->support;
  psi = start->psi;

  // Explicit schedules are followed as given; otherwise t drops as fast as the cells allow.
  const bool adaptive = !config.blend_schedule;
  std::vector<double> schedule = adaptive ? std::vector<double>{0.5} : *config.blend_schedule;
  if (!adaptive && (schedule.empty() || schedule.back() != 0.0)) schedule.push_back(0.0);

  SolveReport total;
  bool first = true;
  for (size_t k = 0; k < schedule.size(); ++k) {
    const double t = schedule[k];
    SolverConfig stage = config;
    if (t > 0.0) stage.eta = std::max(config.eta, 0.1 * min_sigma);
    if (config.verbose) std::fprintf(stderr, " blend t = %g\n", t);
    SolveReport r = t > 0.0 ? damped_newton(model, blend_with_uniform(source, t, support), sigma, psi, stage)
                            : damped_newton(model, source, sigma, psi, stage);
    if (first) {
      total.initial_residual = r.initial_residual;
      total.epsilon0 = r.epsilon0;
      first = false;
    }
    for (auto rec : r.history) {
      rec.blend = t;
      total.history.push_back(rec);
    }
    total.iterations += r.iterations;
    psi = r.psi;
    total.psi = r.psi;
    total.G = r.G;
    total.final_residual = r.final_residual;
    total.converged = r.converged;
    if (adaptive && t > 0.0) {
      double next = 0.5 * t;
      if (t <= 0.25 * min_sigma) {
        next = 0.0;
      } else {
        for (double cand : {0.0, t / 16.0, t / 4.0}) {
          const double m = cand > 0.0 ? min_mass(model, psi, blend_with_uniform(source, cand, support))
                                      : min_mass(model, psi, source);
          if (m >= 0.5 * min_sigma) {
            next = cand;
            break;
          }
        }
      }
      schedule.push_back(next);
    }
  }
  total.blend_stages = schedule;
  total.wall_seconds = seconds_since(t_start);
  return total;
}

}  // namespace caustic

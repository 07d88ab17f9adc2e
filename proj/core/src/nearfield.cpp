#include "caustic/nearfield.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

#include "caustic/error.hpp"

namespace caustic {

namespace {

using Clock = std::chrono::steady_clock;

double residual_inf(std::span<const double> G, std::span<const double> sigma) {
  double r = 0.0;
  for (size_t i = 0; i < G.size(); ++i) r = std::max(r, std::abs(G[i] - sigma[i]));
  return r;
}

std::vector<Vec3> directions_towards(const std::vector<Vec3>& z, const std::vector<Vec3>& v) {
  std::vector<Vec3> y(z.size());
  for (size_t i = 0; i < z.size(); ++i) {
    const Vec3 d = z[i] - v[i];
    const double len = d.norm();
    if (!(len > 1e-12)) throw Error(ErrorKind::DegenerateDirection, "target point " + std::to_string(i) + " lies on the surface");
    y[i] = d / len;
  }
  return y;
}

bool all_cells_nonempty(const OpticalModel& model, std::span<const double> psi, const SourceDensity& source) {
  try {
    const TransportState s = evaluate_transport(model, to_transport_vars(model.spec(), psi), source, false);
    for (double g : s.G)
      if (!(g > 0.0)) return false;
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace

std::vector<double> NearFieldResult::displacements() const {
  std::vector<double> out;
  for (const auto& h : history) out.push_back(h.mean_displacement);
  return out;
}

std::string NearFieldResult::to_json() const {
  nlohmann::json doc;
  doc["converged"] = converged;
  doc["outer_iterations"] = history.size();
  doc["displacements"] = displacements();
  doc["fixed_point_residual"] = fixed_point_residual;
  doc["wall_seconds"] = wall_seconds;
  nlohmann::json solves = nlohmann::json::array();
  for (const auto& h : history) {
    nlohmann::json s = nlohmann::json::parse(h.solve.to_json());
    s["warm_start"] = h.warm_start;
    solves.push_back(std::move(s));
  }
  doc["solves"] = std::move(solves);
  return doc.dump(2);
}

Vec3 cell_centroid(std::span<const CellPolygon> polygons, const SourceDensity& source) {
  const double mass = cell_mass(polygons, source);
  if (!(mass > 0.0)) throw Error(ErrorKind::EmptyCell, "centroid of an empty cell");
  const Vec3 c = cell_moment(polygons, source) / mass;
  if (source.domain() == DomainKind::Sphere) {
    const double len = c.norm();
    if (!(len > 0.0)) throw Error(ErrorKind::EmptyCell, "cell centroid at the sphere center");
    return c / len;
  }
  return c;
}

NearFieldResult solve_nearfield(const ProblemSpec& spec, const SourceDensity& source, const TargetMeasure& targets,
                                const NearFieldConfig& config) {
  if (targets.kind != TargetKind::NearField) throw Error(ErrorKind::ConfigError, "near-field solve needs target points");
  if (config.max_outer < 1) throw Error(ErrorKind::ConfigError, "max_outer must be >= 1");
  const auto t0 = Clock::now();
  const size_t n = targets.size();
  NearFieldResult result;
  std::vector<Vec3> centroids(n, Vec3::Zero());
  std::vector<Vec3> surface(n, Vec3::Zero());
  std::vector<double> psi;
  double height = 0.0;

  for (int k = 0; k < config.max_outer; ++k) {
    if (k > 0) {
      const OpticalModel previous(spec, result.directions);
      for (size_t i = 0; i < n; ++i) surface[i] = previous.lift(i, psi[i], centroids[i]);
    }
    std::vector<Vec3> y = directions_towards(targets.points, surface);
    validate_setup(spec, y, source);
    const OpticalModel model(spec, y);

    NearFieldIteration it;
    it.k = k;
    it.warm_start = !psi.empty() && all_cells_nonempty(model, psi, source);
    it.solve = it.warm_start ? solve_transport(model, source, targets.masses, config.solver, psi)
                             : solve_transport(model, source, targets.masses, config.solver);
    if (!it.solve.converged) throw Error(ErrorKind::IterationLimit, "far-field solve did not converge");
    psi = it.solve.psi;
    if (!spec.is_point()) {
      // A constant shift moves a collimated component along the axis without
      // changing its far-field cells; holding the mean fixed pins the height.
      double mean = 0.0;
      for (double v : psi) mean += v;
      mean /= static_cast<double>(n);
      if (k == 0) height = mean;
      for (double& v : psi) v += height - mean;
      it.solve.psi = psi;
    }

    const VisibilityDiagram diagram = visibility_diagram(model, psi, source);
    double moved = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const Vec3 c = cell_centroid(diagram.cells[i], source);
      moved += (c - centroids[i]).norm();
      centroids[i] = c;
    }
    it.mean_displacement = moved / static_cast<double>(n);
    result.directions = std::move(y);
    result.surface_points = surface;
    result.history.push_back(std::move(it));
    if (config.solver.verbose)
      std::fprintf(stderr, "outer %d  displacement %.3e\n", k + 1, result.history.back().mean_displacement);
    if (result.history.back().mean_displacement <= config.eta_nf) {
      result.converged = true;
      break;
    }
  }

  result.psi = psi;
  result.centroids = centroids;
  // One more far-field evaluation at the directions the final centroids would produce.
  const OpticalModel last(spec, result.directions);
  std::vector<Vec3> v(n);
  for (size_t i = 0; i < n; ++i) v[i] = last.lift(i, psi[i], centroids[i]);
  try {
    const OpticalModel next(spec, directions_towards(targets.points, v));
    const TransportState s = evaluate_transport(next, to_transport_vars(spec, psi), source, false);
    result.fixed_point_residual = residual_inf(s.G, targets.masses);
  } catch (const Error&) {
    result.fixed_point_residual = std::numeric_limits<double>::infinity();
  }
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

std::vector<Pillow> solve_pillows(const ProblemSpec& spec, const SourceDensity& source, int cols, int rows,
                                  const TargetMeasure& targets, const NearFieldConfig& config, int subdivision) {
  if (spec.is_point()) throw Error(ErrorKind::ConfigError, "pillows need a collimated source");
  if (cols < 1 || rows < 1) throw Error(ErrorKind::ConfigError, "pillow grid must be at least 1x1");
  const Vec3 lo = source.bbox_min(), hi = source.bbox_max();
  const double w = (hi.x() - lo.x()) / cols, h = (hi.y() - lo.y()) / rows;
  std::vector<Pillow> pillows;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Pillow p;
      p.lo = Vec2(lo.x() + c * w, lo.y() + r * h);
      p.hi = Vec2(c + 1 == cols ? hi.x() : lo.x() + (c + 1) * w, r + 1 == rows ? hi.y() : lo.y() + (r + 1) * h);
      p.source = cols * rows == 1 ? source : crop_to_rectangle(source, p.lo, p.hi);
      p.result = solve_nearfield(spec, p.source, targets, config);
      const OpticalModel model(spec, p.result.directions);
      p.mesh = build_mesh(model, p.result.psi, visibility_diagram(model, p.result.psi, p.source), p.source, subdivision);
      pillows.push_back(std::move(p));
    }
  }
  return pillows;
}

}  // namespace caustic

#pragma once

#include <span>
#include <string>
#include <vector>

#include "caustic/measures.hpp"
#include "caustic/optics.hpp"
#include "caustic/power_diagram.hpp"
#include "caustic/surface.hpp"
#include "caustic/transport_solver.hpp"

namespace caustic {

struct NearFieldConfig {
  double eta_nf = 1e-6;  // stop when the mean centroid displacement falls below this
  int max_outer = 6;
  SolverConfig solver;
};

struct NearFieldIteration {
  int k = 0;
  double mean_displacement = 0.0;  // sum_i |c_i^{k+1} - c_i^k| / N
  bool warm_start = false;         // previous weights reused as the Newton start
  SolveReport solve;
};

struct NearFieldResult {
  std::vector<double> psi;
  std::vector<Vec3> directions;      // far-field directions of the last solve
  std::vector<Vec3> centroids;       // cell centroids at psi
  std::vector<Vec3> surface_points;  // R_psi at the centroids used for `directions`
  std::vector<NearFieldIteration> history;
  bool converged = false;
  double fixed_point_residual = 0.0;  // |G - sigma|_inf at the directions the final centroids produce
  double wall_seconds = 0.0;

  double final_displacement() const { return history.empty() ? 0.0 : history.back().mean_displacement; }
  std::vector<double> displacements() const;
  std::string to_json() const;
};

/// Density centroid of a cell; projected back to the unit sphere for point sources.
Vec3 cell_centroid(std::span<const CellPolygon> polygons, const SourceDensity& source);

/// Fixed-point iteration over far-field solves for targets at finite distance.
/// Starts from centroids at the origin, so the first solve uses z_i / |z_i|.
NearFieldResult solve_nearfield(const ProblemSpec& spec, const SourceDensity& source, const TargetMeasure& targets,
                                const NearFieldConfig& config = {});

struct Pillow {
  Vec2 lo, hi;  // footprint on the source plane
  SourceDensity source;
  NearFieldResult result;
  TriangleMesh mesh;
};

/// Splits a collimated source into cols x rows rectangles that each solve the
/// same target. With max_outer = 1 each pillow solves the far-field problem
/// towards z_i / |z_i|.
std::vector<Pillow> solve_pillows(const ProblemSpec& spec, const SourceDensity& source, int cols, int rows,
                                  const TargetMeasure& targets, const NearFieldConfig& config = {},
                                  int subdivision = 0);

}  // namespace caustic

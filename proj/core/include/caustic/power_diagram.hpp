#pragma once

#include <Eigen/SparseCore>

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "caustic/measures.hpp"
#include "caustic/optics.hpp"

namespace caustic {

/// Convex piece of a visibility cell inside one source triangle.
///
/// edge_tags[k] labels the edge from vertices[k] to vertices[k+1]: a target
/// index for a bisector edge, or -(e+1) for edge e of the source triangle
/// (edge e joins corners e and e+1).
struct CellPolygon {
  int triangle = -1;
  std::vector<Vec3> vertices;
  std::vector<int> edge_tags;
};

struct VisibilityDiagram {
  std::vector<std::vector<CellPolygon>> cells;  // indexed by target
  std::vector<double> masses;
  std::vector<std::pair<int, int>> adjacency;  // i < j, sorted

  size_t size() const { return cells.size(); }
  double total_mass() const;
};

/// Power diagram of the weighted points intersected with the source triangulation.
VisibilityDiagram restricted_power_diagram(std::span<const WeightedPoint> points, const SourceDensity& source);

// Integral of the source density over the polygons (exact for affine densities).
double polygon_mass(const CellPolygon& polygon, const SourceDensity& source);
double cell_mass(std::span<const CellPolygon> polygons, const SourceDensity& source);
// Density-weighted first moment of the polygons.
Vec3 cell_moment(std::span<const CellPolygon> polygons, const SourceDensity& source);

struct TransportState {
  std::vector<double> G;
  Eigen::SparseMatrix<double> DG;  // dG_i / d psi_tilde_j; empty when not requested
  std::vector<double> psi;         // natural weights the state was evaluated at
  bool has_jacobian = false;
};

/// Masses of the visibility cells and their Jacobian in transport variables.
TransportState evaluate_transport(const OpticalModel& model, std::span<const double> psi_tilde,
                                  const SourceDensity& source, bool with_jacobian = true);

/// Same as evaluate_transport but starting from natural weights.
TransportState evaluate_G(const ProblemSpec& spec, std::span<const double> psi, const SourceDensity& source,
                          const TargetMeasure& targets, bool with_jacobian = true);

VisibilityDiagram visibility_diagram(const OpticalModel& model, std::span<const double> psi,
                                     const SourceDensity& source);

// Debug dumps: cell boundaries as OBJ line segments, or a JSON polygon soup.
void write_diagram_obj(const VisibilityDiagram& diagram, const std::filesystem::path& path);
void write_diagram_json(const VisibilityDiagram& diagram, const std::filesystem::path& path);

}  // namespace caustic

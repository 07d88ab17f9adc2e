#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "caustic/measures.hpp"
#include "caustic/optics.hpp"
#include "caustic/power_diagram.hpp"

namespace caustic {

/// Triangulated optical surface. Vertices are duplicated per cell so every
/// face corner keeps the exact normal of its own cell.
struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Vec3, 3>> corner_normals;
  std::vector<int> face_cell;
  std::vector<Vec3> footprints;  // domain point each vertex was lifted from (may be empty)

  size_t size() const { return faces.size(); }
  bool empty() const { return faces.empty(); }
  Vec3 face_normal(size_t f) const;  // unit, from the vertex winding
  double face_area(size_t f) const;
};

/// Lifts the cells of `diagram` onto the surface R_psi. Each cell piece is fanned
/// from its density centroid; subdivision s splits every fan triangle into
/// (s+1)^2 triangles whose vertices are lifted individually.
TriangleMesh build_mesh(const OpticalModel& model, std::span<const double> psi, const VisibilityDiagram& diagram,
                        const SourceDensity& source, int subdivision = 0);

/// ASCII OBJ with v / vn / f v//vn records and a `g cell_<i>` group per cell.
void export_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_obj(const std::filesystem::path& path);

/// Binary little-endian PLY (vertices with per-face cell index).
void export_ply(const TriangleMesh& mesh, const std::filesystem::path& path);

}  // namespace caustic

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "caustic/image_io.hpp"

namespace caustic {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

enum class DomainKind { Plane, Sphere };

/// Piecewise-affine density on a triangulation of either the z=0 plane or a
/// chordal mesh of the unit sphere.
///
/// Vertex densities are interpolated linearly inside each triangle. For the
/// sphere, integrals are taken over the flat (chordal) triangles.
class SourceDensity {
 public:
  SourceDensity() = default;
  SourceDensity(DomainKind kind, std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles,
                std::vector<double> vertex_density);

  DomainKind domain() const { return domain_; }
  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<std::array<int, 3>>& triangles() const { return triangles_; }
  const std::vector<double>& vertex_density() const { return density_; }

  size_t triangle_count() const { return triangles_.size(); }
  const Vec3& corner(size_t tri, int k) const { return vertices_[triangles_[tri][k]]; }
  double corner_density(size_t tri, int k) const { return density_[triangles_[tri][k]]; }

  double triangle_area(size_t tri) const;
  double triangle_mass(size_t tri) const;
  Vec3 triangle_normal(size_t tri) const;  // unit, right-handed in vertex order
  double total_mass() const;
  double total_area() const;

  // Affine density of triangle `tri` evaluated at a point of its plane.
  double density_in_triangle(size_t tri, const Vec3& x) const;
  // Density at a point of the domain; 0 outside the triangulation.
  double density_at(const Vec3& x) const;
  std::optional<size_t> locate(const Vec3& x) const;

  Vec3 bbox_min() const;
  Vec3 bbox_max() const;

  // Divides vertex densities by the total mass. Throws EmptySupport when the mass is 0.
  void normalize();

 private:
  DomainKind domain_ = DomainKind::Plane;
  std::vector<Vec3> vertices_;
  std::vector<std::array<int, 3>> triangles_;
  std::vector<double> density_;
};

struct RectangleRegion {
  Vec2 center{0.0, 0.0};
  double width = 1.0;
  double height = 1.0;
  int resolution = 8;  // cells per side; 2*resolution^2 triangles
};

struct CapRegion {
  Vec3 axis{0.0, 0.0, 1.0};
  double half_angle_deg = 30.0;  // >= 180 gives the whole sphere
  int level = 5;                 // icosahedron subdivision level
};

enum class DensityProfile { Uniform, Gaussian, Image };

struct SourceSpec {
  std::variant<RectangleRegion, CapRegion> region = RectangleRegion{};
  DensityProfile profile = DensityProfile::Uniform;
  double gaussian_sigma = 0.0;  // 0 means 0.25 * side (or 0.25 * cap radius)
  GrayImage image;              // used by DensityProfile::Image
};

SourceDensity build_source_density(const SourceSpec& spec);

// Normalized (1-t) * src + t * uniform, triangulated over `enlarged_support`
// (only its geometry is used).
SourceDensity blend_with_uniform(const SourceDensity& src, double t, const SourceDensity& enlarged_support);

// Restriction of a planar density to the rectangle [lo, hi], renormalized to mass 1.
SourceDensity crop_to_rectangle(const SourceDensity& src, const Vec2& lo, const Vec2& hi);

// Subdivided icosahedron projected to the unit sphere.
void icosphere(int level, std::vector<Vec3>& vertices, std::vector<std::array<int, 3>>& triangles);

/// Virtual screen: pixel (r, c) of an H x W image maps to the center of its cell.
/// Row 0 is at +v, column 0 at -u.
struct ScreenGeometry {
  Vec3 center{0.0, 0.0, -2.0};
  Vec3 u_axis{1.0, 0.0, 0.0};
  Vec3 v_axis{0.0, 1.0, 0.0};
  double width = 0.6;
  double height = 0.6;

  // Screen perpendicular to e_z at z = -distance (below) or +distance.
  static ScreenGeometry facing(double distance, double size, bool below);

  Vec3 pixel_center(int row, int col, int rows, int cols) const;
  Vec3 normal() const { return u_axis.cross(v_axis).normalized(); }
  // Continuous pixel coordinates (col, row) of a point on the screen plane.
  Vec2 to_pixel(const Vec3& p, int rows, int cols) const;
};

enum class TargetKind { FarField, NearField };

/// Discrete target: Dirac masses on directions (far field) or points (near field).
struct TargetMeasure {
  TargetKind kind = TargetKind::FarField;
  std::vector<Vec3> points;  // unit directions (far field) or positions
  std::vector<double> masses;
  // Raster provenance, when built from an image.
  std::vector<std::array<int, 2>> pixels;  // (row, col)
  int rows = 0;
  int cols = 0;
  ScreenGeometry screen;

  size_t size() const { return points.size(); }
  // Masses spread back onto the source raster.
  GrayImage to_image() const;
};

struct TargetOptions {
  TargetKind kind = TargetKind::FarField;
  double gamma = 1.0;  // intensity = (pixel/255)^gamma
  std::function<bool(const Vec3&)> admissible;  // checked on far-field directions
};

TargetMeasure load_target_image(const GrayImage& image, const ScreenGeometry& screen,
                                const TargetOptions& options = {});

// Drops zero masses and rescales to total 1. Throws AllBlackImage when nothing remains.
void normalize_target(TargetMeasure& target);

}  // namespace caustic

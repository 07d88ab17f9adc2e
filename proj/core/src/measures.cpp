#include "caustic/measures.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "caustic/error.hpp"

namespace caustic {
namespace {

constexpr double kPi = std::numbers::pi;

double bilinear(const GrayImage& img, double col, double row) {
  col = std::clamp(col, 0.0, img.width - 1.0);
  row = std::clamp(row, 0.0, img.height - 1.0);
  const int c0 = std::min(static_cast<int>(col), img.width - 1);
  const int r0 = std::min(static_cast<int>(row), img.height - 1);
  const int c1 = std::min(c0 + 1, img.width - 1);
  const int r1 = std::min(r0 + 1, img.height - 1);
  const double fc = col - c0, fr = row - r0;
  return (1 - fr) * ((1 - fc) * img.at(r0, c0) + fc * img.at(r0, c1)) +
         fr * ((1 - fc) * img.at(r1, c0) + fc * img.at(r1, c1));
}

// Image covering [-1,1]^2 in (u,v), row 0 at v = +1.
double sample_unit_square(const GrayImage& img, double u, double v) {
  if (u < -1 || u > 1 || v < -1 || v > 1) return 0.0;
  return bilinear(img, (u + 1) / 2 * img.width - 0.5, (1 - v) / 2 * img.height - 0.5);
}

void tangent_frame(const Vec3& axis, Vec3& e1, Vec3& e2) {
  const Vec3 a = axis.normalized();
  const Vec3 helper = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  e1 = (helper - helper.dot(a) * a).normalized();
  e2 = a.cross(e1);
}

bool barycentric(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& p, double& l0, double& l1, double& l2) {
  const Vec3 v0 = b - a, v1 = c - a, v2 = p - a;
  const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
  const double d20 = v2.dot(v0), d21 = v2.dot(v1);
  const double den = d00 * d11 - d01 * d01;
  if (den <= 0) return false;
  l1 = (d11 * d20 - d01 * d21) / den;
  l2 = (d00 * d21 - d01 * d20) / den;
  l0 = 1.0 - l1 - l2;
  return true;
}

SourceDensity build_rectangle(const RectangleRegion& r, const SourceSpec& spec) {
  if (r.resolution < 1 || r.width <= 0 || r.height <= 0)
    throw Error(ErrorKind::ConfigError, "rectangle source needs positive size and resolution");
  const int n = r.resolution;
  std::vector<Vec3> verts;
  std::vector<double> dens;
  verts.reserve(static_cast<size_t>(n + 1) * (n + 1));
  const double side = std::min(r.width, r.height);
  const double sigma = spec.gaussian_sigma > 0 ? spec.gaussian_sigma : 0.25 * side;
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      const double u = -1.0 + 2.0 * i / n, v = -1.0 + 2.0 * j / n;
      const Vec3 x(r.center.x() + 0.5 * r.width * u, r.center.y() + 0.5 * r.height * v, 0.0);
      verts.push_back(x);
      double rho = 1.0;
      if (spec.profile == DensityProfile::Gaussian) {
        const double d2 = (x.head<2>() - r.center).squaredNorm();
        rho = std::exp(-d2 / (2 * sigma * sigma));
      } else if (spec.profile == DensityProfile::Image) {
        rho = sample_unit_square(spec.image, u, v);
      }
      dens.push_back(rho);
    }
  }
  std::vector<std::array<int, 3>> tris;
  tris.reserve(2 * static_cast<size_t>(n) * n);
  const auto id = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      tris.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      tris.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  return SourceDensity(DomainKind::Plane, std::move(verts), std::move(tris), std::move(dens));
}

SourceDensity build_cap(const CapRegion& cap, const SourceSpec& spec) {
  if (cap.level < 0 || cap.half_angle_deg <= 0)
    throw Error(ErrorKind::ConfigError, "cap source needs a positive half angle");
  std::vector<Vec3> all;
  std::vector<std::array<int, 3>> all_tris;
  icosphere(cap.level, all, all_tris);
  const Vec3 axis = cap.axis.normalized();
  const double half = cap.half_angle_deg * kPi / 180.0;
  const double cos_half = cap.half_angle_deg >= 180.0 ? -2.0 : std::cos(half);

  std::vector<int> remap(all.size(), -1);
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  for (const auto& t : all_tris) {
    const Vec3 c = (all[t[0]] + all[t[1]] + all[t[2]]).normalized();
    if (c.dot(axis) < cos_half) continue;
    std::array<int, 3> nt{};
    for (int k = 0; k < 3; ++k) {
      int& m = remap[t[k]];
      if (m < 0) {
        m = static_cast<int>(verts.size());
        verts.push_back(all[t[k]]);
      }
      nt[k] = m;
    }
    tris.push_back(nt);
  }
  if (tris.empty()) throw Error(ErrorKind::EmptySupport, "cap contains no mesh triangle; increase level");

  Vec3 e1, e2;
  tangent_frame(axis, e1, e2);
  const double radius = cap.half_angle_deg >= 90.0 ? 1.0 : std::sin(half);
  const double sigma = spec.gaussian_sigma > 0 ? spec.gaussian_sigma : 0.25 * std::min(half, kPi);
  std::vector<double> dens(verts.size(), 1.0);
  for (size_t i = 0; i < verts.size(); ++i) {
    const Vec3& x = verts[i];
    if (spec.profile == DensityProfile::Gaussian) {
      const double theta = std::acos(std::clamp(x.dot(axis), -1.0, 1.0));
      dens[i] = std::exp(-theta * theta / (2 * sigma * sigma));
    } else if (spec.profile == DensityProfile::Image) {
      dens[i] = sample_unit_square(spec.image, x.dot(e1) / radius, x.dot(e2) / radius);
    }
  }
  return SourceDensity(DomainKind::Sphere, std::move(verts), std::move(tris), std::move(dens));
}

}  // namespace

SourceDensity::SourceDensity(DomainKind kind, std::vector<Vec3> vertices, std::vector<std::array<int, 3>> triangles,
                             std::vector<double> vertex_density)
    : domain_(kind), vertices_(std::move(vertices)), triangles_(std::move(triangles)), density_(std::move(vertex_density)) {
  if (density_.size() != vertices_.size())
    throw Error(ErrorKind::ConfigError, "one density value per vertex required");
  for (double d : density_)
    if (!(d >= 0.0)) throw Error(ErrorKind::ConfigError, "vertex densities must be nonnegative");
}

double SourceDensity::triangle_area(size_t tri) const {
  return 0.5 * (corner(tri, 1) - corner(tri, 0)).cross(corner(tri, 2) - corner(tri, 0)).norm();
}

double SourceDensity::triangle_mass(size_t tri) const {
  return triangle_area(tri) * (corner_density(tri, 0) + corner_density(tri, 1) + corner_density(tri, 2)) / 3.0;
}

Vec3 SourceDensity::triangle_normal(size_t tri) const {
  return (corner(tri, 1) - corner(tri, 0)).cross(corner(tri, 2) - corner(tri, 0)).normalized();
}

double SourceDensity::total_mass() const {
  double m = 0.0;
  for (size_t t = 0; t < triangles_.size(); ++t) m += triangle_mass(t);
  return m;
}

double SourceDensity::total_area() const {
  double a = 0.0;
  for (size_t t = 0; t < triangles_.size(); ++t) a += triangle_area(t);
  return a;
}

double SourceDensity::density_in_triangle(size_t tri, const Vec3& x) const {
  double l0, l1, l2;
  if (!barycentric(corner(tri, 0), corner(tri, 1), corner(tri, 2), x, l0, l1, l2)) return 0.0;
  return l0 * corner_density(tri, 0) + l1 * corner_density(tri, 1) + l2 * corner_density(tri, 2);
}

std::optional<size_t> SourceDensity::locate(const Vec3& x) const {
  constexpr double tol = 1e-10;
  for (size_t t = 0; t < triangles_.size(); ++t) {
    Vec3 p = x;
    if (domain_ == DomainKind::Plane) {
      p.z() = 0.0;
    } else {
      const Vec3 n = triangle_normal(t);
      const double xn = x.dot(n);
      if (xn <= 0) continue;
      p = x * (corner(t, 0).dot(n) / xn);
    }
    double l0, l1, l2;
    if (!barycentric(corner(t, 0), corner(t, 1), corner(t, 2), p, l0, l1, l2)) continue;
    if (l0 >= -tol && l1 >= -tol && l2 >= -tol) return t;
  }
  return std::nullopt;
}

double SourceDensity::density_at(const Vec3& x) const {
  const auto t = locate(x);
  if (!t) return 0.0;
  Vec3 p = x;
  if (domain_ == DomainKind::Plane) {
    p.z() = 0.0;
  } else {
    const Vec3 n = triangle_normal(*t);
    p = x * (corner(*t, 0).dot(n) / x.dot(n));
  }
  return std::max(0.0, density_in_triangle(*t, p));
}

Vec3 SourceDensity::bbox_min() const {
  Vec3 m = Vec3::Constant(std::numeric_limits<double>::infinity());
  for (const auto& v : vertices_) m = m.cwiseMin(v);
  return m;
}

Vec3 SourceDensity::bbox_max() const {
  Vec3 m = Vec3::Constant(-std::numeric_limits<double>::infinity());
  for (const auto& v : vertices_) m = m.cwiseMax(v);
  return m;
}

void SourceDensity::normalize() {
  const double m = total_mass();
  if (!(m > 0.0)) throw Error(ErrorKind::EmptySupport, "source density integrates to zero");
  for (double& d : density_) d /= m;
}

SourceDensity build_source_density(const SourceSpec& spec) {
  if (spec.profile == DensityProfile::Image && spec.image.empty())
    throw Error(ErrorKind::ConfigError, "image density requested without an image");
  SourceDensity out = std::visit(
      [&](const auto& region) {
        using R = std::decay_t<decltype(region)>;
        if constexpr (std::is_same_v<R, RectangleRegion>)
          return build_rectangle(region, spec);
        else
          return build_cap(region, spec);
      },
      spec.region);
  out.normalize();
  return out;
}

SourceDensity blend_with_uniform(const SourceDensity& src, double t, const SourceDensity& enlarged_support) {
  if (t < 0.0 || t > 1.0) throw Error(ErrorKind::ConfigError, "blend parameter must lie in [0,1]");
  if (enlarged_support.domain() != src.domain())
    throw Error(ErrorKind::ConfigError, "blend support must live on the same domain as the source");
  const double src_mass = src.total_mass();
  if (!(src_mass > 0.0)) throw Error(ErrorKind::EmptySupport, "source density integrates to zero");
  const double uniform = 1.0 / enlarged_support.total_area();
  std::vector<double> dens(enlarged_support.vertices().size());
  for (size_t i = 0; i < dens.size(); ++i)
    dens[i] = (1.0 - t) * src.density_at(enlarged_support.vertices()[i]) / src_mass + t * uniform;
  SourceDensity out(src.domain(), enlarged_support.vertices(), enlarged_support.triangles(), std::move(dens));
  out.normalize();
  return out;
}

SourceDensity crop_to_rectangle(const SourceDensity& src, const Vec2& lo, const Vec2& hi) {
  if (src.domain() != DomainKind::Plane) throw Error(ErrorKind::ConfigError, "only planar sources can be cropped");
  if (!(lo.x() < hi.x() && lo.y() < hi.y())) throw Error(ErrorKind::ConfigError, "empty crop rectangle");
  std::vector<Vec3> vertices;
  std::vector<double> density;
  std::vector<std::array<int, 3>> triangles;
  std::map<std::array<double, 2>, int> index;
  const auto vertex = [&](const Vec3& x, double rho) {
    const std::array<double, 2> key{x.x(), x.y()};
    const auto it = index.find(key);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(vertices.size());
    vertices.emplace_back(x.x(), x.y(), 0.0);
    density.push_back(rho);
    index.emplace(key, id);
    return id;
  };
  for (size_t t = 0; t < src.triangle_count(); ++t) {
    std::vector<Vec3> poly{src.corner(t, 0), src.corner(t, 1), src.corner(t, 2)};
    // Sutherland-Hodgman against x >= lo.x, x <= hi.x, y >= lo.y, y <= hi.y.
    for (int side = 0; side < 4 && !poly.empty(); ++side) {
      const int axis = side / 2;
      const double bound = side % 2 == 0 ? lo[axis] : hi[axis];
      const double sign = side % 2 == 0 ? 1.0 : -1.0;
      const auto inside = [&](const Vec3& x) { return sign * (x[axis] - bound) >= 0.0; };
      std::vector<Vec3> next;
      for (size_t k = 0; k < poly.size(); ++k) {
        const Vec3& a = poly[k];
        const Vec3& b = poly[(k + 1) % poly.size()];
        if (inside(a)) next.push_back(a);
        if (inside(a) != inside(b)) {
          const double s = (bound - a[axis]) / (b[axis] - a[axis]);
          Vec3 x = a + s * (b - a);
          x[axis] = bound;
          next.push_back(x);
        }
      }
      poly = std::move(next);
    }
    if (poly.size() < 3) continue;
    std::vector<int> ids;
    for (const auto& x : poly) ids.push_back(vertex(x, src.density_in_triangle(t, x)));
    for (size_t k = 1; k + 1 < ids.size(); ++k) {
      const Vec3 n = (vertices[ids[k]] - vertices[ids[0]]).cross(vertices[ids[k + 1]] - vertices[ids[0]]);
      if (n.z() > 0.0) triangles.push_back({ids[0], ids[k], ids[k + 1]});
      else if (n.z() < 0.0) triangles.push_back({ids[0], ids[k + 1], ids[k]});
    }
  }
  if (triangles.empty()) throw Error(ErrorKind::EmptySupport, "crop rectangle misses the source");
  SourceDensity out(DomainKind::Plane, std::move(vertices), std::move(triangles), std::move(density));
  out.normalize();
  return out;
}

void icosphere(int level, std::vector<Vec3>& vertices, std::vector<std::array<int, 3>>& triangles) {
  const double g = (1.0 + std::sqrt(5.0)) / 2.0;
  vertices = {{-1, g, 0}, {1, g, 0}, {-1, -g, 0}, {1, -g, 0}, {0, -1, g}, {0, 1, g},
              {0, -1, -g}, {0, 1, -g}, {g, 0, -1}, {g, 0, 1}, {-g, 0, -1}, {-g, 0, 1}};
  for (auto& v : vertices) v.normalize();
  triangles = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
               {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
               {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> mid;
    const auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      const int id = static_cast<int>(vertices.size());
      vertices.push_back((vertices[a] + vertices[b]).normalized());
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(triangles.size() * 4);
    for (const auto& t : triangles) {
      const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
      next.push_back({t[0], a, c});
      next.push_back({t[1], b, a});
      next.push_back({t[2], c, b});
      next.push_back({a, b, c});
    }
    triangles = std::move(next);
  }
}

ScreenGeometry ScreenGeometry::facing(double distance, double size, bool below) {
  ScreenGeometry s;
  s.center = Vec3(0.0, 0.0, below ? -distance : distance);
  s.width = s.height = size;
  return s;
}

Vec3 ScreenGeometry::pixel_center(int row, int col, int rows, int cols) const {
  const double a = (col + 0.5) / cols - 0.5;
  const double b = 0.5 - (row + 0.5) / rows;
  return center + a * width * u_axis + b * height * v_axis;
}

Vec2 ScreenGeometry::to_pixel(const Vec3& p, int rows, int cols) const {
  const Vec3 local = p - center;
  const double a = local.dot(u_axis) / width + 0.5;
  const double b = 0.5 - local.dot(v_axis) / height;
  return {a * cols, b * rows};
}

GrayImage TargetMeasure::to_image() const {
  GrayImage img(cols, rows);
  for (size_t i = 0; i < pixels.size(); ++i) img.at(pixels[i][0], pixels[i][1]) += masses[i];
  return img;
}

void normalize_target(TargetMeasure& target) {
  TargetMeasure kept = target;
  kept.points.clear();
  kept.masses.clear();
  kept.pixels.clear();
  double total = 0.0;
  for (size_t i = 0; i < target.masses.size(); ++i) {
    if (!(target.masses[i] > 0.0)) continue;
    kept.points.push_back(target.points[i]);
    kept.masses.push_back(target.masses[i]);
    if (i < target.pixels.size()) kept.pixels.push_back(target.pixels[i]);
    total += target.masses[i];
  }
  if (kept.masses.empty()) throw Error(ErrorKind::AllBlackImage, "target has no positive mass");
  for (double& m : kept.masses) m /= total;
  target = std::move(kept);
}

TargetMeasure load_target_image(const GrayImage& image, const ScreenGeometry& screen, const TargetOptions& options) {
  TargetMeasure t;
  t.kind = options.kind;
  t.rows = image.height;
  t.cols = image.width;
  t.screen = screen;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      const double v = image.at(r, c);
      if (!(v > 0.0)) continue;
      const Vec3 p = screen.pixel_center(r, c, image.height, image.width);
      Vec3 atom = p;
      if (options.kind == TargetKind::FarField) {
        atom = p.normalized();
        if (options.admissible && !options.admissible(atom))
          throw Error(ErrorKind::HemisphereViolation,
                      "pixel (" + std::to_string(r) + "," + std::to_string(c) + ") maps outside the admissible hemisphere");
      }
      t.points.push_back(atom);
      t.masses.push_back(std::pow(v / 255.0, options.gamma));
      t.pixels.push_back({r, c});
    }
  }
  if (t.points.empty()) throw Error(ErrorKind::AllBlackImage, "every pixel of the target image is zero");
  normalize_target(t);
  return t;
}

}  // namespace caustic

#include "caustic/power_diagram.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "caustic/error.hpp"

namespace caustic {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

namespace {

using Point4 = bg::model::point<double, 4, bg::cs::cartesian>;
using RtreeValue = std::pair<Point4, int>;
using Rtree = bgi::rtree<RtreeValue, bgi::rstar<16>>;

constexpr size_t kNeighborhood = 16;

struct Piece {
  int cell = -1;
  std::vector<Vec3> vertices;
  std::vector<int> tags;
};

// Triangle data reused by clipping and integration.
struct TriangleFrame {
  std::array<Vec3, 3> corners;
  Vec3 normal;  // unit
  double rho0 = 0.0;
  Vec3 rho_grad;  // density(x) = rho0 + <rho_grad, x> on the triangle plane
};

double polygon_area(const std::vector<Vec3>& v) {
  Vec3 sum = Vec3::Zero();
  const size_t n = v.size();
  for (size_t k = 1; k + 1 < n; ++k) sum += (v[k] - v[0]).cross(v[k + 1] - v[0]);
  return 0.5 * sum.norm();
}

double polygon_perimeter(const std::vector<Vec3>& v) {
  double sum = 0.0;
  for (size_t k = 0; k < v.size(); ++k) sum += (v[(k + 1) % v.size()] - v[k]).norm();
  return sum;
}

TriangleFrame make_frame(const SourceDensity& source, size_t t) {
  TriangleFrame f;
  for (int k = 0; k < 3; ++k) f.corners[k] = source.corner(t, k);
  const Vec3 e1 = f.corners[1] - f.corners[0];
  const Vec3 e2 = f.corners[2] - f.corners[0];
  const Vec3 n = e1.cross(e2);
  const double n2 = n.squaredNorm();
  f.normal = n / std::sqrt(n2);
  const double r0 = source.corner_density(t, 0);
  const double r1 = source.corner_density(t, 1);
  const double r2 = source.corner_density(t, 2);
  f.rho_grad = ((r1 - r0) * e2.cross(n) + (r2 - r0) * n.cross(e1)) / n2;
  f.rho0 = r0 - f.rho_grad.dot(f.corners[0]);
  return f;
}

double fan_mass(const std::vector<Vec3>& v, const TriangleFrame& f) {
  double mass = 0.0;
  for (size_t k = 1; k + 1 < v.size(); ++k) {
    const double area = 0.5 * (v[k] - v[0]).cross(v[k + 1] - v[0]).dot(f.normal);
    const Vec3 centroid = (v[0] + v[k] + v[k + 1]) / 3.0;
    mass += area * (f.rho0 + f.rho_grad.dot(centroid));
  }
  return mass;
}

Vec3 fan_moment(const std::vector<Vec3>& v, const TriangleFrame& f) {
  // Integral of rho(x) x over a triangle: A/12 [(sum rho)(sum v) + sum rho_a v_a].
  Vec3 moment = Vec3::Zero();
  for (size_t k = 1; k + 1 < v.size(); ++k) {
    const std::array<Vec3, 3> tri{v[0], v[k], v[k + 1]};
    const double area = 0.5 * (tri[1] - tri[0]).cross(tri[2] - tri[0]).dot(f.normal);
    double rho_sum = 0.0;
    Vec3 v_sum = Vec3::Zero(), weighted = Vec3::Zero();
    for (const auto& a : tri) {
      const double r = f.rho0 + f.rho_grad.dot(a);
      rho_sum += r;
      v_sum += a;
      weighted += r * a;
    }
    moment += area / 12.0 * (rho_sum * v_sum + weighted);
  }
  return moment;
}

class Engine {
 public:
  Engine(std::vector<Vec3> p, std::vector<double> c, const SourceDensity& source)
      : p_(std::move(p)), c_(std::move(c)), source_(source) {
    const Vec3 lo = source.bbox_min(), hi = source.bbox_max();
    eps_ = 1e-12 * std::max((hi - lo).norm(), 1e-300);
    build_lifting();
  }

  size_t size() const { return p_.size(); }
  const Vec3& p(int i) const { return p_[i]; }
  double c(int i) const { return c_[i]; }

  // Convex pieces of all cells meeting triangle t, in discovery order.
  void process_triangle(size_t t, const TriangleFrame& frame, std::vector<Piece>& out) {
    out.clear();
    const Vec3 centroid = (frame.corners[0] + frame.corners[1] + frame.corners[2]) / 3.0;
    const int seed = nearest_site(centroid);
    std::vector<int> queue{seed};
    std::unordered_set<int> seen{seed};
    for (size_t head = 0; head < queue.size(); ++head) {
      const int i = queue[head];
      Piece piece;
      piece.cell = i;
      piece.vertices.assign(frame.corners.begin(), frame.corners.end());
      piece.tags = {-1, -2, -3};
      clip_cell(i, piece);
      if (piece.vertices.size() < 3) continue;
      for (int tag : piece.tags) {
        if (tag >= 0 && seen.insert(tag).second) queue.push_back(tag);
      }
      // Zero-width pieces along a bisector that coincides with a triangle edge
      // are left out; the neighbouring triangle carries that boundary.
      if (polygon_area(piece.vertices) <= 0.5 * eps_ * polygon_perimeter(piece.vertices)) continue;
      out.push_back(std::move(piece));
    }
    (void)t;
  }

 private:
  // Translation t minimising the spread of mu c_i - |mu p_i + t|^2 in the least-squares
  // sense (a linear regression in t); falls back to `fallback` on degenerate clouds.
  Vec3 flattening_shift(double mu, const Vec3& p_bar, const Vec3& fallback) const {
    const size_t n = p_.size();
    if (n < 4) return fallback;
    double r_bar = 0.0;
    std::vector<double> r(n);
    for (size_t i = 0; i < n; ++i) {
      r[i] = c_[i] - mu * p_[i].squaredNorm();
      r_bar += r[i];
    }
    r_bar /= static_cast<double>(n);
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
    Vec3 rhs = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
      const Vec3 d = p_[i] - p_bar;
      m += 4.0 * d * d.transpose();
      rhs += 2.0 * d * (r[i] - r_bar);
    }
    const double ridge = 1e-12 * std::max(m.trace(), 1e-300);
    m += ridge * Eigen::Matrix3d::Identity();
    const Vec3 sol = m.ldlt().solve(rhs);
    if (!sol.allFinite()) return fallback;
    // Directions the data do not determine keep the centering shift.
    return fallback + project_determined(m, ridge, sol - fallback);
  }

  static Vec3 project_determined(const Eigen::Matrix3d& m, double ridge, const Vec3& v) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
    Vec3 out = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      if (es.eigenvalues()[k] > 1e3 * ridge) out += es.eigenvectors().col(k).dot(v) * es.eigenvectors().col(k);
    }
    return out;
  }

  void build_lifting() {
    const size_t n = p_.size();
    Vec3 x_bar = Vec3::Zero();
    for (const auto& v : source_.vertices()) x_bar += v;
    x_bar /= static_cast<double>(std::max<size_t>(source_.vertices().size(), 1));
    double domain_radius = 0.0;
    for (const auto& v : source_.vertices()) domain_radius = std::max(domain_radius, (v - x_bar).norm());
    Vec3 p_bar = Vec3::Zero();
    for (const auto& q : p_) p_bar += q;
    p_bar /= static_cast<double>(n);
    double spread = 0.0;
    for (const auto& q : p_) spread = std::max(spread, (q - p_bar).norm());
    const double mu_fit = spread > 0.0 && domain_radius > 0.0 ? domain_radius / spread : 1.0;

    // The power cells are unchanged by p -> mu p + t, c -> mu c. Pick the map
    // that keeps the lifted heights small relative to the site cloud.
    std::vector<double> candidates{1.0};
    for (int k = -3; k <= 3; ++k) candidates.push_back(mu_fit * std::ldexp(1.0, k));
    double best_score = std::numeric_limits<double>::infinity();
    double mu = 1.0;
    Vec3 t = x_bar - p_bar;
    for (double m : candidates) {
      const Vec3 tm = flattening_shift(m, p_bar, x_bar - m * p_bar);
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (size_t i = 0; i < n; ++i) {
        const double w = m * c_[i] - (m * p_[i] + tm).squaredNorm();
        lo = std::min(lo, w);
        hi = std::max(hi, w);
      }
      const double score = spread > 0.0 ? std::sqrt(std::max(0.0, hi - lo)) / (m * spread) : 0.0;
      if (score < best_score) {
        best_score = score;
        mu = m;
        t = tm;
      }
    }

    lifted_.resize(n);
    std::vector<double> omega(n);
    double omega_min = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
      const Vec3 q = mu * p_[i] + t;
      lifted_[i] = {q.x(), q.y(), q.z(), 0.0};
      omega[i] = mu * c_[i] - q.squaredNorm();
      omega_min = std::min(omega_min, omega[i]);
    }
    std::vector<RtreeValue> values;
    values.reserve(n);
    for (size_t i = 0; i < n; ++i) {
      lifted_[i][3] = std::sqrt(std::max(0.0, omega[i] - omega_min));
      values.emplace_back(to_point(lifted_[i]), static_cast<int>(i));
    }
    rtree_ = Rtree(values.begin(), values.end());
    hoods_.assign(n, Neighborhood{});
  }

  static Point4 to_point(const std::array<double, 4>& a) {
    Point4 pt;
    bg::set<0>(pt, a[0]);
    bg::set<1>(pt, a[1]);
    bg::set<2>(pt, a[2]);
    bg::set<3>(pt, a[3]);
    return pt;
  }

  std::array<double, 4> lift_query(const Vec3& x) const { return {x.x(), x.y(), x.z(), 0.0}; }

  int nearest_site(const Vec3& x) const {
    std::vector<RtreeValue> hits;
    rtree_.query(bgi::nearest(to_point(lift_query(x)), 1), std::back_inserter(hits));
    return hits.front().second;
  }

  // Clips the triangle against cell i until every vertex is owned by i. The
  // polygon is convex, so it then equals the cell restricted to the triangle.
  void clip_cell(int i, Piece& piece) {
    const Neighborhood& hood = neighborhood(i);
    std::vector<char> valid(piece.vertices.size(), 0);
    for (int j : hood.ids) {
      if (!clip(i, j, piece, &valid)) {
        piece.vertices.clear();
        piece.tags.clear();
        return;
      }
    }
    // Sites outside the neighborhood are at lifted distance >= radius from s_i,
    // so they cannot win at a vertex closer than radius / 2.
    const double certified = 0.25 * hood.radius2;
    std::vector<int> used;
    size_t k = 0;
    while (k < piece.vertices.size()) {
      if (valid[k] || lifted_dist2(i, piece.vertices[k]) < certified) {
        valid[k++] = 1;
        continue;
      }
      const int j = nearest_site(piece.vertices[k]);
      if (j == i || beats(i, j, piece.vertices[k]) || std::find(used.begin(), used.end(), j) != used.end()) {
        valid[k++] = 1;
        continue;
      }
      used.push_back(j);
      if (!clip(i, j, piece, &valid)) {
        piece.vertices.clear();
        piece.tags.clear();
        return;
      }
      k = 0;
    }
    tag_shared_triangle_edges(i, piece);
  }

  struct Neighborhood {
    std::vector<int> ids;
    double radius2 = 0.0;  // squared lifted distance to the farthest listed site
    bool ready = false;
  };

  const Neighborhood& neighborhood(int i) {
    Neighborhood& hood = hoods_[i];
    if (hood.ready) return hood;
    const size_t n = p_.size();
    const size_t k = std::min<size_t>(kNeighborhood + 1, n);
    std::vector<RtreeValue> hits;
    rtree_.query(bgi::nearest(to_point(lifted_[i]), static_cast<unsigned>(k)), std::back_inserter(hits));
    std::vector<std::pair<double, int>> sorted;
    for (const auto& h : hits) {
      if (h.second == i) continue;
      double d = 0.0;
      for (int c = 0; c < 4; ++c) d += (lifted_[i][c] - lifted_[h.second][c]) * (lifted_[i][c] - lifted_[h.second][c]);
      sorted.emplace_back(d, h.second);
    }
    std::sort(sorted.begin(), sorted.end());
    for (const auto& e : sorted) hood.ids.push_back(e.second);
    hood.radius2 = k >= n ? std::numeric_limits<double>::infinity() : (sorted.empty() ? 0.0 : sorted.back().first);
    hood.ready = true;
    return hood;
  }

  double lifted_dist2(int i, const Vec3& x) const {
    const auto& s = lifted_[i];
    return (x.x() - s[0]) * (x.x() - s[0]) + (x.y() - s[1]) * (x.y() - s[1]) + (x.z() - s[2]) * (x.z() - s[2]) + s[3] * s[3];
  }

  // A triangle edge lying exactly on a bisector is part of the cell boundary;
  // labelling it keeps the derivative of the mass with respect to that bisector.
  void tag_shared_triangle_edges(int i, Piece& piece) const {
    const size_t n = piece.vertices.size();
    std::vector<int> clipped;
    for (int tag : piece.tags)
      if (tag >= 0) clipped.push_back(tag);
    for (size_t k = 0; k < n; ++k) {
      if (piece.tags[k] >= 0) continue;
      const Vec3& u = piece.vertices[k];
      const Vec3& w = piece.vertices[(k + 1) % n];
      std::vector<RtreeValue> hits;
      rtree_.query(bgi::nearest(to_point(lift_query(0.5 * (u + w))), 3), std::back_inserter(hits));
      std::vector<int> candidates;
      for (const auto& h : hits) candidates.push_back(h.second);
      const Neighborhood& hood = hoods_[i];
      candidates.insert(candidates.end(), hood.ids.begin(), hood.ids.end());
      for (const int j : candidates) {
        if (j == i || std::find(clipped.begin(), clipped.end(), j) != clipped.end()) continue;
        const Vec3 a = 2.0 * (p_[j] - p_[i]);
        const double a_norm = a.norm();
        if (a_norm <= 1e-13 * (p_[i].norm() + p_[j].norm()) || a_norm == 0.0) continue;
        const double b = c_[j] - c_[i];
        const double tol = eps_ * a_norm;
        if (std::abs(u.dot(a) - b) <= tol && std::abs(w.dot(a) - b) <= tol) {
          piece.tags[k] = j;
          break;
        }
      }
    }
  }

  // Whether x stays in cell i against site j up to the classification tolerance.
  bool beats(int i, int j, const Vec3& x) const {
    const Vec3 a = 2.0 * (p_[j] - p_[i]);
    const double a_norm = a.norm();
    const double g = x.dot(a) - (c_[j] - c_[i]);
    if (a_norm <= 1e-13 * (p_[i].norm() + p_[j].norm()) || a_norm == 0.0)
      return !(c_[j] < c_[i] || (c_[j] == c_[i] && j < i));
    return g <= eps_ * a_norm;
  }

  // Keeps the part of the polygon where site i beats site j; false when nothing remains.
  bool clip(int i, int j, Piece& piece, std::vector<char>* valid) const {
    const Vec3 a = 2.0 * (p_[j] - p_[i]);
    const double b = c_[j] - c_[i];
    const double a_norm = a.norm();
    const double scale = p_[i].norm() + p_[j].norm();
    if (a_norm <= 1e-13 * scale || a_norm == 0.0) {
      return !(c_[j] < c_[i] || (c_[j] == c_[i] && j < i));
    }
    const size_t n = piece.vertices.size();
    std::vector<double> d(n);
    std::vector<int> side(n);
    bool any_out = false, any_in = false;
    for (size_t k = 0; k < n; ++k) {
      d[k] = (piece.vertices[k].dot(a) - b) / a_norm;
      side[k] = d[k] > eps_ ? 1 : (d[k] < -eps_ ? -1 : 0);
      any_out = any_out || side[k] > 0;
      any_in = any_in || side[k] < 0;
    }
    if (!any_out) {
      // An edge lying on the bisector belongs to the shared boundary.
      for (size_t k = 0; k < n; ++k)
        if (side[k] == 0 && side[(k + 1) % n] == 0) piece.tags[k] = j;
      return true;
    }
    if (!any_in) return false;
    std::vector<Vec3> vertices;
    std::vector<int> tags;
    std::vector<char> flags;
    vertices.reserve(n + 1);
    tags.reserve(n + 1);
    flags.reserve(n + 1);
    for (size_t k = 0; k < n; ++k) {
      const size_t m = (k + 1) % n;
      const int orig = piece.tags[k];
      if (side[k] <= 0) {
        vertices.push_back(piece.vertices[k]);
        tags.push_back(side[m] > 0 && side[k] == 0 ? j : orig);
        flags.push_back((*valid)[k]);
        if (side[k] < 0 && side[m] > 0) {
          const double t = d[k] / (d[k] - d[m]);
          vertices.push_back(piece.vertices[k] + t * (piece.vertices[m] - piece.vertices[k]));
          tags.push_back(j);
          flags.push_back(0);
        }
      } else if (side[m] < 0) {
        const double t = d[k] / (d[k] - d[m]);
        vertices.push_back(piece.vertices[k] + t * (piece.vertices[m] - piece.vertices[k]));
        tags.push_back(orig);
        flags.push_back(0);
      }
    }
    if (vertices.size() < 3) return false;
    piece.vertices = std::move(vertices);
    piece.tags = std::move(tags);
    *valid = std::move(flags);
    return true;
  }

  std::vector<Vec3> p_;
  std::vector<double> c_;
  const SourceDensity& source_;
  std::vector<std::array<double, 4>> lifted_;
  std::vector<Neighborhood> hoods_;
  Rtree rtree_;
  double eps_ = 0.0;
};

// Mass derivatives from the motion of bisector edges: an edge between i and j
// moves with normal speed (db/dv - d<x, a>/dv) / |a| (a projected onto the
// triangle plane), and the mass i gains across it is lost by j.
class PieceDifferentiator {
 public:
  PieceDifferentiator(const OpticalModel& model, std::span<const double> psi) : model_(model), psi_(psi) {}

  template <class Emit>
  void mass_gradient(const Piece& piece, const TriangleFrame& frame, Emit&& emit) const {
    const int i = piece.cell;
    const size_t n = piece.vertices.size();
    const PowerSite si = model_.site(static_cast<size_t>(i), psi_[i]);
    for (size_t k = 0; k < n; ++k) {
      const int j = piece.tags[k];
      // Each shared edge is taken from the lower-indexed cell only, so both
      // cells see the same boundary even when the pieces near it disagree.
      if (j < i) continue;
      const Vec3& u = piece.vertices[k];
      const Vec3& w = piece.vertices[(k + 1) % n];
      const double len = (w - u).norm();
      if (!(len > 0.0)) continue;
      const PowerSite sj = model_.site(static_cast<size_t>(j), psi_[j]);
      Vec3 a = 2.0 * (sj.p - si.p);
      a -= a.dot(frame.normal) * frame.normal;
      const double a_norm = a.norm();
      if (!(a_norm > 0.0)) continue;
      const Vec3 m = 0.5 * (u + w);
      const auto rho = [&](const Vec3& x) { return frame.rho0 + frame.rho_grad.dot(x); };
      // Simpson is exact for the quadratic integrand.
      const auto integrate = [&](const Vec3& dp, double dc) {
        const auto f = [&](const Vec3& x) { return rho(x) * (dc - 2.0 * x.dot(dp)); };
        return len / 6.0 * (f(u) + 4.0 * f(m) + f(w)) / a_norm;
      };
      const double wj = integrate(sj.dp, sj.dc);
      const double wi = integrate(si.dp, si.dc);
      emit(i, j, wj);
      emit(i, i, -wi);
      emit(j, j, -wj);
      emit(j, i, wi);
    }
  }

 private:
  const OpticalModel& model_;
  std::span<const double> psi_;
};

std::vector<TriangleFrame> frames_of(const SourceDensity& source) {
  std::vector<TriangleFrame> frames;
  frames.reserve(source.triangle_count());
  for (size_t t = 0; t < source.triangle_count(); ++t) frames.push_back(make_frame(source, t));
  return frames;
}

VisibilityDiagram build_diagram(Engine& engine, const SourceDensity& source) {
  VisibilityDiagram diagram;
  diagram.cells.resize(engine.size());
  diagram.masses.assign(engine.size(), 0.0);
  std::vector<Piece> pieces;
  for (size_t t = 0; t < source.triangle_count(); ++t) {
    const TriangleFrame frame = make_frame(source, t);
    engine.process_triangle(t, frame, pieces);
    for (auto& piece : pieces) {
      diagram.masses[piece.cell] += fan_mass(piece.vertices, frame);
      for (int tag : piece.tags) {
        if (tag >= 0) diagram.adjacency.emplace_back(std::min(piece.cell, tag), std::max(piece.cell, tag));
      }
      diagram.cells[piece.cell].push_back({static_cast<int>(t), std::move(piece.vertices), std::move(piece.tags)});
    }
  }
  std::sort(diagram.adjacency.begin(), diagram.adjacency.end());
  diagram.adjacency.erase(std::unique(diagram.adjacency.begin(), diagram.adjacency.end()), diagram.adjacency.end());
  return diagram;
}

}  // namespace

double VisibilityDiagram::total_mass() const {
  double s = 0.0;
  for (double m : masses) s += m;
  return s;
}

VisibilityDiagram restricted_power_diagram(std::span<const WeightedPoint> points, const SourceDensity& source) {
  std::vector<Vec3> p;
  std::vector<double> c;
  p.reserve(points.size());
  c.reserve(points.size());
  for (const auto& w : points) {
    p.push_back(w.point);
    c.push_back(w.point.squaredNorm() + w.weight);
  }
  if (p.empty()) return {};
  Engine engine(std::move(p), std::move(c), source);
  return build_diagram(engine, source);
}

double polygon_mass(const CellPolygon& polygon, const SourceDensity& source) {
  return fan_mass(polygon.vertices, make_frame(source, static_cast<size_t>(polygon.triangle)));
}

double cell_mass(std::span<const CellPolygon> polygons, const SourceDensity& source) {
  double s = 0.0;
  for (const auto& poly : polygons) s += polygon_mass(poly, source);
  return s;
}

Vec3 cell_moment(std::span<const CellPolygon> polygons, const SourceDensity& source) {
  Vec3 s = Vec3::Zero();
  for (const auto& poly : polygons) s += fan_moment(poly.vertices, make_frame(source, static_cast<size_t>(poly.triangle)));
  return s;
}

namespace {

Engine make_engine(const OpticalModel& model, std::span<const double> psi, const SourceDensity& source) {
  std::vector<Vec3> p(model.size());
  std::vector<double> c(model.size());
  for (size_t i = 0; i < model.size(); ++i) {
    const PowerSite s = model.site(i, psi[i]);
    p[i] = s.p;
    c[i] = s.c;
  }
  return Engine(std::move(p), std::move(c), source);
}

}  // namespace

VisibilityDiagram visibility_diagram(const OpticalModel& model, std::span<const double> psi,
                                     const SourceDensity& source) {
  if (psi.size() != model.size()) throw Error(ErrorKind::DimensionMismatch, "weight vector size differs from target count");
  if (model.size() == 0) return {};
  Engine engine = make_engine(model, psi, source);
  return build_diagram(engine, source);
}

TransportState evaluate_transport(const OpticalModel& model, std::span<const double> psi_tilde,
                                  const SourceDensity& source, bool with_jacobian) {
  const size_t n = model.size();
  if (psi_tilde.size() != n) throw Error(ErrorKind::DimensionMismatch, "weight vector size differs from target count");
  TransportState state;
  state.psi = from_transport_vars(model.spec(), psi_tilde);
  state.G.assign(n, 0.0);
  state.has_jacobian = with_jacobian;
  if (n == 0) return state;
  Engine engine = make_engine(model, state.psi, source);
  PieceDifferentiator diff(model, state.psi);
  std::vector<Eigen::Triplet<double>> triplets;
  std::vector<Piece> pieces;
  for (size_t t = 0; t < source.triangle_count(); ++t) {
    const TriangleFrame frame = make_frame(source, t);
    engine.process_triangle(t, frame, pieces);
    for (const auto& piece : pieces) {
      state.G[piece.cell] += fan_mass(piece.vertices, frame);
      if (!with_jacobian) continue;
      diff.mass_gradient(piece, frame, [&](int row, int col, double g) { triplets.emplace_back(row, col, g); });
    }
  }
  if (with_jacobian) {
    state.DG.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    state.DG.setFromTriplets(triplets.begin(), triplets.end());
  }
  return state;
}

TransportState evaluate_G(const ProblemSpec& spec, std::span<const double> psi, const SourceDensity& source,
                          const TargetMeasure& targets, bool with_jacobian) {
  if (psi.size() != targets.size()) throw Error(ErrorKind::DimensionMismatch, "weight vector size differs from target count");
  const OpticalModel model(spec, targets.points);
  const auto psi_tilde = to_transport_vars(spec, psi);
  return evaluate_transport(model, psi_tilde, source, with_jacobian);
}

void write_diagram_obj(const VisibilityDiagram& diagram, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.precision(17);
  size_t base = 1;
  for (size_t i = 0; i < diagram.cells.size(); ++i) {
    if (diagram.cells[i].empty()) continue;
    out << "g cell " << i << '\n';
    for (const auto& poly : diagram.cells[i]) {
      for (const auto& v : poly.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
      const size_t n = poly.vertices.size();
      for (size_t k = 0; k < n; ++k) out << "l " << base + k << ' ' << base + (k + 1) % n << '\n';
      base += n;
    }
  }
}

void write_diagram_json(const VisibilityDiagram& diagram, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["masses"] = diagram.masses;
  nlohmann::json cells = nlohmann::json::array();
  for (size_t i = 0; i < diagram.cells.size(); ++i) {
    for (const auto& poly : diagram.cells[i]) {
      nlohmann::json verts = nlohmann::json::array();
      for (const auto& v : poly.vertices) verts.push_back({v.x(), v.y(), v.z()});
      cells.push_back({{"cell", i}, {"triangle", poly.triangle}, {"vertices", verts}, {"edge_tags", poly.edge_tags}});
    }
  }
  doc["polygons"] = cells;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace caustic

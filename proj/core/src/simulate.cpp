#include "caustic/simulate.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "caustic/error.hpp"

namespace caustic {

namespace {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;
using BPoint = bg::model::point<double, 3, bg::cs::cartesian>;
using Entry = std::pair<BPoint, int>;

BPoint bpoint(const Vec3& v) { return BPoint(v.x(), v.y(), v.z()); }

struct Ray {
  Vec3 origin;
  Vec3 dir;
};

struct Hit {
  int face = -1;
  double t = 0.0;
  double u = 0.0, v = 0.0;  // barycentric weights of corners 1 and 2
};

/// Median-split bounding volume hierarchy over the mesh faces.
class Bvh {
 public:
  explicit Bvh(const TriangleMesh& mesh) : mesh_(mesh) {
    const size_t n = mesh.faces.size();
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.resize(n);
    for (size_t f = 0; f < n; ++f) {
      const auto& t = mesh.faces[f];
      centroids_[f] = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
    }
    nodes_.reserve(2 * n / kLeaf + 2);
    build(0, n);
  }

  std::optional<Hit> intersect(const Ray& ray) const {
    const Vec3 inv = ray.dir.cwiseInverse();
    std::optional<Hit> best;
    double t_max = std::numeric_limits<double>::infinity();
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& node = nodes_[stack[--top]];
      if (!slab(node, ray.origin, inv, t_max)) continue;
      if (node.count > 0) {
        for (int k = 0; k < node.count; ++k) {
          const int f = order_[node.first + k];
          Hit h;
          if (triangle(f, ray, h) && h.t < t_max) {
            t_max = h.t;
            best = h;
          }
        }
      } else {
        stack[top++] = node.first;
        stack[top++] = node.second;
      }
    }
    return best;
  }

 private:
  static constexpr int kLeaf = 4;
  struct Node {
    Vec3 lo, hi;
    int first = 0;   // left child (inner) or first face slot (leaf)
    int second = 0;  // right child
    int count = 0;   // > 0 for leaves
  };

  int build(size_t begin, size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    Vec3 clo = lo, chi = hi;
    for (size_t k = begin; k < end; ++k) {
      const auto& t = mesh_.faces[order_[k]];
      for (int c = 0; c < 3; ++c) {
        lo = lo.cwiseMin(mesh_.vertices[t[c]]);
        hi = hi.cwiseMax(mesh_.vertices[t[c]]);
      }
      clo = clo.cwiseMin(centroids_[order_[k]]);
      chi = chi.cwiseMax(centroids_[order_[k]]);
    }
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    if (end - begin <= kLeaf) {
      nodes_[id].first = static_cast<int>(begin);
      nodes_[id].count = static_cast<int>(end - begin);
      return id;
    }
    int axis = 0;
    (chi - clo).maxCoeff(&axis);
    const size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return centroids_[a][axis] < centroids_[b][axis]; });
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].first = left;
    nodes_[id].second = right;
    return id;
  }

  static bool slab(const Node& n, const Vec3& o, const Vec3& inv, double t_max) {
    double t0 = 0.0, t1 = t_max;
    for (int a = 0; a < 3; ++a) {
      double ta = (n.lo[a] - o[a]) * inv[a];
      double tb = (n.hi[a] - o[a]) * inv[a];
      if (ta > tb) std::swap(ta, tb);
      if (std::isnan(ta) || std::isnan(tb)) {
        if (o[a] < n.lo[a] || o[a] > n.hi[a]) return false;
        continue;
      }
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb * (1.0 + 4e-16));
      if (t0 > t1) return false;
    }
    return true;
  }

  bool triangle(int f, const Ray& ray, Hit& h) const {
    const auto& t = mesh_.faces[f];
    const Vec3& a = mesh_.vertices[t[0]];
    const Vec3 e1 = mesh_.vertices[t[1]] - a, e2 = mesh_.vertices[t[2]] - a;
    const Vec3 p = ray.dir.cross(e2);
    const double det = e1.dot(p);
    if (det == 0.0) return false;
    const double inv = 1.0 / det;
    const Vec3 s = ray.origin - a;
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Vec3 q = s.cross(e1);
    const double v = ray.dir.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    const double dist = e2.dot(q) * inv;
    if (!(dist > 1e-12)) return false;
    h = {f, dist, u, v};
    return true;
  }

  const TriangleMesh& mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

/// Nearest target atom; rays landing within half the gap to the closest other
/// atom are resolved without a tree query.
class NearestAtom {
 public:
  explicit NearestAtom(const std::vector<Vec3>& points) : points_(points), radius_(points.size(), 0.0) {
    std::vector<Entry> entries;
    entries.reserve(points.size());
    for (size_t i = 0; i < points.size(); ++i) entries.emplace_back(bpoint(points[i]), static_cast<int>(i));
    tree_ = Tree(entries.begin(), entries.end());
    for (size_t i = 0; i < points.size(); ++i) {
      double r = std::numeric_limits<double>::infinity();
      for (auto it = tree_.qbegin(bgi::nearest(bpoint(points[i]), 2)); it != tree_.qend(); ++it)
        if (it->second != static_cast<int>(i)) r = (points[it->second] - points[i]).norm();
      radius_[i] = 0.5 * r;
    }
  }

  int find(const Vec3& q, int hint) const {
    if (hint >= 0 && (q - points_[hint]).norm() < radius_[hint]) return hint;
    std::vector<Entry> out;
    tree_.query(bgi::nearest(bpoint(q), 1), std::back_inserter(out));
    return out.front().second;
  }

 private:
  using Tree = bgi::rtree<Entry, bgi::rstar<16>>;
  const std::vector<Vec3>& points_;
  std::vector<double> radius_;
  Tree tree_;
};

// Rays per source triangle, proportional to mass, largest remainders first.
std::vector<std::int64_t> allocate(const SourceDensity& source, std::int64_t rays) {
  const size_t n = source.triangle_count();
  std::vector<double> share(n);
  double total = 0.0;
  for (size_t t = 0; t < n; ++t) total += share[t] = std::max(0.0, source.triangle_mass(t));
  if (!(total > 0.0)) throw Error(ErrorKind::EmptySupport, "source has no mass to emit");
  std::vector<std::int64_t> count(n);
  std::vector<std::pair<double, size_t>> rest(n);
  std::int64_t used = 0;
  for (size_t t = 0; t < n; ++t) {
    const double exact = static_cast<double>(rays) * share[t] / total;
    count[t] = static_cast<std::int64_t>(std::floor(exact));
    used += count[t];
    rest[t] = {exact - static_cast<double>(count[t]), t};
  }
  std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (size_t k = 0; used < rays; ++k, ++used) ++count[rest[k % n].second];
  return count;
}

struct Tally {
  std::vector<std::int64_t> atoms;
  std::vector<std::int64_t> screen;
  std::int64_t escaped = 0;
  std::int64_t missed = 0;
};

}  // namespace

SimulationResult trace(const TriangleMesh& mesh, const ProblemSpec& spec, const SourceDensity& source,
                       const TargetMeasure& targets, std::int64_t rays, std::uint64_t seed,
                       const TraceOptions& options) {
  if (rays < 1) throw Error(ErrorKind::ConfigError, "need at least one ray");
  if (mesh.empty()) throw Error(ErrorKind::EmptyCellMesh, "cannot trace an empty mesh");
  if (targets.size() == 0) throw Error(ErrorKind::DimensionMismatch, "target has no atoms");
  if ((spec.domain() == DomainKind::Plane) != (source.domain() == DomainKind::Plane))
    throw Error(ErrorKind::ConfigError, "source domain does not match the problem");
  for (int cell : mesh.face_cell)
    if (cell >= static_cast<int>(targets.size())) throw Error(ErrorKind::DimensionMismatch, "mesh cell index exceeds the target size");

  const bool near = targets.kind == TargetKind::NearField;
  const int rows = options.screen_rows > 0 ? options.screen_rows : (targets.rows > 0 ? targets.rows : 64);
  const int cols = options.screen_cols > 0 ? options.screen_cols : (targets.cols > 0 ? targets.cols : 64);
  const ScreenGeometry& screen = targets.screen;
  const Vec3 screen_n = screen.normal();

  const Bvh bvh(mesh);
  const NearestAtom atoms(targets.points);
  double z_low = std::numeric_limits<double>::infinity();
  for (const auto& v : mesh.vertices) z_low = std::min(z_low, v.z());
  z_low -= 1.0;

  const std::vector<std::int64_t> per_triangle = allocate(source, rays);
  const size_t ntri = source.triangle_count();
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(ntri)));
  std::vector<Tally> tallies(threads);

  const auto work = [&](int worker) {
    Tally& tally = tallies[worker];
    tally.atoms.assign(targets.size(), 0);
    if (near) tally.screen.assign(static_cast<size_t>(rows) * cols, 0);
    const size_t begin = ntri * worker / threads, end = ntri * (worker + 1) / threads;
    // R2 low-discrepancy sequence.
    const double g = 1.32471795724474602596;
    const double a1 = 1.0 / g, a2 = 1.0 / (g * g);
    for (size_t t = begin; t < end; ++t) {
      const std::int64_t want = per_triangle[t];
      if (want == 0) continue;
      std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + t);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      const double s1 = unit(rng), s2 = unit(rng);
      const Vec3 &A = source.corner(t, 0), &B = source.corner(t, 1), &C = source.corner(t, 2);
      const double rA = source.corner_density(t, 0), rB = source.corner_density(t, 1), rC = source.corner_density(t, 2);
      const double r_max = std::max({rA, rB, rC});
      const bool uniform = r_max - std::min({rA, rB, rC}) <= 1e-14 * r_max;
      std::int64_t made = 0;
      for (std::int64_t k = 1; made < want; ++k) {
        double u = std::fmod(s1 + a1 * static_cast<double>(k), 1.0);
        double v = std::fmod(s2 + a2 * static_cast<double>(k), 1.0);
        if (u + v > 1.0) {
          u = 1.0 - u;
          v = 1.0 - v;
        }
        const double accept = unit(rng);
        if (!uniform && accept * r_max > (1.0 - u - v) * rA + u * rB + v * rC) continue;
        ++made;
        const Vec3 x = A + u * (B - A) + v * (C - A);
        Ray ray;
        if (spec.is_point()) {
          ray = {Vec3::Zero(), x.normalized()};
        } else {
          ray = {Vec3(x.x(), x.y(), z_low), Vec3::UnitZ()};
        }
        const auto hit = bvh.intersect(ray);
        if (!hit) {
          ++tally.missed;
          ++tally.escaped;
          continue;
        }
        Vec3 n;
        if (options.corner_normals) {
          const auto& cn = mesh.corner_normals[hit->face];
          n = ((1.0 - hit->u - hit->v) * cn[0] + hit->u * cn[1] + hit->v * cn[2]).normalized();
        } else {
          n = mesh.face_normal(hit->face);
        }
        if (n.dot(ray.dir) > 0.0) n = -n;
        Vec3 out;
        if (spec.is_lens()) {
          const auto r = refract(ray.dir, n, spec.kappa);
          if (!r) {
            ++tally.escaped;
            continue;
          }
          out = *r;
        } else {
          out = reflect(ray.dir, n);
        }
        const int cell = mesh.face_cell[hit->face];
        if (!near) {
          ++tally.atoms[atoms.find(out, cell)];
          continue;
        }
        const Vec3 p = ray.origin + hit->t * ray.dir;
        const double den = out.dot(screen_n);
        const double s = den != 0.0 ? (screen.center - p).dot(screen_n) / den : -1.0;
        if (!(s > 0.0)) {
          ++tally.escaped;
          continue;
        }
        const Vec3 q = p + s * out;
        const Vec2 px = screen.to_pixel(q, rows, cols);
        if (!(px.x() >= 0.0 && px.x() < cols && px.y() >= 0.0 && px.y() < rows)) {
          ++tally.escaped;
          continue;
        }
        ++tally.screen[static_cast<size_t>(px.y()) * cols + static_cast<size_t>(px.x())];
        ++tally.atoms[atoms.find(q, cell)];
      }
    }
  };

  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }

  SimulationResult result;
  result.kind = targets.kind;
  result.ray_count = rays;
  result.counts.assign(targets.size(), 0);
  if (near) result.screen_image = GrayImage(cols, rows);
  for (const auto& tally : tallies) {
    for (size_t i = 0; i < targets.size(); ++i) result.counts[i] += tally.atoms[i];
    for (size_t k = 0; k < tally.screen.size(); ++k) result.screen_image.pixels[k] += static_cast<double>(tally.screen[k]);
    result.escaped_rays += tally.escaped;
    result.missed_mesh += tally.missed;
  }
  if (2 * result.missed_mesh > rays)
    throw Error(ErrorKind::NoIntersectionMesh,
                std::to_string(result.missed_mesh) + " of " + std::to_string(rays) + " rays missed the mesh");
  result.histogram.resize(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) result.histogram[i] = static_cast<double>(result.counts[i]) / static_cast<double>(rays);
  result.tv_distance = compare(result, targets);
  return result;
}

double compare(const SimulationResult& result, const TargetMeasure& targets) {
  if (result.histogram.size() != targets.masses.size())
    throw Error(ErrorKind::DimensionMismatch, "histogram has " + std::to_string(result.histogram.size()) +
                                                  " bins but the target has " + std::to_string(targets.masses.size()) + " atoms");
  double tv = 0.0;
  for (size_t i = 0; i < targets.masses.size(); ++i) tv += std::abs(result.histogram[i] - targets.masses[i]);
  return 0.5 * tv;
}

namespace {

GrayImage scaled(GrayImage img) {
  const double top = img.pixels.empty() ? 0.0 : *std::max_element(img.pixels.begin(), img.pixels.end());
  if (top > 0.0)
    for (double& p : img.pixels) p *= 255.0 / top;
  return img;
}

}  // namespace

GrayImage difference_image(const SimulationResult& result, const TargetMeasure& targets) {
  compare(result, targets);
  if (targets.pixels.size() != targets.size() || targets.rows <= 0) {
    GrayImage img(static_cast<int>(targets.size()), 1);
    for (size_t i = 0; i < targets.size(); ++i) img.pixels[i] = std::abs(result.histogram[i] - targets.masses[i]);
    return scaled(std::move(img));
  }
  GrayImage img(targets.cols, targets.rows);
  for (size_t i = 0; i < targets.size(); ++i)
    img.at(targets.pixels[i][0], targets.pixels[i][1]) = std::abs(result.histogram[i] - targets.masses[i]);
  return scaled(std::move(img));
}

GrayImage result_image(const SimulationResult& result, const TargetMeasure& targets) {
  if (!result.screen_image.empty()) return scaled(result.screen_image);
  if (targets.pixels.size() != result.histogram.size() || targets.rows <= 0) {
    GrayImage img(static_cast<int>(result.histogram.size()), 1);
    img.pixels = result.histogram;
    return scaled(std::move(img));
  }
  GrayImage img(targets.cols, targets.rows);
  for (size_t i = 0; i < result.histogram.size(); ++i) img.at(targets.pixels[i][0], targets.pixels[i][1]) += result.histogram[i];
  return scaled(std::move(img));
}

}  // namespace caustic

#include "caustic/surface.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "caustic/error.hpp"

namespace caustic {

Vec3 TriangleMesh::face_normal(size_t f) const {
  const auto& t = faces[f];
  const Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double TriangleMesh::face_area(size_t f) const {
  const auto& t = faces[f];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

namespace {

constexpr double kMinFaceArea = 1e-16;

struct CellBuilder {
  const OpticalModel& model;
  TriangleMesh& mesh;
  int cell;
  double psi;
  std::map<std::array<double, 3>, int> index;

  int vertex(const Vec3& x) {
    const std::array<double, 3> key{x.x(), x.y(), x.z()};
    const auto it = index.find(key);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(model.lift(static_cast<size_t>(cell), psi, x));
    mesh.footprints.push_back(x);
    index.emplace(key, id);
    return id;
  }

  void face(const Vec3& a, const Vec3& b, const Vec3& c) {
    std::array<int, 3> t{vertex(a), vertex(b), vertex(c)};
    const Vec3 y = model.direction(static_cast<size_t>(cell));
    std::array<Vec3, 3> normals;
    Vec3 mean = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      const Vec3& x = mesh.footprints[t[k]];
      normals[k] = normal_from_snell(model.spec(), model.incident(x), y);
      mean += normals[k];
    }
    const Vec3 g = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    if (!(0.5 * g.norm() > kMinFaceArea)) return;
    if (g.dot(mean) < 0.0) {
      std::swap(t[1], t[2]);
      std::swap(normals[1], normals[2]);
    }
    mesh.faces.push_back(t);
    mesh.corner_normals.push_back(normals);
    mesh.face_cell.push_back(cell);
  }

  void fan_triangle(const Vec3& c, const Vec3& a, const Vec3& b, int subdivision) {
    const int n = subdivision + 1;
    const auto at = [&](int i, int j) {
      return Vec3(c + (a - c) * (static_cast<double>(i) / n) + (b - c) * (static_cast<double>(j) / n));
    };
    for (int i = 0; i < n; ++i) {
      for (int j = 0; i + j < n; ++j) {
        face(at(i, j), at(i + 1, j), at(i, j + 1));
        if (i + j + 1 < n) face(at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
      }
    }
  }
};

}  // namespace

TriangleMesh build_mesh(const OpticalModel& model, std::span<const double> psi, const VisibilityDiagram& diagram,
                        const SourceDensity& source, int subdivision) {
  if (diagram.size() != model.size() || psi.size() != model.size())
    throw Error(ErrorKind::DimensionMismatch, "diagram, weights and targets differ in size");
  if (subdivision < 0) throw Error(ErrorKind::ConfigError, "subdivision must be >= 0");
  TriangleMesh mesh;
  for (size_t i = 0; i < diagram.size(); ++i) {
    if (diagram.cells[i].empty()) throw Error(ErrorKind::EmptyCellMesh, "cell " + std::to_string(i) + " is empty");
    CellBuilder builder{model, mesh, static_cast<int>(i), psi[i], {}};
    for (const auto& piece : diagram.cells[i]) {
      const size_t m = piece.vertices.size();
      if (m < 3) continue;
      Vec3 center = Vec3::Zero();
      for (const auto& v : piece.vertices) center += v;
      center /= static_cast<double>(m);
      const CellPolygon* one = &piece;
      const double mass = polygon_mass(piece, source);
      if (mass > 0.0) center = cell_moment(std::span(one, 1), source) / mass;
      for (size_t k = 0; k < m; ++k) builder.fan_triangle(center, piece.vertices[k], piece.vertices[(k + 1) % m], subdivision);
    }
  }
  if (mesh.empty()) throw Error(ErrorKind::EmptyCellMesh, "diagram produced no faces");
  return mesh;
}

void export_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  if (mesh.empty()) throw Error(ErrorKind::EmptyCellMesh, "refusing to write an empty mesh");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  for (const auto& v : mesh.vertices) std::fprintf(f, "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
  for (const auto& corner : mesh.corner_normals)
    for (const auto& n : corner) std::fprintf(f, "vn %.17g %.17g %.17g\n", n.x(), n.y(), n.z());
  int current = -1;
  for (size_t k = 0; k < mesh.faces.size(); ++k) {
    if (mesh.face_cell[k] != current) {
      current = mesh.face_cell[k];
      std::fprintf(f, "g cell_%d\n", current);
    }
    const auto& t = mesh.faces[k];
    const size_t n0 = 3 * k + 1;
    std::fprintf(f, "f %d//%zu %d//%zu %d//%zu\n", t[0] + 1, n0, t[1] + 1, n0 + 1, t[2] + 1, n0 + 2);
  }
  const bool ok = std::ferror(f) == 0;
  if (std::fclose(f) != 0 || !ok) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

namespace {

double parse_double(const std::string& token) {
  double v = 0.0;
  const auto r = std::from_chars(token.data(), token.data() + token.size(), v);
  if (r.ec != std::errc()) throw Error(ErrorKind::IoError, "bad number '" + token + "' in OBJ");
  return v;
}

}  // namespace

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  TriangleMesh mesh;
  std::vector<Vec3> normals;
  int cell = -1;
  std::string line, tag, a, b, c;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    if (!(ss >> tag)) continue;
    if (tag == "v" || tag == "vn") {
      ss >> a >> b >> c;
      const Vec3 p(parse_double(a), parse_double(b), parse_double(c));
      (tag == "v" ? mesh.vertices : normals).push_back(p);
    } else if (tag == "g") {
      ss >> a;
      cell = a.rfind("cell_", 0) == 0 ? std::stoi(a.substr(5)) : -1;
    } else if (tag == "f") {
      std::array<int, 3> t{};
      std::array<Vec3, 3> n;
      for (int k = 0; k < 3; ++k) {
        if (!(ss >> a)) throw Error(ErrorKind::IoError, "only triangular faces are supported");
        const auto slash = a.find('/');
        t[k] = std::stoi(a.substr(0, slash)) - 1;
        const auto last = a.rfind('/');
        if (slash != std::string::npos && last + 1 < a.size()) {
          const int ni = std::stoi(a.substr(last + 1)) - 1;
          if (ni < 0 || static_cast<size_t>(ni) >= normals.size()) throw Error(ErrorKind::IoError, "normal index out of range");
          n[k] = normals[ni];
        } else {
          n[k] = Vec3::Zero();
        }
        if (t[k] < 0 || static_cast<size_t>(t[k]) >= mesh.vertices.size())
          throw Error(ErrorKind::IoError, "vertex index out of range");
      }
      mesh.faces.push_back(t);
      mesh.corner_normals.push_back(n);
      mesh.face_cell.push_back(cell);
    }
  }
  // Faces without explicit normals fall back to the geometric one.
  for (size_t k = 0; k < mesh.faces.size(); ++k)
    for (auto& n : mesh.corner_normals[k])
      if (n.isZero()) n = mesh.face_normal(k);
  return mesh;
}

void export_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  const size_t nv = 3 * mesh.faces.size();
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << nv << "\nproperty double x\nproperty double y\nproperty double z\n"
      << "property double nx\nproperty double ny\nproperty double nz\n"
      << "element face " << mesh.faces.size() << "\nproperty list uchar int vertex_indices\nproperty int cell\n"
      << "end_header\n";
  const auto put = [&](const auto& value) { out.write(reinterpret_cast<const char*>(&value), sizeof(value)); };
  for (size_t k = 0; k < mesh.faces.size(); ++k) {
    for (int c = 0; c < 3; ++c) {
      const Vec3& v = mesh.vertices[mesh.faces[k][c]];
      const Vec3& n = mesh.corner_normals[k][c];
      for (int d = 0; d < 3; ++d) put(v[d]);
      for (int d = 0; d < 3; ++d) put(n[d]);
    }
  }
  for (size_t k = 0; k < mesh.faces.size(); ++k) {
    put(static_cast<unsigned char>(3));
    for (int c = 0; c < 3; ++c) put(static_cast<int>(3 * k + c));
    put(static_cast<int>(mesh.face_cell[k]));
  }
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

}  // namespace caustic

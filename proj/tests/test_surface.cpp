#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "caustic/error.hpp"
#include "caustic/surface.hpp"
#include "caustic/transport_solver.hpp"
#include "support.hpp"

using namespace caustic;

namespace {

struct Solved {
  ProblemSpec spec;
  SourceDensity source;
  TargetMeasure target;
  std::vector<double> psi;
};

Solved solve(const std::string& name, int image_size, int source_res = 8) {
  Solved s{ProblemSpec::from_name(name), {}, {}, {}};
  s.source = s.spec.is_point() ? test::cap(30.0, 4) : test::unit_square(source_res);
  s.target = load_target_image(synthetic_image("rings", image_size), ScreenGeometry::facing(2.0, 0.6, !s.spec.is_lens()));
  const OpticalModel model(s.spec, s.target.points);
  s.psi = solve_transport(model, s.source, s.target.masses).psi;
  return s;
}

double polygon_area(const std::vector<Vec3>& v) {
  Vec3 acc = Vec3::Zero();
  for (size_t k = 1; k + 1 < v.size(); ++k) acc += (v[k] - v[0]).cross(v[k + 1] - v[0]);
  return 0.5 * acc.norm();
}

std::filesystem::path scratch(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("caustic_test_surface_" + name);
}

}  // namespace

TEST_CASE("a single flat facet") {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const OpticalModel model(spec, {-Vec3::UnitZ()});
  const std::vector<double> psi{0.0};
  const SourceDensity src = test::unit_square(2);
  const TriangleMesh mesh = build_mesh(model, psi, visibility_diagram(model, psi, src), src);
  REQUIRE_FALSE(mesh.empty());
  for (const Vec3& v : mesh.vertices) CHECK(std::abs(v.z()) < 1e-15);
  for (const auto& corners : mesh.corner_normals)
    for (const Vec3& n : corners) CHECK((n + Vec3::UnitZ()).norm() < 1e-15);
  double area = 0.0;
  for (size_t f = 0; f < mesh.size(); ++f) area += mesh.face_area(f);
  CHECK(area == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("convex collimated meshes lie on the upper envelope") {
  for (const char* name : {"cs-mirror-convex", "cs-lens-convex"}) {
    CAPTURE(name);
    const Solved s = solve(name, 8);
    const OpticalModel model(s.spec, s.target.points);
    const TriangleMesh mesh = build_mesh(model, s.psi, visibility_diagram(model, s.psi, s.source), s.source);
    for (size_t f = 0; f < mesh.size(); ++f) {
      for (int k : mesh.faces[f]) {
        const Vec3& v = mesh.vertices[k];
        double best = -1e300;
        for (size_t i = 0; i < model.size(); ++i) {
          const double h = v.x() * model.slope(i).x() + v.y() * model.slope(i).y() - s.psi[i];
          CHECK(v.z() >= h - 1e-9);
          best = std::max(best, h);
        }
        CHECK(std::abs(v.z() - best) < 1e-10);
        const int c = mesh.face_cell[f];
        CHECK(std::abs(v.z() - (v.x() * model.slope(c).x() + v.y() * model.slope(c).y() - s.psi[c])) < 1e-10);
      }
    }
  }
}

TEST_CASE("vertices and normals for every variant") {
  for (const auto& name : ProblemSpec::all_names()) {
    CAPTURE(name);
    const Solved s = solve(name, 5);
    const OpticalModel model(s.spec, s.target.points);
    const VisibilityDiagram diagram = visibility_diagram(model, s.psi, s.source);
    for (int level : {0, 1}) {
      const TriangleMesh mesh = build_mesh(model, s.psi, diagram, s.source, level);
      REQUIRE(mesh.footprints.size() == mesh.vertices.size());
      int bad_normals = 0;
      for (size_t f = 0; f < mesh.size(); ++f) {
        const int c = mesh.face_cell[f];
        const Vec3& y = model.direction(c);
        for (int k = 0; k < 3; ++k) {
          const int vi = mesh.faces[f][k];
          const Vec3& x = mesh.footprints[vi];
          CHECK((mesh.vertices[vi] - model.lift(c, s.psi[c], x)).norm() < 1e-10);
          const Vec3& n = mesh.corner_normals[f][k];
          CHECK(std::abs(n.norm() - 1.0) < 1e-12);
          const Vec3 d = model.incident(x);
          if (s.spec.is_lens()) {
            const auto t = refract(d, n, s.spec.kappa);
            bad_normals += !t || (*t - y).norm() > 1e-8;
          } else {
            bad_normals += (reflect(d, n) - y).norm() > 1e-8;
          }
        }
      }
      CHECK(bad_normals == 0);
    }
  }
}

TEST_CASE("subdivided point-source cells stay on their paraboloids") {
  const Solved s = solve("ps-mirror-intersection", 5);
  const OpticalModel model(s.spec, s.target.points);
  const TriangleMesh mesh = build_mesh(model, s.psi, visibility_diagram(model, s.psi, s.source), s.source, 2);
  for (size_t f = 0; f < mesh.size(); ++f) {
    const int c = mesh.face_cell[f];
    for (int k : mesh.faces[f]) {
      const Vec3& v = mesh.vertices[k];
      const Vec3 x = v.normalized();
      const double r = s.psi[c] / (1.0 - x.dot(model.direction(c)));
      CHECK(std::abs(v.norm() - r) < 1e-12);
    }
  }
}

TEST_CASE("fans cover each cell exactly") {
  const Solved s = solve("cs-mirror-concave", 8);
  const OpticalModel model(s.spec, s.target.points);
  const VisibilityDiagram diagram = visibility_diagram(model, s.psi, s.source);
  const TriangleMesh mesh = build_mesh(model, s.psi, diagram, s.source, 1);
  std::vector<double> fan(model.size(), 0.0), cell(model.size(), 0.0);
  for (size_t f = 0; f < mesh.size(); ++f) {
    const auto& t = mesh.faces[f];
    fan[mesh.face_cell[f]] += polygon_area({mesh.footprints[t[0]], mesh.footprints[t[1]], mesh.footprints[t[2]]});
  }
  for (size_t i = 0; i < model.size(); ++i)
    for (const CellPolygon& p : diagram.cells[i]) cell[i] += polygon_area(p.vertices);
  for (size_t i = 0; i < model.size(); ++i) CHECK(std::abs(fan[i] - cell[i]) < 1e-9);
}

TEST_CASE("empty cells cannot be meshed") {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const TargetMeasure t = load_target_image(synthetic_image("uniform", 3), ScreenGeometry::facing(2.0, 0.6, true));
  const SourceDensity src = test::unit_square(6);
  const OpticalModel model(spec, t.points);
  auto psi = fitted_initial_weights(spec, t.points, src);
  psi[4] += 5.0;
  try {
    build_mesh(model, psi, visibility_diagram(model, psi, src), src);
    FAIL("expected EmptyCellMesh");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyCellMesh);
  }
}

TEST_CASE("OBJ export of one triangle") {
  TriangleMesh mesh;
  mesh.vertices = {Vec3(0.0, 0.0, 0.0), Vec3(1.0, 0.0, 0.1), Vec3(0.0, 1.0, 1.0 / 3.0)};
  mesh.faces = {{0, 1, 2}};
  const Vec3 n = Vec3(0.1, 0.2, -1.0).normalized();
  mesh.corner_normals = {{n, n, n}};
  mesh.face_cell = {0};
  const auto path = scratch("one.obj");
  export_obj(mesh, path);
  std::ifstream in(path);
  int v = 0, vn = 0, f = 0;
  std::string line;
  while (std::getline(in, line)) {
    v += line.rfind("v ", 0) == 0;
    vn += line.rfind("vn ", 0) == 0;
    f += line.rfind("f ", 0) == 0;
  }
  CHECK(v == 3);
  CHECK(vn >= 1);
  CHECK(vn <= 3);
  CHECK(f == 1);
  std::filesystem::remove(path);
}

TEST_CASE("OBJ round trip is bit exact and solved meshes have no degenerate faces") {
  const Solved s = solve("cs-lens-convex", 32, 16);
  const OpticalModel model(s.spec, s.target.points);
  const TriangleMesh mesh = build_mesh(model, s.psi, visibility_diagram(model, s.psi, s.source), s.source);
  for (size_t f = 0; f < mesh.size(); ++f) CHECK(mesh.face_area(f) > 1e-16);

  const auto path = scratch("lens.obj");
  export_obj(mesh, path);
  const TriangleMesh back = read_obj(path);
  CHECK(back.vertices == mesh.vertices);
  CHECK(back.faces == mesh.faces);
  CHECK(back.face_cell == mesh.face_cell);
  REQUIRE(back.corner_normals.size() == mesh.corner_normals.size());
  for (size_t f = 0; f < mesh.size(); ++f)
    for (int k = 0; k < 3; ++k) CHECK(back.corner_normals[f][k] == mesh.corner_normals[f][k]);

  // Same input, same bytes.
  const auto again = scratch("lens2.obj");
  export_obj(mesh, again);
  std::ifstream a(path), b(again);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  std::filesystem::remove(path);
  std::filesystem::remove(again);

  const auto ply = scratch("lens.ply");
  export_ply(mesh, ply);
  std::ifstream p(ply, std::ios::binary);
  std::string header;
  std::getline(p, header);
  CHECK(header == "ply");
  std::filesystem::remove(ply);
}

TEST_CASE("malformed OBJ files are rejected") {
  const auto path = scratch("bad.obj");
  {
    std::ofstream out(path);
    out << "v 0 0 0\nf 1 2 3\n";
  }
  CHECK_THROWS_AS(read_obj(path), Error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_obj(scratch("missing.obj")), Error);
}

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Pass criterion ids as arguments to run a subset.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "caustic/error.hpp"
#include "caustic/nearfield.hpp"
#include "caustic/simulate.hpp"
#include "caustic/transport_solver.hpp"
#include "support.hpp"

using namespace caustic;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

SourceDensity default_source(const ProblemSpec& spec) {
  SourceSpec s;
  if (spec.is_point())
    s.region = CapRegion{};
  else
    s.region = RectangleRegion{};
  return build_source_density(s);
}

TargetMeasure far_target(const ProblemSpec& spec, const GrayImage& img) {
  TargetOptions opt;
  opt.admissible = [&](const Vec3& y) { return spec.admissible_direction(y); };
  return load_target_image(img, ScreenGeometry::facing(2.0, 0.6, !spec.is_lens()), opt);
}

std::vector<double> random_transport(const ProblemSpec& spec, const std::vector<Vec3>& dirs, const SourceDensity& src,
                                     std::mt19937_64& rng) {
  auto psi_t = to_transport_vars(spec, initial_weights(spec, dirs, src));
  const double amp = spec.is_point() ? 0.02 : 2e-4;
  std::uniform_real_distribution<double> u(-amp, amp);
  for (double& v : psi_t) v += u(rng);
  renormalize_transport(spec, psi_t);
  return psi_t;
}

SourceDensity source_for(const ProblemSpec& spec) { return spec.is_point() ? test::cap(30.0, 4) : test::unit_square(4); }

std::vector<double> area_cdf(const SourceDensity& src) {
  std::vector<double> cdf;
  double s = 0.0;
  for (size_t t = 0; t < src.triangle_count(); ++t) cdf.push_back(s += src.triangle_area(t));
  return cdf;
}

// Uniform point on the chordal triangulation; the cell predicate is radial for caps.
Vec3 sample_domain(const SourceDensity& src, std::mt19937_64& rng, const std::vector<double>& cdf) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const size_t t = std::upper_bound(cdf.begin(), cdf.end(), u(rng) * cdf.back()) - cdf.begin();
  double a = u(rng), b = u(rng);
  if (a + b > 1.0) {
    a = 1.0 - a;
    b = 1.0 - b;
  }
  return src.corner(t, 0) + a * (src.corner(t, 1) - src.corner(t, 0)) + b * (src.corner(t, 2) - src.corner(t, 0));
}

Outcome uniform_all_variants() {
  GrayImage img(32, 32, 255.0);
  bool ok = true;
  int worst_iters = 0;
  double worst_res = 0.0, worst_time = 0.0;
  std::string failed;
  for (const auto& name : ProblemSpec::all_names()) {
    const auto spec = ProblemSpec::from_name(name);
    const TargetMeasure t = far_target(spec, img);
    const SourceDensity src = default_source(spec);
    const OpticalModel model(spec, t.points);
    const auto t0 = std::chrono::steady_clock::now();
    SolveReport r;
    try {
      r = solve_transport(model, src, t.masses);
    } catch (const Error& e) {
      ok = false;
      failed += " " + name + "(" + e.what() + ")";
      continue;
    }
    const double secs = seconds_since(t0);
    const bool pass = r.converged && r.final_residual <= 1e-8 && r.iterations <= 50 && secs < 60.0;
    if (!pass) failed += " " + name;
    ok = ok && pass;
    worst_iters = std::max(worst_iters, r.iterations);
    worst_res = std::max(worst_res, r.final_residual);
    worst_time = std::max(worst_time, secs);
  }
  return {ok, fmt("8 variants, max iterations %d, max residual %.2e, max time %.1fs%s", worst_iters, worst_res, worst_time,
                  failed.empty() ? "" : (" failed:" + failed).c_str())};
}

Outcome rings_128() {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const TargetMeasure t = far_target(spec, synthetic_image("rings", 128));
  const SourceDensity src = default_source(spec);
  const OpticalModel model(spec, t.points);
  const SolveReport r = solve_transport(model, src, t.masses);
  return {r.converged && r.final_residual <= 1e-8 && r.iterations <= 30,
          fmt("N=%zu, %d Newton iterations, residual %.2e, %.1fs", t.size(), r.iterations, r.final_residual, r.wall_seconds)};
}

Outcome nearfield_contraction() {
  const auto spec = ProblemSpec::from_name("cs-mirror-concave");
  TargetOptions opt;
  opt.kind = TargetKind::NearField;
  const TargetMeasure t = load_target_image(GrayImage(64, 64, 255.0), ScreenGeometry::facing(1.0, 0.3, true), opt);
  NearFieldConfig cfg;
  cfg.eta_nf = 0.0;
  cfg.max_outer = 6;
  const NearFieldResult r = solve_nearfield(spec, test::unit_square(8), t, cfg);
  std::string hist;
  for (const auto& h : r.history) hist += fmt(" %.1e", h.mean_displacement);
  const double d = r.final_displacement();
  return {r.history.size() == 6 && d <= 1e-5,
          fmt("displacement after %zu outer iterations %.2e (target 1e-6, accepted 1e-5); history%s", r.history.size(), d,
              hist.c_str())};
}

Outcome monte_carlo_masses() {
  const int n = 64, samples = 1000000;
  bool ok = true;
  double worst_fraction = 1.0;
  std::string per;
  for (const auto& name : ProblemSpec::all_names()) {
    const auto spec = ProblemSpec::from_name(name);
    std::mt19937_64 rng(101);
    const auto dirs = test::directions_for(spec, rng, n);
    const SourceDensity src = source_for(spec);
    const OpticalModel model(spec, dirs);
    const auto cdf = area_cdf(src);
    int within = 0, cells = 0;
    for (int trial = 0; trial < 3; ++trial) {
      const auto psi_t = random_transport(spec, dirs, src, rng);
      const auto psi = from_transport_vars(spec, psi_t);
      const auto G = evaluate_transport(model, psi_t, src, false).G;
      std::vector<double> hits(n, 0.0);
      for (int s = 0; s < samples; ++s) hits[model.cell(psi, sample_domain(src, rng, cdf))] += 1.0;
      for (int i = 0; i < n; ++i) {
        within += std::abs(hits[i] / samples - G[i]) <= 3.0 * std::sqrt(G[i] / samples);
        ++cells;
      }
    }
    const double fraction = static_cast<double>(within) / cells;
    worst_fraction = std::min(worst_fraction, fraction);
    ok = ok && fraction >= 0.99;
    per += fmt(" %d/%d", within, cells);
  }
  return {ok, fmt("worst fraction of cells within 3 sigma %.4f; per variant%s", worst_fraction, per.c_str())};
}

Outcome finite_difference_jacobian() {
  const int n = 32;
  const double h = 1e-6;
  double worst = 0.0;
  for (const auto& name : ProblemSpec::all_names()) {
    const auto spec = ProblemSpec::from_name(name);
    std::mt19937_64 rng(202);
    const auto dirs = test::directions_for(spec, rng, n);
    const SourceDensity src = source_for(spec);
    const OpticalModel model(spec, dirs);
    for (int trial = 0; trial < 5; ++trial) {
      const auto psi_t = random_transport(spec, dirs, src, rng);
      const Eigen::MatrixXd dg(evaluate_transport(model, psi_t, src).DG);
      for (int j = 0; j < n; ++j) {
        auto p = psi_t, m = psi_t;
        p[j] += h;
        m[j] -= h;
        const auto gp = evaluate_transport(model, p, src, false).G;
        const auto gm = evaluate_transport(model, m, src, false).G;
        for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs((gp[i] - gm[i]) / (2 * h) - dg(i, j)));
      }
    }
  }
  return {worst <= 1e-5, fmt("max |DG - central difference| %.2e over 8 variants x 5 weights", worst)};
}

Outcome invariants() {
  double mass = 0.0, sym = 0.0, rows = 0.0, shift = 0.0;
  for (const auto& name : ProblemSpec::all_names()) {
    const auto spec = ProblemSpec::from_name(name);
    std::mt19937_64 rng(303);
    const auto dirs = test::directions_for(spec, rng, 40);
    const SourceDensity src = source_for(spec);
    const OpticalModel model(spec, dirs);
    for (int trial = 0; trial < 20; ++trial) {
      const auto psi_t = random_transport(spec, dirs, src, rng);
      const auto st = evaluate_transport(model, psi_t, src);
      double total = 0.0;
      for (double g : st.G) total += g;
      mass = std::max(mass, std::abs(total - 1.0));
      const Eigen::MatrixXd dg(st.DG);
      const double scale = std::max(1.0, dg.cwiseAbs().maxCoeff());
      sym = std::max(sym, (dg - dg.transpose()).cwiseAbs().maxCoeff() / scale);
      rows = std::max(rows, dg.rowwise().sum().cwiseAbs().maxCoeff());
      // Collimated weights shift, point-source weights scale (a shift of log weights).
      auto moved = psi_t;
      const double c = spec.is_point() ? std::log(0.5 + trial * 0.1) : 0.05 * (trial - 10);
      for (double& v : moved) v += c;
      const auto g1 = evaluate_transport(model, moved, src, false).G;
      for (size_t i = 0; i < g1.size(); ++i) shift = std::max(shift, std::abs(g1[i] - st.G[i]));
    }
  }
  return {mass <= 1e-9 && sym <= 1e-8 && rows <= 1e-8 && shift <= 1e-10,
          fmt("|sum G - 1| %.1e, DG asymmetry (relative) %.1e, row sums %.1e, shift/scale change %.1e", mass, sym, rows,
              shift)};
}

double trace_tv(const ProblemSpec& spec, int subdivision, std::int64_t rays) {
  const TargetMeasure t = far_target(spec, GrayImage(32, 32, 255.0));
  const SourceDensity src = default_source(spec);
  const OpticalModel model(spec, t.points);
  const auto psi = solve_transport(model, src, t.masses).psi;
  const TriangleMesh mesh = build_mesh(model, psi, visibility_diagram(model, psi, src), src, subdivision);
  return trace(mesh, spec, src, t, rays, 7).tv_distance;
}

Outcome ray_traced_tv() {
  const std::int64_t rays = 10000000;
  bool ok = true;
  std::string out;
  for (const char* name : {"cs-mirror-convex", "cs-lens-convex"}) {
    const double tv = trace_tv(ProblemSpec::from_name(name), 0, rays);
    ok = ok && tv <= 0.02;
    out += fmt("%s %.4f; ", name, tv);
  }
  for (const char* name : {"ps-mirror-intersection", "ps-lens-intersection"}) {
    const auto spec = ProblemSpec::from_name(name);
    const TargetMeasure t = far_target(spec, GrayImage(32, 32, 255.0));
    const SourceDensity src = default_source(spec);
    const OpticalModel model(spec, t.points);
    const auto psi = solve_transport(model, src, t.masses).psi;
    const VisibilityDiagram diagram = visibility_diagram(model, psi, src);
    std::vector<double> tv;
    for (int level : {4, 5, 6}) tv.push_back(trace(build_mesh(model, psi, diagram, src, level), spec, src, t, rays, 7).tv_distance);
    ok = ok && tv[1] <= 0.08 && tv[1] < tv[0] && tv[2] < tv[1];
    out += fmt("%s levels 4/5/6 %.4f/%.4f/%.4f; ", name, tv[0], tv[1], tv[2]);
  }
  out += fmt("%lld rays each", static_cast<long long>(rays));
  return {ok, out};
}

// Integer (dx, dy) maximising the correlation of zero-mean images b against a.
std::pair<int, int> correlation_peak(const GrayImage& a, const GrayImage& b, int reach) {
  auto centered = [](const GrayImage& g) {
    std::vector<double> v = g.pixels;
    double m = 0.0;
    for (double p : v) m += p;
    m /= static_cast<double>(v.size());
    for (double& p : v) p -= m;
    return v;
  };
  const auto va = centered(a), vb = centered(b);
  double best = -1e300;
  std::pair<int, int> at{0, 0};
  for (int dy = -reach; dy <= reach; ++dy)
    for (int dx = -reach; dx <= reach; ++dx) {
      double s = 0.0;
      for (int r = 0; r < a.height; ++r)
        for (int c = 0; c < a.width; ++c) {
          const int rr = r + dy, cc = c + dx;
          if (rr < 0 || cc < 0 || rr >= b.height || cc >= b.width) continue;
          s += va[r * a.width + c] * vb[rr * b.width + cc];
        }
      if (s > best) {
        best = s;
        at = {dx, dy};
      }
    }
  return at;
}

Outcome pillow_superposition() {
  const auto spec = ProblemSpec::from_name("cs-mirror-concave");
  const int px = 32;
  const double screen = 0.96, width = 0.9;
  TargetOptions opt;
  opt.kind = TargetKind::NearField;
  const TargetMeasure t = load_target_image(synthetic_image("gaussian", px), ScreenGeometry::facing(1.0, screen, true), opt);
  SourceSpec s;
  s.region = RectangleRegion{{0.0, 0.0}, width, width / 3.0, 12};
  const SourceDensity src = build_source_density(s);
  const double pitch_px = (width / 3.0) / (screen / px);

  auto offsets = [&](int max_outer) {
    NearFieldConfig cfg;
    cfg.max_outer = max_outer;
    const auto pillows = solve_pillows(spec, src, 3, 1, t, cfg);
    std::vector<GrayImage> images;
    for (const Pillow& p : pillows) images.push_back(trace(p.mesh, spec, p.source, t, 400000, 11).screen_image);
    return std::vector<std::pair<int, int>>{correlation_peak(images[0], images[1], px / 2),
                                            correlation_peak(images[1], images[2], px / 2)};
  };
  const auto ff = offsets(1), nf = offsets(6);
  bool ok = true;
  for (const auto& [dx, dy] : ff) ok = ok && std::abs(std::abs(dx) - pitch_px) <= 1.0 && std::abs(dy) <= 1;
  for (const auto& [dx, dy] : nf) ok = ok && std::abs(dx) <= 1 && std::abs(dy) <= 1;
  return {ok, fmt("pitch %.1f px; far-field offsets (%d,%d) (%d,%d); near-field offsets (%d,%d) (%d,%d)", pitch_px,
                  ff[0].first, ff[0].second, ff[1].first, ff[1].second, nf[0].first, nf[0].second, nf[1].first,
                  nf[1].second)};
}

Outcome snell_round_trips() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double pi = 3.14159265358979323846;
  auto around = [&](const Vec3& axis, double max_angle) {
    const Vec3 a = axis.unitOrthogonal(), b = axis.cross(a);
    const double th = max_angle * std::sqrt(u(rng)), ph = 2.0 * pi * u(rng);
    return (std::cos(th) * axis + std::sin(th) * (std::cos(ph) * a + std::sin(ph) * b)).normalized();
  };
  double worst = 0.0;
  int cases = 0;
  for (const auto& name : ProblemSpec::all_names()) {
    for (double kappa : {1.3, 1.5, 1.9}) {
      const auto spec = ProblemSpec::from_name(name, kappa);
      for (int k = 0; k < 1000; ++k, ++cases) {
        const Vec3 d = spec.is_point() ? around(Vec3::UnitZ(), 0.5) : Vec3::UnitZ();
        Vec3 y = spec.is_lens() ? around(d, 0.95 * std::acos(1.0 / kappa)) : around(-d, 1.2);
        if (!spec.is_point() && !spec.admissible_direction(y)) y = spec.is_lens() ? d : -d;
        const Vec3 n = normal_from_snell(spec, d, y);
        const Vec3 out = spec.is_lens() ? refract(d, n, kappa).value_or(Vec3::Zero()) : reflect(d, n);
        worst = std::max(worst, (out - y).norm());
        if (!spec.is_point() && (!spec.is_lens() || kappa * y.z() > 1.0 + 1e-6)) {
          const Vec2 p = facet_slope(spec, y);
          Vec3 m = Vec3(p.x(), p.y(), -1.0).normalized();
          const Vec3 back = spec.is_lens() ? refract(d, m, kappa).value_or(Vec3::Zero()) : reflect(d, m);
          worst = std::max(worst, (back - y).norm());
        }
      }
    }
  }
  // Total internal reflection switches on exactly at sin(theta) = 1 / kappa.
  bool tir = true;
  const Vec3 n(0.0, 0.0, -1.0);
  for (double kappa : {1.3, 1.5, 1.9}) {
    for (double rel : {1e-12, 1e-9, 1e-6}) {
      const double below = (1.0 - rel) / kappa, above = (1.0 + rel) / kappa;
      const Vec3 db(below, 0.0, std::sqrt(1.0 - below * below)), da(above, 0.0, std::sqrt(1.0 - above * above));
      tir = tir && refract(db, n, kappa).has_value() && !refract(da, n, kappa).has_value();
    }
  }
  return {worst <= 1e-10 && tir, fmt("%d round trips, max error %.1e; TIR threshold %s", cases, worst, tir ? "exact" : "wrong")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "32x32 uniform target solves for all variants", uniform_all_variants},
      {2, "128x128 rings target, collimated convex mirror", rings_128},
      {3, "near-field fixed point contracts at distance 1", nearfield_contraction},
      {4, "cell masses agree with Monte Carlo", monte_carlo_masses},
      {5, "Jacobian agrees with central differences", finite_difference_jacobian},
      {6, "mass, symmetry, row-sum and weight invariances", invariants},
      {7, "ray-traced total variation", ray_traced_tv},
      {8, "pillow images superimpose only with near-field correction", pillow_superposition},
      {9, "Snell round trips and critical angle", snell_round_trips},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d: %s | %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.title.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}

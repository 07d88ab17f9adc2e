#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <numeric>
#include <random>

#include "caustic/error.hpp"
#include "caustic/transport_solver.hpp"
#include "support.hpp"

using namespace caustic;

namespace {

TargetMeasure far_target(const ProblemSpec& spec, const GrayImage& img) {
  return load_target_image(img, ScreenGeometry::facing(2.0, 0.6, !spec.is_lens()));
}

Eigen::VectorXd dense_direction(const Eigen::MatrixXd& DG, const Eigen::VectorXd& r) {
  const Eigen::MatrixXd pinv = DG.completeOrthogonalDecomposition().pseudoInverse();
  Eigen::VectorXd d = -pinv * r;
  d.array() -= d.mean();
  return d;
}

TransportState state_from(const Eigen::MatrixXd& DG, const std::vector<double>& G) {
  TransportState s;
  s.G = G;
  s.DG = DG.sparseView();
  s.has_jacobian = true;
  return s;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::ConfigError;
}

}  // namespace

TEST_CASE("a single target is already solved") {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const OpticalModel model(spec, {-Vec3::UnitZ()});
  const std::vector<double> sigma{1.0};
  const SolveReport r = solve_transport(model, test::unit_square(2), sigma);
  CHECK(r.converged);
  CHECK(r.iterations == 0);
  CHECK(r.final_residual < 1e-12);
}

TEST_CASE("newton direction on a two-cell system") {
  const double a = 0.7, r = 0.03;
  Eigen::MatrixXd DG(2, 2);
  DG << -a, a, a, -a;
  const std::vector<double> sigma{0.5, 0.5};
  const TransportState s = state_from(DG, {0.5 + r, 0.5 - r});
  const Eigen::VectorXd d = newton_direction(s, sigma);
  CHECK(d[0] == doctest::Approx(r / (2 * a)).epsilon(1e-12));
  CHECK(d[1] == doctest::Approx(-r / (2 * a)).epsilon(1e-12));
  Eigen::VectorXd res(2);
  res << r, -r;
  CHECK((d - dense_direction(DG, res)).norm() < 1e-12);

  const TransportState solved = state_from(DG, {0.5, 0.5});
  CHECK(newton_direction(solved, sigma).norm() == 0.0);
}

TEST_CASE("newton direction matches a dense pseudo-inverse") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> w(0.1, 2.0), u(-1.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 49);
  const int n = 50;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    auto connect = [&](int i, int j) {
      if (i == j) return;
      const double v = w(rng);
      L(i, j) -= v;
      L(j, i) -= v;
      L(i, i) += v;
      L(j, j) += v;
    };
    for (int i = 1; i < n; ++i) connect(i - 1, i);
    for (int k = 0; k < 100; ++k) connect(pick(rng), pick(rng));
    const Eigen::MatrixXd DG = -L;

    std::vector<double> sigma(n), G(n);
    Eigen::VectorXd res(n);
    for (int i = 0; i < n; ++i) res[i] = 1e-3 * u(rng);
    res.array() -= res.mean();
    for (int i = 0; i < n; ++i) {
      sigma[i] = 1.0 / n + 1e-4 * (i % 7);
      G[i] = sigma[i] + res[i];
    }
    const Eigen::VectorXd d = newton_direction(state_from(DG, G), sigma);
    CHECK((d - dense_direction(DG, res)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(d.mean()) < 1e-14);
  }
}

TEST_CASE("uniform 4x4 target: masses agree with a Monte Carlo count") {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const TargetMeasure target = far_target(spec, GrayImage(4, 4, 255.0));
  const SourceDensity src = test::unit_square(8);
  const OpticalModel model(spec, target.points);
  const SolveReport r = solve_transport(model, src, target.masses);
  REQUIRE(r.converged);
  CHECK(r.final_residual <= 1e-8);

  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const int samples = 200000;
  std::vector<int> counts(16, 0);
  for (int k = 0; k < samples; ++k) ++counts[model.cell(r.psi, Vec3(u(rng), u(rng), 0.0))];
  const double p = 1.0 / 16.0, sd = std::sqrt(p * (1.0 - p) / samples);
  for (int c : counts) CHECK(std::abs(c / static_cast<double>(samples) - p) < 3.0 * sd);
}

TEST_CASE("iteration invariants: guard, residual decrease, mean, idempotence") {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const TargetMeasure target = far_target(spec, synthetic_image("rings", 12));
  const SourceDensity src = test::unit_square(8);
  const OpticalModel model(spec, target.points);
  const auto psi0 = fitted_initial_weights(spec, target.points, src);
  const SolveReport r = damped_newton(model, src, target.masses, psi0);
  REQUIRE(r.converged);
  REQUIRE(r.iterations > 0);

  double previous = r.initial_residual;
  for (const auto& rec : r.history) {
    CHECK(rec.min_G >= r.epsilon0);
    CHECK(rec.residual <= (1.0 - std::ldexp(1.0, -(rec.backtracks + 1))) * previous);
    CHECK(rec.residual < previous);
    previous = rec.residual;
  }
  CHECK(std::abs(mean(r.psi) - mean(psi0)) < 1e-10);

  const SolveReport again = damped_newton(model, src, target.masses, r.psi);
  CHECK(again.iterations == 0);
  CHECK(again.psi == r.psi);
}

TEST_CASE("point-source weights stay renormalised") {
  const auto spec = ProblemSpec::from_name("ps-mirror-intersection");
  const TargetMeasure target = far_target(spec, synthetic_image("gaussian", 6));
  const OpticalModel model(spec, target.points);
  const SolveReport r = solve_transport(model, test::cap(30.0, 4), target.masses);
  REQUIRE(r.converged);
  const auto psi_t = to_transport_vars(spec, r.psi);
  CHECK(*std::max_element(psi_t.begin(), psi_t.end()) == doctest::Approx(-1.0).epsilon(1e-12));
  for (const auto& rec : r.history) CHECK(rec.min_G >= r.epsilon0);
}

TEST_CASE("every variant solves a small target") {
  for (const auto& name : ProblemSpec::all_names()) {
    CAPTURE(name);
    const auto spec = ProblemSpec::from_name(name);
    const TargetMeasure target = far_target(spec, synthetic_image("rings", 5));
    const SourceDensity src = spec.is_point() ? test::cap(30.0, 4) : test::unit_square(6);
    const OpticalModel model(spec, target.points);
    const SolveReport r = solve_transport(model, src, target.masses);
    CHECK(r.converged);
    CHECK(r.final_residual <= 1e-8);
    const TransportState s = evaluate_transport(model, to_transport_vars(spec, r.psi), src, false);
    for (size_t i = 0; i < s.G.size(); ++i) CHECK(std::abs(s.G[i] - target.masses[i]) <= 1e-8);
  }
}

TEST_CASE("explicit blend schedule is followed after an empty initial cell") {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const TargetMeasure target = far_target(spec, synthetic_image("gaussian", 5));
  const SourceDensity src = test::unit_square(8);
  const OpticalModel model(spec, target.points);
  auto psi0 = fitted_initial_weights(spec, target.points, src);
  psi0[12] += 5.0;  // pushes the center plane below all others

  CHECK(kind_of([&] { damped_newton(model, src, target.masses, psi0); }) == ErrorKind::InitialEmptyCell);

  SolverConfig cfg;
  cfg.blend_schedule = std::vector<double>{0.5, 0.1, 0.0};
  const SolveReport r = solve_transport(model, src, target.masses, cfg, psi0);
  REQUIRE(r.converged);
  CHECK(r.blend_stages == std::vector<double>{0.5, 0.1, 0.0});
  CHECK(r.final_residual <= 1e-8);
  bool saw_blend = false;
  for (const auto& rec : r.history) saw_blend = saw_blend || rec.blend > 0.0;
  CHECK(saw_blend);
  CHECK(r.history.back().blend == 0.0);

  // Without a schedule the automatic one ends at t = 0 too.
  const SolveReport a = solve_transport(model, src, target.masses, {}, psi0);
  REQUIRE(a.converged);
  REQUIRE_FALSE(a.blend_stages.empty());
  CHECK(a.blend_stages.front() == 0.5);
  CHECK(a.blend_stages.back() == 0.0);
}

TEST_CASE("solver errors") {
  const auto spec = ProblemSpec::from_name("cs-mirror-convex");
  const TargetMeasure target = far_target(spec, synthetic_image("rings", 16));
  const SourceDensity src = test::unit_square(8);
  const OpticalModel model(spec, target.points);
  const auto psi0 = fitted_initial_weights(spec, target.points, src);

  SolverConfig one;
  one.max_newton_iters = 1;
  CHECK(kind_of([&] { damped_newton(model, src, target.masses, psi0, one); }) == ErrorKind::IterationLimit);

  SolverConfig bad;
  bad.eta = 0.0;
  CHECK(kind_of([&] { damped_newton(model, src, target.masses, psi0, bad); }) == ErrorKind::ConfigError);

  const std::vector<double> short_sigma(3, 1.0 / 3.0);
  CHECK(kind_of([&] { damped_newton(model, src, short_sigma, psi0); }) == ErrorKind::DimensionMismatch);
}

TEST_CASE("report serialises its history") {
  const auto spec = ProblemSpec::from_name("cs-lens-convex");
  const TargetMeasure target = far_target(spec, synthetic_image("rings", 6));
  const OpticalModel model(spec, target.points);
  const SolveReport r = solve_transport(model, test::unit_square(6), target.masses);
  const auto hist = r.residual_history();
  CHECK(hist.size() == static_cast<size_t>(r.iterations) + 1);
  CHECK(hist.front() == r.initial_residual);
  CHECK(hist.back() == r.final_residual);
  const std::string json = r.to_json();
  CHECK(json.find("\"iterations\"") != std::string::npos);
  CHECK(json.find("\"residual_history\"") != std::string::npos);
}

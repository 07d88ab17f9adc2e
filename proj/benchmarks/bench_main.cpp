#include <benchmark/benchmark.h>

#include <string>

#include "caustic/simulate.hpp"
#include "caustic/transport_solver.hpp"

using namespace caustic;

namespace {

struct Problem {
  ProblemSpec spec;
  SourceDensity source;
  TargetMeasure target;
  OpticalModel model;
};

Problem make(const std::string& name, int image) {
  const ProblemSpec spec = ProblemSpec::from_name(name);
  SourceSpec s;
  if (spec.is_point())
    s.region = CapRegion{};
  else
    s.region = RectangleRegion{};
  SourceDensity src = build_source_density(s);
  TargetMeasure t = load_target_image(synthetic_image("rings", image), ScreenGeometry::facing(2.0, 0.6, !spec.is_lens()));
  OpticalModel model(spec, t.points);
  return {spec, std::move(src), std::move(t), std::move(model)};
}

const char* variant(int64_t k) { return k == 0 ? "cs-mirror-convex" : "ps-mirror-intersection"; }

void BM_EvaluateTransport(benchmark::State& state) {
  const Problem p = make(variant(state.range(1)), static_cast<int>(state.range(0)));
  const auto psi_t = to_transport_vars(p.spec, initial_weights(p.spec, p.target.points, p.source));
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_transport(p.model, psi_t, p.source));
  state.counters["N"] = static_cast<double>(p.target.size());
}
BENCHMARK(BM_EvaluateTransport)->ArgsProduct({{16, 32, 64}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_Solve(benchmark::State& state) {
  const Problem p = make(variant(state.range(1)), static_cast<int>(state.range(0)));
  int iterations = 0;
  for (auto _ : state) {
    const SolveReport r = solve_transport(p.model, p.source, p.target.masses);
    iterations = r.iterations;
  }
  state.counters["newton"] = iterations;
}
BENCHMARK(BM_Solve)->ArgsProduct({{16, 32}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_BuildMesh(benchmark::State& state) {
  const Problem p = make("ps-mirror-intersection", 32);
  const auto psi = solve_transport(p.model, p.source, p.target.masses).psi;
  const VisibilityDiagram d = visibility_diagram(p.model, psi, p.source);
  for (auto _ : state) benchmark::DoNotOptimize(build_mesh(p.model, psi, d, p.source, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_BuildMesh)->DenseRange(0, 4, 2)->Unit(benchmark::kMillisecond);

void BM_Trace(benchmark::State& state) {
  const Problem p = make("cs-lens-convex", 32);
  const auto psi = solve_transport(p.model, p.source, p.target.masses).psi;
  const TriangleMesh mesh = build_mesh(p.model, psi, visibility_diagram(p.model, psi, p.source), p.source);
  const int64_t rays = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(trace(mesh, p.spec, p.source, p.target, rays, 1));
  state.SetItemsProcessed(state.iterations() * rays);
}
BENCHMARK(BM_Trace)->Arg(100000)->Arg(1000000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

#include "caustic/error.hpp"
#include "caustic/measures.hpp"
#include "caustic/nearfield.hpp"
#include "caustic/optics.hpp"
#include "caustic/transport_solver.hpp"

namespace caustic::app {

enum class Command { Solve, NearField, Simulate };

enum ExitCode : int { kSuccess = 0, kConfigError = 2, kSolverFailure = 3, kSimulationFailure = 4 };

struct SourceConfig {
  std::string region = "auto";  // auto | rectangle | cap
  double width = 1.0;
  double height = 1.0;
  int resolution = 8;
  double half_angle_deg = 30.0;
  int level = 5;
  std::string profile = "uniform";  // uniform | gaussian | image
  double gaussian_sigma = 0.0;
  std::string image;
};

struct TargetConfig {
  // Image path, or synthetic:<uniform|gaussian|rings>:<size>.
  std::string image;
  std::string kind = "far";       // far | near; the nearfield command forces near
  double screen_distance = 0.0;   // 0 picks 2.0 (far) or 1.0 (near)
  double screen_size = 0.0;       // 0 picks 0.6 (far) or 0.3 (near)
  double gamma = 1.0;
};

struct OutputConfig {
  std::string mesh;        // OBJ; pillows append _<row>_<col>
  std::string ply;
  std::string report;      // JSON
  std::string image;       // simulated histogram (simulate)
  std::string difference;  // |hist - sigma| (simulate)
  int subdivision = 0;
};

struct SimulateConfig {
  std::string mesh;  // OBJ to trace
  std::int64_t rays = 1000000;
  bool corner_normals = false;
};

struct RunConfig {
  std::string problem = "cs-mirror-convex";
  double kappa = 1.5;
  SourceConfig source;
  TargetConfig target;
  SolverConfig solver;
  double eta_nf = 1e-6;
  int max_outer = 6;
  int pillow_cols = 0;  // 0 = single component
  int pillow_rows = 0;
  OutputConfig output;
  SimulateConfig simulate;
  std::uint64_t seed = 1;
  int threads = 1;

  static RunConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
  ProblemSpec problem_spec() const;
};

RunConfig load_config(const std::filesystem::path& path);

SourceDensity make_source(const RunConfig& config);
TargetMeasure make_target(const RunConfig& config, TargetKind kind);

int exit_code(Command command, ErrorKind kind);

// Each command validates, runs, writes its outputs and returns an exit code.
// Failures are reported on stderr as a one-line JSON object {"error", "message"}.
int cmd_solve(const RunConfig& config);
int cmd_nearfield(const RunConfig& config);
int cmd_simulate(const RunConfig& config);

}  // namespace caustic::app

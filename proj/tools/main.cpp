#include <CLI11.hpp>

#include <cstring>
#include <iostream>
#include <optional>
#include <string>

#include "app.hpp"

using namespace caustic;
using namespace caustic::app;

namespace {

std::optional<std::string> find_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return std::string(argv[i + 1]);
    if (std::strncmp(argv[i], "--config=", 9) == 0) return std::string(argv[i] + 9);
  }
  return std::nullopt;
}

void config_error(const std::string& message) {
  nlohmann::json doc{{"error", "ConfigError"}, {"message", message}};
  std::cerr << doc.dump() << std::endl;
}

void common_options(CLI::App* cmd, RunConfig& c, std::string& config_path) {
  cmd->add_option("--config", config_path, "JSON run configuration; flags override its values");
  cmd->add_option("--problem", c.problem,
                  "cs-mirror-convex | cs-mirror-concave | cs-lens-convex | cs-lens-concave | ps-mirror-intersection | "
                  "ps-mirror-union | ps-lens-intersection | ps-lens-union")
      ->capture_default_str();
  cmd->add_option("--kappa", c.kappa, "refractive index ratio for lenses")->capture_default_str();
  cmd->add_option("--target", c.target.image, "target image (PGM/PNG) or synthetic:<uniform|gaussian|rings>:<size>");
  cmd->add_option("--screen-distance", c.target.screen_distance, "screen distance; 0 picks 2.0 far / 1.0 near")
      ->capture_default_str();
  cmd->add_option("--screen-size", c.target.screen_size, "screen side length; 0 picks 0.6 far / 0.3 near")
      ->capture_default_str();
  cmd->add_option("--gamma", c.target.gamma, "intensity = (pixel / 255)^gamma")->capture_default_str();
  cmd->add_option("--source-region", c.source.region, "auto | rectangle | cap")->capture_default_str();
  cmd->add_option("--source-resolution", c.source.resolution, "rectangle cells per side")->capture_default_str();
  cmd->add_option("--source-level", c.source.level, "cap icosahedron subdivision level")->capture_default_str();
  cmd->add_option("--half-angle", c.source.half_angle_deg, "cap half angle in degrees")->capture_default_str();
  cmd->add_option("--source-profile", c.source.profile, "uniform | gaussian | image")->capture_default_str();
  cmd->add_option("--source-image", c.source.image, "source density image for the image profile");
  cmd->add_option("--eta", c.solver.eta, "Newton tolerance on max |G - sigma|")->capture_default_str();
  cmd->add_option("--max-newton", c.solver.max_newton_iters, "Newton iteration cap")->capture_default_str();
  cmd->add_option("--report", c.output.report, "JSON report path");
  cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
  cmd->add_option("--threads", c.threads, "worker thread cap")->capture_default_str();
  cmd->add_flag("--verbose", c.solver.verbose, "per-iteration log on stderr");
}

void mesh_options(CLI::App* cmd, RunConfig& c) {
  cmd->add_option("--out", c.output.mesh, "OBJ output path");
  cmd->add_option("--ply", c.output.ply, "PLY output path");
  cmd->add_option("--subdivision", c.output.subdivision, "mesh subdivision per fan triangle")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig config;
  std::string config_path;
  if (auto path = find_config(argc, argv)) {
    try {
      config = load_config(*path);
    } catch (const Error& e) {
      config_error(e.what());
      return kConfigError;
    }
  }

  CLI::App app{"Caustic design: far- and near-field transport solves, mesh export and ray-traced validation"};
  app.require_subcommand(1);

  auto* solve = app.add_subcommand("solve", "far-field solve and mesh export");
  common_options(solve, config, config_path);
  mesh_options(solve, config);

  auto* nearfield = app.add_subcommand("nearfield", "near-field fixed-point solve");
  common_options(nearfield, config, config_path);
  mesh_options(nearfield, config);
  nearfield->add_option("--eta-nf", config.eta_nf, "stop when mean centroid displacement is below this")
      ->capture_default_str();
  nearfield->add_option("--max-outer", config.max_outer, "outer iteration cap")->capture_default_str();
  int pillows = 0;
  nearfield->add_option("--pillows", pillows, "split the source into k x k pillows (collimated only)");

  auto* simulate = app.add_subcommand("simulate", "trace rays through a mesh onto the target");
  common_options(simulate, config, config_path);
  simulate->add_option("--mesh", config.simulate.mesh, "OBJ to trace");
  simulate->add_option("--rays", config.simulate.rays, "number of rays")->capture_default_str();
  simulate->add_option("--image", config.output.image, "histogram image output");
  simulate->add_option("--difference", config.output.difference, "|histogram - target| image output");
  simulate->add_flag("--corner-normals", config.simulate.corner_normals, "interpolate per-corner normals");
  bool near_field = false;
  simulate->add_flag("--near-field", near_field, "target is a screen at finite distance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    config_error(e.what());
    return kConfigError;
  }
  if (pillows > 0) config.pillow_cols = config.pillow_rows = pillows;
  if (near_field) config.target.kind = "near";

  if (solve->parsed()) return cmd_solve(config);
  if (nearfield->parsed()) return cmd_nearfield(config);
  return cmd_simulate(config);
}

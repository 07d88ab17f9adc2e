#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caustic/measures.hpp"
#include "caustic/optics.hpp"
#include "caustic/power_diagram.hpp"

namespace caustic {

struct SolverConfig {
  double eta = 1e-8;  // tolerance on max_i |G_i - sigma_i|
  int max_newton_iters = 100;
  int max_backtracks = 40;
  double cg_tolerance = 1e-10;  // relative to the right-hand side
  int cg_max_iters = 0;         // 0 means 10 N
  // Blend parameters t used when some initial cell is empty; empty means automatic.
  std::optional<std::vector<double>> blend_schedule;
  bool verbose = false;
};

struct IterationRecord {
  double residual = 0.0;  // after the step
  int backtracks = 0;     // accepted l
  double min_G = 0.0;
  int cg_iterations = 0;
  double seconds = 0.0;
  double blend = 0.0;  // blend parameter of the stage
};

struct SolveReport {
  int iterations = 0;
  double initial_residual = 0.0;
  double final_residual = 0.0;
  double epsilon0 = 0.0;
  double wall_seconds = 0.0;
  bool converged = false;
  std::vector<IterationRecord> history;
  std::vector<double> blend_stages;  // empty when no continuation was needed
  std::vector<double> psi;           // natural weights
  std::vector<double> G;             // masses at psi

  std::vector<double> residual_history() const;
  std::string to_json() const;
};

/// Newton direction in transport variables: solves the system with the row and
/// column of the largest target mass removed, then shifts to zero mean.
Eigen::VectorXd newton_direction(const TransportState& state, std::span<const double> sigma,
                                 const SolverConfig& config = {}, int orientation = 1, int* cg_iterations = nullptr);

/// Damped Newton iteration on G(psi) = sigma from natural weights psi0.
/// Throws InitialEmptyCell, BacktrackExhausted, IterationLimit or LinearSolveFailure.
SolveReport damped_newton(const OpticalModel& model, const SourceDensity& source, std::span<const double> sigma,
                          std::span<const double> psi0, const SolverConfig& config = {});

/// Full solve: initial weights (or psi0), then damped Newton, with blend
/// continuation on an enlarged support when some initial cell is empty.
SolveReport solve_transport(const OpticalModel& model, const SourceDensity& source, std::span<const double> sigma,
                            const SolverConfig& config = {}, std::optional<std::vector<double>> psi0 = std::nullopt);

// Support used by the blend continuation: the whole sphere, or a rectangle
// covering the source and all seed points.
SourceDensity enlarged_support(const ProblemSpec& spec, std::span<const Vec3> directions, const SourceDensity& source);

// Blend values used when the configuration does not list them.
std::vector<double> default_blend_schedule(double min_sigma);

}  // namespace caustic

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "caustic/image_io.hpp"
#include "caustic/measures.hpp"
#include "caustic/optics.hpp"
#include "caustic/surface.hpp"

namespace caustic {

struct TraceOptions {
  bool corner_normals = false;  // interpolate corner normals instead of the flat facet normal
  int threads = 1;
  // Near-field screen raster size; 0 takes the target's raster when it has one.
  int screen_rows = 0;
  int screen_cols = 0;
};

struct SimulationResult {
  TargetKind kind = TargetKind::FarField;
  std::vector<double> histogram;        // mass per target atom
  std::vector<std::int64_t> counts;     // rays per target atom
  GrayImage screen_image;               // near field: ray counts per screen pixel
  std::int64_t ray_count = 0;
  std::int64_t escaped_rays = 0;        // missed the mesh, total internal reflection, or missed the screen
  std::int64_t missed_mesh = 0;
  double tv_distance = 0.0;

  double escaped_fraction() const { return ray_count ? static_cast<double>(escaped_rays) / ray_count : 0.0; }
};

/// Forward ray tracing of the source through the mesh onto the target.
SimulationResult trace(const TriangleMesh& mesh, const ProblemSpec& spec, const SourceDensity& source,
                       const TargetMeasure& targets, std::int64_t rays, std::uint64_t seed,
                       const TraceOptions& options = {});

/// Total variation distance between the traced histogram and the target masses.
double compare(const SimulationResult& result, const TargetMeasure& targets);
// |hist - sigma| per atom spread on the target raster, scaled so the largest difference is 255.
GrayImage difference_image(const SimulationResult& result, const TargetMeasure& targets);

// Histogram rendered on the target raster (far field) or the screen raster (near field), scaled to 255.
GrayImage result_image(const SimulationResult& result, const TargetMeasure& targets);

}  // namespace caustic

#pragma once

#include <random>
#include <vector>

#include "caustic/measures.hpp"
#include "caustic/optics.hpp"

namespace test {

using caustic::Vec3;

inline caustic::SourceDensity unit_square(int resolution = 4, caustic::DensityProfile profile = caustic::DensityProfile::Uniform) {
  caustic::SourceSpec spec;
  spec.region = caustic::RectangleRegion{{0.0, 0.0}, 1.0, 1.0, resolution};
  spec.profile = profile;
  return caustic::build_source_density(spec);
}

inline caustic::SourceDensity cap(double half_angle_deg = 30.0, int level = 4, Vec3 axis = Vec3::UnitZ()) {
  caustic::SourceSpec spec;
  spec.region = caustic::CapRegion{axis, half_angle_deg, level};
  return caustic::build_source_density(spec);
}

// Random unit directions with z in [zmin, zmax] and azimuth uniform.
inline std::vector<Vec3> random_directions(std::mt19937_64& rng, size_t n, double zmin, double zmax) {
  std::uniform_real_distribution<double> uz(zmin, zmax), ua(0.0, 2.0 * 3.14159265358979323846);
  std::vector<Vec3> out;
  for (size_t i = 0; i < n; ++i) {
    const double z = uz(rng), a = ua(rng), r = std::sqrt(std::max(0.0, 1.0 - z * z));
    out.emplace_back(r * std::cos(a), r * std::sin(a), z);
  }
  return out;
}

// Directions admissible for the problem, clustered so the cells stay in the source domain.
inline std::vector<Vec3> directions_for(const caustic::ProblemSpec& spec, std::mt19937_64& rng, size_t n) {
  if (spec.is_lens()) return random_directions(rng, n, 0.97, 0.995);
  return random_directions(rng, n, -0.995, -0.97);
}

}  // namespace test

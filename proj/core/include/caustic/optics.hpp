#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caustic/measures.hpp"

namespace caustic {

enum class SourceKind { Collimated, Point };
enum class ComponentKind { Mirror, Lens };
// Collimated: Intersection = convex graph (max of planes), Union = concave graph.
// Point source: boundary of the intersection / union of solid paraboloids or ellipsoids.
enum class Envelope { Intersection, Union };

/// One of the eight design problems.
struct ProblemSpec {
  SourceKind source = SourceKind::Collimated;
  ComponentKind component = ComponentKind::Mirror;
  Envelope envelope = Envelope::Intersection;
  double kappa = 1.5;  // n_lens / n_air; unused for mirrors

  // Names: cs-mirror-convex, cs-mirror-concave, cs-lens-convex, cs-lens-concave,
  // ps-mirror-intersection, ps-mirror-union, ps-lens-intersection, ps-lens-union.
  static ProblemSpec from_name(std::string_view name, double kappa = 1.5);
  static std::vector<std::string> all_names();
  std::string name() const;

  DomainKind domain() const { return source == SourceKind::Collimated ? DomainKind::Plane : DomainKind::Sphere; }
  bool is_lens() const { return component == ComponentKind::Lens; }
  bool is_point() const { return source == SourceKind::Point; }
  // Ratio used by Snell's law at the designed surface (1 for mirrors).
  double snell_ratio() const { return is_lens() ? kappa : 1.0; }
  // Point-source primitives: radial graph psi / (1 - e <x,y>).
  double eccentricity() const { return is_lens() ? 1.0 / kappa : 1.0; }
  // +1 when DG is negative semidefinite in transport variables, -1 when positive.
  int orientation() const { return is_point() && envelope == Envelope::Union ? -1 : 1; }

  // Hemisphere / refraction feasibility of a far-field direction.
  bool admissible_direction(const Vec3& y) const;
  void validate() const;
};

Vec3 reflect(const Vec3& d, const Vec3& n);
// Snell refraction with index ratio kappa = n_in / n_out; nullopt on total internal reflection.
std::optional<Vec3> refract(const Vec3& d, const Vec3& n, double kappa);

// Slope q of the plane x -> <x,q> that sends the vertical ray e_z to y.
Vec2 facet_slope(const ProblemSpec& spec, const Vec3& y);

// Unit normal at a surface point that sends incident direction d to y, oriented against d.
Vec3 normal_from_snell(const ProblemSpec& spec, const Vec3& d, const Vec3& y);

struct WeightedPoint {
  Vec3 point;
  double weight = 0.0;
  int index = 0;
};

/// Power-function form f_i(x) = -2<x,p_i> + c_i (c_i = |p_i|^2 + w_i) together
/// with derivatives with respect to the transport variable of site i.
struct PowerSite {
  Vec3 p;
  double c = 0.0;
  Vec3 dp;
  double dc = 0.0;
};

WeightedPoint weighted_point(const ProblemSpec& spec, const Vec3& y, double psi_i, int index = 0);

/// Problem spec bound to a set of far-field directions, with precomputed facet slopes.
class OpticalModel {
 public:
  OpticalModel(ProblemSpec spec, std::vector<Vec3> directions);

  const ProblemSpec& spec() const { return spec_; }
  size_t size() const { return directions_.size(); }
  const std::vector<Vec3>& directions() const { return directions_; }
  const Vec3& direction(size_t i) const { return directions_[i]; }
  const Vec2& slope(size_t i) const { return slopes_[i]; }

  PowerSite site(size_t i, double psi_i) const;
  WeightedPoint weighted_point(size_t i, double psi_i) const;

  // Direct visibility-cell inequality; ties go to the smaller index.
  int cell(std::span<const double> psi, const Vec3& x) const;
  // Surface point R_psi(x); optionally reports the active index.
  Vec3 parameterize(std::span<const double> psi, const Vec3& x, int* index = nullptr) const;
  // The primitive surface of target i evaluated over footprint x.
  Vec3 lift(size_t i, double psi_i, const Vec3& x) const;
  // Direction of the source ray through domain point x.
  Vec3 incident(const Vec3& x) const;

 private:
  double comparison(size_t i, double psi_i, const Vec3& x) const;

  ProblemSpec spec_;
  std::vector<Vec3> directions_;
  std::vector<Vec2> slopes_;
};

int cell_predicate(const ProblemSpec& spec, std::span<const Vec3> directions, std::span<const double> psi, const Vec3& x);
Vec3 parameterize(const ProblemSpec& spec, std::span<const Vec3> directions, std::span<const double> psi, const Vec3& x);

// Collimated: psi_i = |p_i|^2/2 (Voronoi of the weighted points), affinely fitted
// into the source box when the slopes fall outside it. Point source: psi_i = 1/e.
std::vector<double> initial_weights(const ProblemSpec& spec, std::span<const Vec3> directions,
                                    const SourceDensity& source);
// Weights whose cells (linearized around the source center for point sources)
// form the Voronoi diagram of target-ordered seeds spread over the source.
// Default start for collimated solves, and the fallback for point sources when
// the weights above leave some cell outside the source support.
// Optionally returns the seed point aimed at for each cell.
std::vector<double> fitted_initial_weights(const ProblemSpec& spec, std::span<const Vec3> directions,
                                           const SourceDensity& source, std::vector<Vec3>* seeds = nullptr);
// Points whose visibility cell contains them for the weights of initial_weights.
std::vector<Vec3> initial_seed_points(const ProblemSpec& spec, std::span<const Vec3> directions,
                                      const SourceDensity& source);

std::vector<double> to_transport_vars(const ProblemSpec& spec, std::span<const double> psi);
std::vector<double> from_transport_vars(const ProblemSpec& spec, std::span<const double> psi_tilde);
// Point source: shift so that max psi_tilde = -1 (cells are scale invariant). No-op otherwise.
void renormalize_transport(const ProblemSpec& spec, std::span<double> psi_tilde);

// Throws HemisphereViolation / DenominatorSign when the targets or the source
// domain are incompatible with the problem.
void validate_setup(const ProblemSpec& spec, std::span<const Vec3> directions, const SourceDensity& source);

}  // namespace caustic

#include "caustic/optics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "caustic/error.hpp"

namespace caustic {

namespace {

struct NamedSpec {
  const char* name;
  SourceKind source;
  ComponentKind component;
  Envelope envelope;
};

constexpr NamedSpec kNames[] = {
    {"cs-mirror-convex", SourceKind::Collimated, ComponentKind::Mirror, Envelope::Intersection},
    {"cs-mirror-concave", SourceKind::Collimated, ComponentKind::Mirror, Envelope::Union},
    {"cs-lens-convex", SourceKind::Collimated, ComponentKind::Lens, Envelope::Intersection},
    {"cs-lens-concave", SourceKind::Collimated, ComponentKind::Lens, Envelope::Union},
    {"ps-mirror-intersection", SourceKind::Point, ComponentKind::Mirror, Envelope::Intersection},
    {"ps-mirror-union", SourceKind::Point, ComponentKind::Mirror, Envelope::Union},
    {"ps-lens-intersection", SourceKind::Point, ComponentKind::Lens, Envelope::Intersection},
    {"ps-lens-union", SourceKind::Point, ComponentKind::Lens, Envelope::Union},
};

constexpr double kDirectionTol = 1e-14;

}  // namespace

ProblemSpec ProblemSpec::from_name(std::string_view name, double kappa) {
  for (const auto& n : kNames) {
    if (name == n.name) {
      ProblemSpec s{n.source, n.component, n.envelope, kappa};
      s.validate();
      return s;
    }
  }
  throw Error(ErrorKind::ConfigError, "unknown problem '" + std::string(name) + "'");
}

std::vector<std::string> ProblemSpec::all_names() {
  std::vector<std::string> out;
  for (const auto& n : kNames) out.emplace_back(n.name);
  return out;
}

std::string ProblemSpec::name() const {
  for (const auto& n : kNames)
    if (n.source == source && n.component == component && n.envelope == envelope) return n.name;
  return "unknown";
}

void ProblemSpec::validate() const {
  if (is_lens() && !(kappa > 0.0)) throw Error(ErrorKind::ConfigError, "lens problems require kappa > 0");
  if (is_lens() && is_point() && !(kappa > 1.0))
    throw Error(ErrorKind::ConfigError, "point-source lens requires kappa > 1");
}

bool ProblemSpec::admissible_direction(const Vec3& y) const {
  if (!is_lens()) return y.z() <= 0.0;
  if (!is_point()) return kappa * y.z() > 1.0;  // refracted branch exists for vertical rays
  return y.z() >= 0.0;
}

Vec3 reflect(const Vec3& d, const Vec3& n) { return d - 2.0 * n.dot(d) * n; }

std::optional<Vec3> refract(const Vec3& d, const Vec3& n, double kappa) {
  const double cos_in = -n.dot(d);
  const double k = 1.0 - kappa * kappa * (1.0 - cos_in * cos_in);
  if (k < 0.0) return std::nullopt;
  return (kappa * d + (kappa * cos_in - std::sqrt(k)) * n).normalized();
}

Vec2 facet_slope(const ProblemSpec& spec, const Vec3& y) {
  const double den = y.z() - spec.snell_ratio();
  if (std::abs(den) < kDirectionTol)
    throw Error(ErrorKind::DegenerateDirection, "no plane sends e_z to this direction");
  return Vec2(-y.x() / den, -y.y() / den);
}

Vec3 normal_from_snell(const ProblemSpec& spec, const Vec3& d, const Vec3& y) {
  const Vec3 v = spec.snell_ratio() * d - y;
  const double len = v.norm();
  if (len < 1e-12) throw Error(ErrorKind::DegeneratePair, "incident and outgoing directions define no normal");
  Vec3 n = v / len;
  if (n.dot(d) > 0.0) n = -n;
  return n;
}

OpticalModel::OpticalModel(ProblemSpec spec, std::vector<Vec3> directions)
    : spec_(spec), directions_(std::move(directions)) {
  spec_.validate();
  if (spec_.source == SourceKind::Collimated) {
    slopes_.reserve(directions_.size());
    for (const auto& y : directions_) slopes_.push_back(facet_slope(spec_, y));
  }
}

PowerSite OpticalModel::site(size_t i, double psi_i) const {
  PowerSite s;
  if (spec_.source == SourceKind::Collimated) {
    const Vec2& q = slopes_[i];
    const double sign = spec_.envelope == Envelope::Intersection ? 1.0 : -1.0;
    s.p = Vec3(sign * q.x(), sign * q.y(), 0.0);
    s.c = 2.0 * psi_i;
    s.dp = Vec3::Zero();
    s.dc = 2.0;
    return s;
  }
  if (!(psi_i > 0.0) || !std::isfinite(psi_i))
    throw Error(ErrorKind::SingularWeight, "point-source weights must be positive and finite");
  const double e = spec_.eccentricity();
  const double sign = spec_.envelope == Envelope::Intersection ? -1.0 : 1.0;
  s.p = sign * e / (2.0 * psi_i) * directions_[i];
  s.c = sign / psi_i;
  // p and c scale as exp(-psi_tilde).
  s.dp = -s.p;
  s.dc = -s.c;
  return s;
}

WeightedPoint OpticalModel::weighted_point(size_t i, double psi_i) const {
  const PowerSite s = site(i, psi_i);
  return {s.p, s.c - s.p.squaredNorm(), static_cast<int>(i)};
}

double OpticalModel::comparison(size_t i, double psi_i, const Vec3& x) const {
  if (spec_.source == SourceKind::Collimated) {
    const double h = x.x() * slopes_[i].x() + x.y() * slopes_[i].y();
    return spec_.envelope == Envelope::Intersection ? h - psi_i : h + psi_i;
  }
  const double den = 1.0 - spec_.eccentricity() * x.dot(directions_[i]);
  if (!(den > 0.0)) throw Error(ErrorKind::DenominatorSign, "radial function undefined at this source point");
  return psi_i / den;
}

int OpticalModel::cell(std::span<const double> psi, const Vec3& x) const {
  // Collimated convex / point union maximise; the other variants minimise.
  const bool maximize = (spec_.source == SourceKind::Collimated) == (spec_.envelope == Envelope::Intersection);
  int best = 0;
  double best_value = comparison(0, psi[0], x);
  for (size_t i = 1; i < directions_.size(); ++i) {
    const double v = comparison(i, psi[i], x);
    if (maximize ? v > best_value : v < best_value) {
      best = static_cast<int>(i);
      best_value = v;
    }
  }
  return best;
}

Vec3 OpticalModel::lift(size_t i, double psi_i, const Vec3& x) const {
  if (spec_.source == SourceKind::Collimated) return Vec3(x.x(), x.y(), comparison(i, psi_i, x));
  const Vec3 u = x.normalized();
  return comparison(i, psi_i, u) * u;
}

Vec3 OpticalModel::parameterize(std::span<const double> psi, const Vec3& x, int* index) const {
  const Vec3 foot = spec_.source == SourceKind::Collimated ? x : Vec3(x.normalized());
  const int i = cell(psi, foot);
  if (index) *index = i;
  return lift(static_cast<size_t>(i), psi[i], foot);
}

Vec3 OpticalModel::incident(const Vec3& x) const {
  return spec_.source == SourceKind::Collimated ? Vec3::UnitZ() : Vec3(x.normalized());
}

int cell_predicate(const ProblemSpec& spec, std::span<const Vec3> directions, std::span<const double> psi, const Vec3& x) {
  return OpticalModel(spec, {directions.begin(), directions.end()}).cell(psi, x);
}

Vec3 parameterize(const ProblemSpec& spec, std::span<const Vec3> directions, std::span<const double> psi, const Vec3& x) {
  return OpticalModel(spec, {directions.begin(), directions.end()}).parameterize(psi, x);
}

WeightedPoint weighted_point(const ProblemSpec& spec, const Vec3& y, double psi_i, int index) {
  WeightedPoint w = OpticalModel(spec, {y}).weighted_point(0, psi_i);
  w.index = index;
  return w;
}

namespace {

struct CollimatedFit {
  double mu = 1.0;
  Vec2 site_center = Vec2::Zero();
  Vec2 box_center = Vec2::Zero();
};

// Affine map taking the Voronoi sites p_i into the source bounding box.
CollimatedFit fit_sites(const std::vector<Vec2>& sites, const SourceDensity& source, bool always = false) {
  CollimatedFit fit;
  const Vec2 lo = source.bbox_min().head<2>(), hi = source.bbox_max().head<2>();
  bool inside = true;
  Vec2 slo = sites.front(), shi = sites.front();
  for (const auto& p : sites) {
    slo = slo.cwiseMin(p);
    shi = shi.cwiseMax(p);
    inside = inside && (p.array() > lo.array()).all() && (p.array() < hi.array()).all();
  }
  if (inside && !always) return fit;
  fit.site_center = 0.5 * (slo + shi);
  fit.box_center = 0.5 * (lo + hi);
  const Vec2 site_half = 0.5 * (shi - slo);
  const Vec2 box_half = 0.5 * (hi - lo);
  double mu = 0.0;
  for (int k = 0; k < 2; ++k) mu = std::max(mu, site_half[k] / (0.9 * box_half[k]));
  fit.mu = mu > 0.0 ? mu : 1.0;
  return fit;
}

std::vector<Vec2> collimated_sites(const OpticalModel& model) {
  std::vector<Vec2> sites;
  const double sign = model.spec().envelope == Envelope::Intersection ? 1.0 : -1.0;
  for (size_t i = 0; i < model.size(); ++i) sites.push_back(sign * model.slope(i));
  return sites;
}

}  // namespace

std::vector<double> initial_weights(const ProblemSpec& spec, std::span<const Vec3> directions,
                                    const SourceDensity& source) {
  if (spec.source == SourceKind::Point) return std::vector<double>(directions.size(), std::exp(-1.0));
  const OpticalModel model(spec, {directions.begin(), directions.end()});
  const auto sites = collimated_sites(model);
  const CollimatedFit fit = fit_sites(sites, source);
  std::vector<double> psi(sites.size());
  for (size_t i = 0; i < sites.size(); ++i)
    psi[i] = fit.box_center.dot(sites[i]) + (sites[i] - fit.site_center).squaredNorm() / (2.0 * fit.mu);
  return psi;
}

std::vector<double> fitted_initial_weights(const ProblemSpec& spec, std::span<const Vec3> directions,
                                           const SourceDensity& source, std::vector<Vec3>* seeds) {
  if (spec.source == SourceKind::Collimated) {
    const OpticalModel model(spec, {directions.begin(), directions.end()});
    const auto sites = collimated_sites(model);
    const CollimatedFit fit = fit_sites(sites, source, true);
    std::vector<double> psi(sites.size());
    for (size_t i = 0; i < sites.size(); ++i) {
      psi[i] = fit.box_center.dot(sites[i]) + (sites[i] - fit.site_center).squaredNorm() / (2.0 * fit.mu);
      if (seeds) seeds->push_back(Vec3(fit.box_center.x(), fit.box_center.y(), 0.0) +
                                  Vec3((sites[i] - fit.site_center).x(), (sites[i] - fit.site_center).y(), 0.0) / fit.mu);
    }
    return psi;
  }
  Vec3 axis = Vec3::Zero();
  for (const auto& v : source.vertices()) axis += v;
  if (axis.norm() < 1e-12) return initial_weights(spec, directions, source);
  axis.normalize();
  Vec3 e1 = axis.unitOrthogonal();
  Vec3 e2 = axis.cross(e1);
  // Gnomonic coordinates v = x/<x,a> - a of the source around its axis.
  Vec2 lo(std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (const auto& x : source.vertices()) {
    const double h = x.dot(axis);
    if (h <= 1e-6) continue;
    const Vec3 v = x / h - axis;
    const Vec2 g(v.dot(e1), v.dot(e2));
    lo = lo.cwiseMin(g);
    hi = hi.cwiseMax(g);
  }
  if (!(lo.array() < hi.array()).all()) return initial_weights(spec, directions, source);

  // Cell i maximizes s (psi~_i + h_i(v)) with h_i = -ln(1 - e<x,y_i>) ~ h_i(0) + <g_i, v>.
  const double s = spec.envelope == Envelope::Union ? 1.0 : -1.0;
  const double e = spec.eccentricity();
  const size_t n = directions.size();
  std::vector<Vec2> q(n);
  std::vector<double> h0(n);
  for (size_t i = 0; i < n; ++i) {
    const Vec3& y = directions[i];
    const double den = 1.0 - e * axis.dot(y);
    if (!(den > 0.0)) throw Error(ErrorKind::DenominatorSign, "radial function undefined at the source center");
    h0[i] = -std::log(den);
    q[i] = s * e * Vec2(y.dot(e1), y.dot(e2)) / den;
  }
  Vec2 qlo = q.front(), qhi = q.front();
  for (const auto& v : q) {
    qlo = qlo.cwiseMin(v);
    qhi = qhi.cwiseMax(v);
  }
  // Seeds go into the disc inscribed in the source box.
  const Vec2 q_center = 0.5 * (qlo + qhi), box_center = 0.5 * (lo + hi);
  const double radius = 0.5 * (hi - lo).minCoeff();
  double spread = 0.0;
  for (const auto& v : q) spread = std::max(spread, (v - q_center).norm());
  double mu = spread / (0.9 * radius);
  if (!(mu > 0.0)) mu = 1.0;
  if (seeds) {
    seeds->clear();
    for (const auto& v : q) {
      const Vec2 g = box_center + (v - q_center) / mu;
      seeds->push_back((axis + g.x() * e1 + g.y() * e2).normalized());
    }
  }
  std::vector<double> psi(n);
  for (size_t i = 0; i < n; ++i) {
    const double phi = box_center.dot(q[i]) + (q[i] - q_center).squaredNorm() / (2.0 * mu);
    psi[i] = -s * phi - h0[i];
  }
  const double top = *std::max_element(psi.begin(), psi.end());
  for (double& v : psi) v = std::exp(v - top - 1.0);
  return psi;
}

std::vector<Vec3> initial_seed_points(const ProblemSpec& spec, std::span<const Vec3> directions,
                                      const SourceDensity& source) {
  std::vector<Vec3> seeds;
  if (spec.source == SourceKind::Point) {
    // Equal weights: intersection mirrors / union lenses keep -y_i resp. y_i.
    const bool antipodal = (spec.component == ComponentKind::Mirror) == (spec.envelope == Envelope::Intersection);
    for (const auto& y : directions) seeds.push_back(antipodal ? Vec3(-y) : y);
    return seeds;
  }
  const OpticalModel model(spec, {directions.begin(), directions.end()});
  const auto sites = collimated_sites(model);
  const CollimatedFit fit = fit_sites(sites, source);
  for (const auto& p : sites) {
    const Vec2 x = fit.box_center + (p - fit.site_center) / fit.mu;
    seeds.emplace_back(x.x(), x.y(), 0.0);
  }
  return seeds;
}

std::vector<double> to_transport_vars(const ProblemSpec& spec, std::span<const double> psi) {
  std::vector<double> out(psi.begin(), psi.end());
  if (spec.source == SourceKind::Collimated) return out;
  for (double& v : out) {
    if (!(v > 0.0)) throw Error(ErrorKind::NonPositiveWeight, "logarithm of a non-positive weight");
    v = std::log(v);
  }
  return out;
}

std::vector<double> from_transport_vars(const ProblemSpec& spec, std::span<const double> psi_tilde) {
  std::vector<double> out(psi_tilde.begin(), psi_tilde.end());
  if (spec.source == SourceKind::Point)
    for (double& v : out) v = std::exp(v);
  return out;
}

void renormalize_transport(const ProblemSpec& spec, std::span<double> psi_tilde) {
  if (spec.source != SourceKind::Point || psi_tilde.empty()) return;
  const double shift = -1.0 - *std::max_element(psi_tilde.begin(), psi_tilde.end());
  for (double& v : psi_tilde) v += shift;
}

void validate_setup(const ProblemSpec& spec, std::span<const Vec3> directions, const SourceDensity& source) {
  spec.validate();
  if (source.domain() != spec.domain())
    throw Error(ErrorKind::ConfigError, spec.is_point() ? "point-source problems need a spherical source"
                                                        : "collimated problems need a planar source");
  for (size_t i = 0; i < directions.size(); ++i) {
    if (!spec.admissible_direction(directions[i]))
      throw Error(ErrorKind::HemisphereViolation, "target direction " + std::to_string(i) + " is not admissible for " + spec.name());
  }
  if (spec.is_point() && spec.is_lens()) {
    // Every source ray must be able to leave the lens towards every target.
    for (const auto& v : source.vertices()) {
      for (const auto& y : directions) {
        if (!(spec.kappa * v.normalized().dot(y) > 1.0))
          throw Error(ErrorKind::DenominatorSign, "source cap too wide for the lens targets (kappa <x,y> <= 1)");
      }
    }
  }
}

}  // namespace caustic

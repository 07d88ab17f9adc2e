#include "app.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "caustic/image_io.hpp"
#include "caustic/simulate.hpp"
#include "caustic/surface.hpp"

namespace caustic::app {

namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void reject_unknown(const json& obj, const std::set<std::string>& keys, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorKind::ConfigError, where + " must be a JSON object");
  for (const auto& [k, v] : obj.items()) {
    if (!keys.count(k)) throw Error(ErrorKind::ConfigError, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, std::string("bad value for '") + key + "': " + e.what());
  }
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text << '\n';
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

GrayImage target_image(const TargetConfig& t) {
  if (t.image.empty()) throw Error(ErrorKind::ConfigError, "no target image given");
  const std::string prefix = "synthetic:";
  if (t.image.rfind(prefix, 0) == 0) {
    const std::string rest = t.image.substr(prefix.size());
    const auto colon = rest.find(':');
    int size = 64;
    if (colon != std::string::npos) {
      try {
        size = std::stoi(rest.substr(colon + 1));
      } catch (const std::exception&) {
        throw Error(ErrorKind::ConfigError, "bad synthetic image size in '" + t.image + "'");
      }
    }
    return synthetic_image(rest.substr(0, colon), size);
  }
  return read_image(t.image);
}

json base_report(const RunConfig& config, size_t n) {
  json doc;
  doc["problem"] = config.problem;
  doc["kappa"] = config.kappa;
  doc["N"] = n;
  doc["seed"] = config.seed;
  return doc;
}

json solve_json(const SolveReport& r) { return json::parse(r.to_json()); }

void add_solve(json& doc, const SolveReport& r) {
  doc["iterations"] = r.iterations;
  doc["converged"] = r.converged;
  doc["final_residual"] = r.final_residual;
  doc["residual_history"] = r.residual_history();
  doc["solve"] = solve_json(r);
}

void report_error(Command command, const Error& e, const RunConfig* config) {
  json doc;
  doc["error"] = std::string(to_string(e.kind()));
  doc["message"] = e.what();
  std::cerr << doc.dump() << std::endl;
  if (config && !config->output.report.empty()) {
    json rep = base_report(*config, 0);
    rep["error"] = doc["error"];
    rep["message"] = doc["message"];
    rep["iterations"] = 0;
    rep["residual_history"] = json::array();
    rep["timings"] = json::object();
    try {
      write_text(rep.dump(2), config->output.report);
    } catch (const Error&) {
    }
  }
  (void)command;
}

template <class Body>
int guarded(Command command, const RunConfig& config, Body&& body) {
  try {
    body();
    return kSuccess;
  } catch (const Error& e) {
    report_error(command, e, &config);
    return exit_code(command, e.kind());
  } catch (const std::bad_alloc&) {
    report_error(command, Error(ErrorKind::ConfigError, "out of memory"), &config);
    return command == Command::Simulate ? kSimulationFailure : kSolverFailure;
  }
}

std::string pillow_path(const std::string& path, int row, int col) {
  std::filesystem::path p(path);
  const std::string stem = p.stem().string() + "_" + std::to_string(row) + "_" + std::to_string(col);
  return (p.parent_path() / (stem + p.extension().string())).string();
}

}  // namespace

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig c;
  reject_unknown(doc, {"problem", "kappa", "source", "target", "solver", "nearfield", "output", "simulate", "seed", "threads"},
                 "config");
  read(doc, "problem", c.problem);
  read(doc, "kappa", c.kappa);
  read(doc, "seed", c.seed);
  read(doc, "threads", c.threads);
  if (doc.contains("source")) {
    const json& s = doc["source"];
    reject_unknown(s, {"region", "width", "height", "resolution", "half_angle_deg", "level", "profile", "gaussian_sigma", "image"},
                   "source");
    read(s, "region", c.source.region);
    read(s, "width", c.source.width);
    read(s, "height", c.source.height);
    read(s, "resolution", c.source.resolution);
    read(s, "half_angle_deg", c.source.half_angle_deg);
    read(s, "level", c.source.level);
    read(s, "profile", c.source.profile);
    read(s, "gaussian_sigma", c.source.gaussian_sigma);
    read(s, "image", c.source.image);
  }
  if (doc.contains("target")) {
    const json& t = doc["target"];
    reject_unknown(t, {"image", "kind", "screen_distance", "screen_size", "gamma"}, "target");
    read(t, "image", c.target.image);
    read(t, "kind", c.target.kind);
    read(t, "screen_distance", c.target.screen_distance);
    read(t, "screen_size", c.target.screen_size);
    read(t, "gamma", c.target.gamma);
  }
  if (doc.contains("solver")) {
    const json& s = doc["solver"];
    reject_unknown(s, {"eta", "max_newton_iters", "max_backtracks", "cg_tolerance", "cg_max_iters", "blend_schedule", "verbose"},
                   "solver");
    read(s, "eta", c.solver.eta);
    read(s, "max_newton_iters", c.solver.max_newton_iters);
    read(s, "max_backtracks", c.solver.max_backtracks);
    read(s, "cg_tolerance", c.solver.cg_tolerance);
    read(s, "cg_max_iters", c.solver.cg_max_iters);
    read(s, "verbose", c.solver.verbose);
    if (s.contains("blend_schedule") && !s["blend_schedule"].is_null()) {
      std::vector<double> schedule;
      read(s, "blend_schedule", schedule);
      c.solver.blend_schedule = schedule;
    }
  }
  if (doc.contains("nearfield")) {
    const json& n = doc["nearfield"];
    reject_unknown(n, {"eta_nf", "max_outer", "pillows"}, "nearfield");
    read(n, "eta_nf", c.eta_nf);
    read(n, "max_outer", c.max_outer);
    if (n.contains("pillows")) {
      const json& p = n["pillows"];
      if (p.is_number_integer()) {
        c.pillow_cols = c.pillow_rows = p.get<int>();
      } else if (p.is_array() && p.size() == 2 && p[0].is_number_integer() && p[1].is_number_integer()) {
        c.pillow_cols = p[0].get<int>();
        c.pillow_rows = p[1].get<int>();
      } else {
        throw Error(ErrorKind::ConfigError, "pillows must be an integer k or [cols, rows]");
      }
    }
  }
  if (doc.contains("output")) {
    const json& o = doc["output"];
    reject_unknown(o, {"mesh", "ply", "report", "image", "difference", "subdivision"}, "output");
    read(o, "mesh", c.output.mesh);
    read(o, "ply", c.output.ply);
    read(o, "report", c.output.report);
    read(o, "image", c.output.image);
    read(o, "difference", c.output.difference);
    read(o, "subdivision", c.output.subdivision);
  }
  if (doc.contains("simulate")) {
    const json& s = doc["simulate"];
    reject_unknown(s, {"mesh", "rays", "corner_normals"}, "simulate");
    read(s, "mesh", c.simulate.mesh);
    read(s, "rays", c.simulate.rays);
    read(s, "corner_normals", c.simulate.corner_normals);
  }
  return c;
}

json RunConfig::to_json() const {
  json doc;
  doc["problem"] = problem;
  doc["kappa"] = kappa;
  doc["seed"] = seed;
  doc["threads"] = threads;
  doc["source"] = {{"region", source.region},
                   {"width", source.width},
                   {"height", source.height},
                   {"resolution", source.resolution},
                   {"half_angle_deg", source.half_angle_deg},
                   {"level", source.level},
                   {"profile", source.profile},
                   {"gaussian_sigma", source.gaussian_sigma},
                   {"image", source.image}};
  doc["target"] = {{"image", target.image},
                   {"kind", target.kind},
                   {"screen_distance", target.screen_distance},
                   {"screen_size", target.screen_size},
                   {"gamma", target.gamma}};
  doc["solver"] = {{"eta", solver.eta},
                   {"max_newton_iters", solver.max_newton_iters},
                   {"max_backtracks", solver.max_backtracks},
                   {"cg_tolerance", solver.cg_tolerance},
                   {"cg_max_iters", solver.cg_max_iters},
                   {"verbose", solver.verbose}};
  doc["solver"]["blend_schedule"] = solver.blend_schedule ? json(*solver.blend_schedule) : json(nullptr);
  doc["nearfield"] = {{"eta_nf", eta_nf}, {"max_outer", max_outer}, {"pillows", {pillow_cols, pillow_rows}}};
  doc["output"] = {{"mesh", output.mesh},   {"ply", output.ply},
                   {"report", output.report}, {"image", output.image},
                   {"difference", output.difference}, {"subdivision", output.subdivision}};
  doc["simulate"] = {{"mesh", simulate.mesh}, {"rays", simulate.rays}, {"corner_normals", simulate.corner_normals}};
  return doc;
}

ProblemSpec RunConfig::problem_spec() const {
  ProblemSpec spec = ProblemSpec::from_name(problem, kappa);
  spec.validate();
  return spec;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ConfigError, "config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(doc);
}

SourceDensity make_source(const RunConfig& config) {
  const ProblemSpec spec = config.problem_spec();
  const SourceConfig& s = config.source;
  SourceSpec ss;
  std::string region = s.region;
  if (region == "auto") region = spec.is_point() ? "cap" : "rectangle";
  if (region == "rectangle") {
    RectangleRegion r;
    r.width = s.width;
    r.height = s.height;
    r.resolution = s.resolution;
    ss.region = r;
  } else if (region == "cap") {
    CapRegion c;
    c.half_angle_deg = s.half_angle_deg;
    c.level = s.level;
    ss.region = c;
  } else {
    throw Error(ErrorKind::ConfigError, "source region must be auto, rectangle or cap");
  }
  if (s.profile == "uniform") {
    ss.profile = DensityProfile::Uniform;
  } else if (s.profile == "gaussian") {
    ss.profile = DensityProfile::Gaussian;
    ss.gaussian_sigma = s.gaussian_sigma;
  } else if (s.profile == "image") {
    ss.profile = DensityProfile::Image;
    if (s.image.empty()) throw Error(ErrorKind::ConfigError, "image source profile needs source.image");
    ss.image = read_image(s.image);
  } else {
    throw Error(ErrorKind::ConfigError, "source profile must be uniform, gaussian or image");
  }
  return build_source_density(ss);
}

TargetMeasure make_target(const RunConfig& config, TargetKind kind) {
  const ProblemSpec spec = config.problem_spec();
  const bool near = kind == TargetKind::NearField;
  const double distance = config.target.screen_distance > 0.0 ? config.target.screen_distance : (near ? 1.0 : 2.0);
  const double size = config.target.screen_size > 0.0 ? config.target.screen_size : (near ? 0.3 : 0.6);
  const ScreenGeometry screen = ScreenGeometry::facing(distance, size, !spec.is_lens());
  TargetOptions opt;
  opt.kind = kind;
  opt.gamma = config.target.gamma;
  if (!near) opt.admissible = [spec](const Vec3& y) { return spec.admissible_direction(y); };
  return load_target_image(target_image(config.target), screen, opt);
}

int exit_code(Command command, ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::IoError:
    case ErrorKind::HemisphereViolation:
    case ErrorKind::AllBlackImage:
    case ErrorKind::EmptySupport:
    case ErrorKind::DegenerateDirection:
      return kConfigError;
    default:
      return command == Command::Simulate ? kSimulationFailure : kSolverFailure;
  }
}

int cmd_solve(const RunConfig& config) {
  return guarded(Command::Solve, config, [&] {
    const auto t0 = Clock::now();
    const ProblemSpec spec = config.problem_spec();
    const SourceDensity source = make_source(config);
    const TargetMeasure target = make_target(config, TargetKind::FarField);
    validate_setup(spec, target.points, source);
    const double setup = seconds_since(t0);

    const OpticalModel model(spec, target.points);
    const SolveReport r = solve_transport(model, source, target.masses, config.solver);
    if (!r.converged) throw Error(ErrorKind::IterationLimit, "Newton iteration did not converge");

    const auto t1 = Clock::now();
    const VisibilityDiagram diagram = visibility_diagram(model, r.psi, source);
    const TriangleMesh mesh = build_mesh(model, r.psi, diagram, source, config.output.subdivision);
    if (!config.output.mesh.empty()) export_obj(mesh, config.output.mesh);
    if (!config.output.ply.empty()) export_ply(mesh, config.output.ply);
    const double mesh_seconds = seconds_since(t1);

    json doc = base_report(config, target.size());
    add_solve(doc, r);
    doc["faces"] = mesh.size();
    doc["timings"] = {{"setup", setup}, {"solve", r.wall_seconds}, {"mesh", mesh_seconds}, {"total", seconds_since(t0)}};
    if (!config.output.report.empty()) write_text(doc.dump(2), config.output.report);
    std::printf("%s N=%zu iterations=%d residual=%.3e\n", config.problem.c_str(), target.size(), r.iterations,
                r.final_residual);
  });
}

int cmd_nearfield(const RunConfig& config) {
  bool converged = true;
  const int status = guarded(Command::NearField, config, [&] {
    const auto t0 = Clock::now();
    const ProblemSpec spec = config.problem_spec();
    const SourceDensity source = make_source(config);
    const TargetMeasure target = make_target(config, TargetKind::NearField);
    const double setup = seconds_since(t0);

    NearFieldConfig nf;
    nf.eta_nf = config.eta_nf;
    nf.max_outer = config.max_outer;
    nf.solver = config.solver;

    json doc = base_report(config, target.size());
    std::vector<double> residuals;
    int iterations = 0;
    if (config.pillow_cols > 0 || config.pillow_rows > 0) {
      const int cols = std::max(config.pillow_cols, 1), rows = std::max(config.pillow_rows, 1);
      const auto pillows = solve_pillows(spec, source, cols, rows, target, nf, config.output.subdivision);
      json list = json::array();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const Pillow& p = pillows[static_cast<size_t>(r * cols + c)];
          json entry = json::parse(p.result.to_json());
          entry["lo"] = {p.lo.x(), p.lo.y()};
          entry["hi"] = {p.hi.x(), p.hi.y()};
          if (!config.output.mesh.empty()) {
            const std::string path = pillow_path(config.output.mesh, r, c);
            export_obj(p.mesh, path);
            entry["mesh"] = path;
          }
          converged = converged && p.result.converged;
          for (const auto& h : p.result.history) {
            iterations += h.solve.iterations;
            const auto rh = h.solve.residual_history();
            residuals.insert(residuals.end(), rh.begin(), rh.end());
          }
          list.push_back(std::move(entry));
        }
      }
      doc["pillows"] = std::move(list);
      doc["grid"] = {cols, rows};
    } else {
      const NearFieldResult result = solve_nearfield(spec, source, target, nf);
      const OpticalModel model(spec, result.directions);
      const TriangleMesh mesh =
          build_mesh(model, result.psi, visibility_diagram(model, result.psi, source), source, config.output.subdivision);
      if (!config.output.mesh.empty()) export_obj(mesh, config.output.mesh);
      if (!config.output.ply.empty()) export_ply(mesh, config.output.ply);
      for (const auto& h : result.history) {
        iterations += h.solve.iterations;
        const auto rh = h.solve.residual_history();
        residuals.insert(residuals.end(), rh.begin(), rh.end());
      }
      doc["nearfield"] = json::parse(result.to_json());
      doc["displacements"] = result.displacements();
      doc["converged"] = result.converged;
      converged = result.converged;
      std::printf("%s N=%zu outer=%zu displacement=%.3e\n", config.problem.c_str(), target.size(), result.history.size(),
                  result.final_displacement());
    }
    doc["iterations"] = iterations;
    doc["residual_history"] = residuals;
    doc["timings"] = {{"setup", setup}, {"total", seconds_since(t0)}};
    if (!config.output.report.empty()) write_text(doc.dump(2), config.output.report);
  });
  if (status != kSuccess) return status;
  if (!converged) {
    std::cerr << json{{"error", "IterationLimit"}, {"message", "near-field displacement above eta_nf after max_outer"}}.dump()
              << std::endl;
    return kSolverFailure;
  }
  return kSuccess;
}

int cmd_simulate(const RunConfig& config) {
  return guarded(Command::Simulate, config, [&] {
    const auto t0 = Clock::now();
    const ProblemSpec spec = config.problem_spec();
    const SourceDensity source = make_source(config);
    const TargetKind kind = config.target.kind == "near" ? TargetKind::NearField : TargetKind::FarField;
    if (config.target.kind != "near" && config.target.kind != "far")
      throw Error(ErrorKind::ConfigError, "target kind must be far or near");
    const TargetMeasure target = make_target(config, kind);
    if (config.simulate.mesh.empty()) throw Error(ErrorKind::ConfigError, "simulate needs a mesh");
    const TriangleMesh mesh = read_obj(config.simulate.mesh);
    int cells = 0;
    for (int c : mesh.face_cell) cells = std::max(cells, c + 1);
    if (static_cast<size_t>(cells) != target.size())
      throw Error(ErrorKind::DimensionMismatch, "mesh has " + std::to_string(cells) + " cells but the target has " +
                                                    std::to_string(target.size()) + " atoms");
    TraceOptions opt;
    opt.corner_normals = config.simulate.corner_normals;
    opt.threads = std::max(config.threads, 1);
    const SimulationResult result = trace(mesh, spec, source, target, config.simulate.rays, config.seed, opt);
    if (!config.output.image.empty()) write_image(result_image(result, target), config.output.image);
    if (!config.output.difference.empty()) write_image(difference_image(result, target), config.output.difference);

    json doc = base_report(config, target.size());
    doc["iterations"] = 0;
    doc["residual_history"] = json::array();
    doc["rays"] = result.ray_count;
    doc["escaped_rays"] = result.escaped_rays;
    doc["missed_mesh"] = result.missed_mesh;
    doc["tv_distance"] = result.tv_distance;
    doc["histogram"] = result.histogram;
    doc["timings"] = {{"total", seconds_since(t0)}};
    if (!config.output.report.empty()) write_text(doc.dump(2), config.output.report);
    std::printf("%s N=%zu rays=%lld escaped=%lld tv=%.6f\n", config.problem.c_str(), target.size(),
                static_cast<long long>(result.ray_count), static_cast<long long>(result.escaped_rays), result.tv_distance);
  });
}

}  // namespace caustic::app

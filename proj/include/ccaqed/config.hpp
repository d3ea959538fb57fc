#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccaqed/error.hpp"
#include "ccaqed/hamiltonian.hpp"
#include "ccaqed/model.hpp"
#include "ccaqed/sweeps.hpp"

namespace ccaqed {

using json = nlohmann::json;

/// One named sweep of a run.
struct SweepJob {
  std::string name;
  SweepSpec spec;
  bool overlays = false;
  bool maps = false;
};

struct BoundStatesSection {
  double threshold = 0.01;
  GridSpec g_grid{0.0, 1.0, 21};
  bool bwpt = false;
  double bwpt_tolerance = 1e-2;
};

struct SpectrumSection {
  Sector sector = Sector::both;
  bool quasi_bound = false;
  int min_excitation = 3;
};

struct ValidateSection {
  Fault fault = Fault::none;
  int coarse_grid = 41;
  int draws = 20;
};

struct OutputSection {
  std::string dir = "out";
  std::string name = "run";
};

/// Fully resolved configuration of one CLI invocation.
struct RunConfig {
  ModelParams model;
  std::size_t dimension_limit = kDefaultDimensionLimit;
  SolverLimits limits;
  SolveOptions solve;
  double pole_nudge = 1e-7;
  BoundStatesSection bound_states;
  SpectrumSection spectrum;
  std::optional<double> scatter_omega_in;
  std::vector<SweepJob> sweeps;
  ValidateSection validate;
  OutputSection output;
  unsigned threads = 1;
  json source;  ///< merged JSON the run was built from
};

namespace detail {

inline void allow_keys(const json& j, const std::string& where,
                       std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline void read_model(const json& j, ModelParams& m, std::size_t* limit,
                       const std::string& where) {
  allow_keys(j, where,
             {"n_cavities", "omega_c", "omega_a", "xi", "eta", "g", "max_excitation",
              "rwa_only", "dimension_limit"});
  read(j, "n_cavities", m.n_cavities, where);
  read(j, "omega_c", m.omega_c, where);
  read(j, "omega_a", m.omega_a, where);
  read(j, "xi", m.xi, where);
  read(j, "eta", m.eta, where);
  read(j, "g", m.g, where);
  read(j, "max_excitation", m.max_excitation, where);
  read(j, "rwa_only", m.rwa_only, where);
  if (j.contains("dimension_limit")) {
    if (!limit) throw ConfigError(where + ": dimension_limit is only allowed in the top-level model");
    read(j, "dimension_limit", *limit, where);
  }
}

inline GridSpec read_grid(const json& j, const std::string& where) {
  allow_keys(j, where, {"min", "max", "count"});
  GridSpec g;
  if (!j.contains("count")) throw ConfigError(where + ": count is required");
  read(j, "count", g.count, where);
  if (g.count == 1 && j.contains("min") && !j.contains("max")) {
    read(j, "min", g.min, where);
    g.max = g.min;
    return g;
  }
  if (!j.contains("min") || !j.contains("max")) throw ConfigError(where + ": min and max are required");
  read(j, "min", g.min, where);
  read(j, "max", g.max, where);
  g.validate(where);
  return g;
}

inline Fault fault_from_string(const std::string& s) {
  if (s == "none") return Fault::none;
  if (s == "crw_sign") return Fault::crw_sign;
  if (s == "crw_parity") return Fault::crw_parity;
  throw ConfigError("validate.fault: unknown fault '" + s + "'");
}

inline Sector sector_from_string(const std::string& s) {
  if (s == "even") return Sector::even;
  if (s == "odd") return Sector::odd;
  if (s == "both") return Sector::both;
  throw ConfigError("spectrum.sector: expected even, odd or both");
}

inline SweepJob read_sweep(const json& j, const RunConfig& rc, std::size_t index) {
  const std::string where = "sweep[" + std::to_string(index) + "]";
  allow_keys(j, where,
             {"name", "axis", "grid", "secondary_axis", "secondary_grid", "omega_in",
              "rwa_compare", "overlays", "quasi_bound", "maps", "cache_spectra", "model"});
  SweepJob job;
  job.name = rc.output.name;
  read(j, "name", job.name, where);
  SweepSpec& s = job.spec;
  s.base = rc.model;
  if (j.contains("model")) read_model(j.at("model"), s.base, nullptr, where + ".model");
  std::string axis = "omega_in";
  read(j, "axis", axis, where);
  s.axis = axis_from_string(axis);
  auto default_grid = [&](Axis a) -> GridSpec {
    switch (a) {
      case Axis::omega_in:
        return {s.base.omega_c - 2.0 * s.base.xi, s.base.omega_c + 2.0 * s.base.xi, 400};
      case Axis::g: return {0.0, 1.0, 61};
      case Axis::eta: return {s.base.xi / 60.0, s.base.xi, 60};
    }
    return {};
  };
  s.grid = j.contains("grid") ? read_grid(j.at("grid"), where + ".grid") : default_grid(s.axis);
  if (j.contains("secondary_axis") && !j.at("secondary_axis").is_null()) {
    std::string sec;
    read(j, "secondary_axis", sec, where);
    s.secondary_axis = axis_from_string(sec);
    s.secondary_grid = j.contains("secondary_grid")
                           ? read_grid(j.at("secondary_grid"), where + ".secondary_grid")
                           : default_grid(*s.secondary_axis);
  } else if (j.contains("secondary_grid")) {
    throw ConfigError(where + ": secondary_grid without secondary_axis");
  }
  read(j, "omega_in", s.omega_in, where);
  read(j, "rwa_compare", s.rwa_compare, where);
  read(j, "overlays", job.overlays, where);
  read(j, "quasi_bound", s.quasi_bound_overlay, where);
  read(j, "maps", job.maps, where);
  read(j, "cache_spectra", s.cache_spectra, where);
  if (job.name.empty() || job.name.find_first_of("/\\") != std::string::npos)
    throw ConfigError(where + ".name: must be a plain file stem");
  if (s.quasi_bound_overlay) job.overlays = true;
  s.bound_threshold = rc.bound_states.threshold;
  s.limits = rc.limits;
  s.solve = rc.solve;
  s.pole_nudge = rc.pole_nudge;
  s.threads = rc.threads;
  s.dimension_limit = rc.dimension_limit;
  return job;
}

}  // namespace detail

/// Builds a RunConfig from JSON. Unknown keys and wrong types are rejected;
/// the model invariants are re-checked.
inline RunConfig parse_config(const json& root, unsigned threads = 1) {
  using namespace detail;
  allow_keys(root, "config",
             {"model", "solver", "bound_states", "spectrum", "scatter", "sweep", "validate",
              "output"});
  RunConfig rc;
  rc.source = root;
  rc.threads = threads == 0 ? 1 : threads;
  if (root.contains("model")) read_model(root.at("model"), rc.model, &rc.dimension_limit, "model");
  rc.model.validate();

  if (root.contains("solver")) {
    const json& j = root.at("solver");
    allow_keys(j, "solver",
               {"dense_block_limit", "use_mirror", "pole_tolerance", "amplitude_floor",
                "pole_nudge"});
    read(j, "dense_block_limit", rc.limits.dense_block_limit, "solver");
    read(j, "use_mirror", rc.limits.use_mirror, "solver");
    read(j, "pole_tolerance", rc.solve.pole_tolerance, "solver");
    read(j, "amplitude_floor", rc.solve.amplitude_floor, "solver");
    read(j, "pole_nudge", rc.pole_nudge, "solver");
  }
  if (root.contains("output")) {
    const json& j = root.at("output");
    allow_keys(j, "output", {"dir", "name"});
    read(j, "dir", rc.output.dir, "output");
    read(j, "name", rc.output.name, "output");
  }
  if (root.contains("bound_states")) {
    const json& j = root.at("bound_states");
    allow_keys(j, "bound_states", {"threshold", "g_grid", "bwpt", "bwpt_tolerance"});
    read(j, "threshold", rc.bound_states.threshold, "bound_states");
    if (j.contains("g_grid")) rc.bound_states.g_grid = read_grid(j.at("g_grid"), "bound_states.g_grid");
    read(j, "bwpt", rc.bound_states.bwpt, "bound_states");
    read(j, "bwpt_tolerance", rc.bound_states.bwpt_tolerance, "bound_states");
    if (!(rc.bound_states.threshold > 0.0))
      throw ConfigError("bound_states.threshold must be positive");
    if (rc.bound_states.g_grid.min < 0.0) throw ConfigError("bound_states.g_grid: g must be >= 0");
  }
  if (root.contains("spectrum")) {
    const json& j = root.at("spectrum");
    allow_keys(j, "spectrum", {"sector", "quasi_bound", "min_excitation"});
    std::string sec = "both";
    read(j, "sector", sec, "spectrum");
    rc.spectrum.sector = sector_from_string(sec);
    read(j, "quasi_bound", rc.spectrum.quasi_bound, "spectrum");
    read(j, "min_excitation", rc.spectrum.min_excitation, "spectrum");
  }
  if (root.contains("scatter")) {
    const json& j = root.at("scatter");
    allow_keys(j, "scatter", {"omega_in"});
    double w = 0.0;
    if (j.contains("omega_in")) {
      read(j, "omega_in", w, "scatter");
      rc.scatter_omega_in = w;
    }
  }
  if (root.contains("validate")) {
    const json& j = root.at("validate");
    allow_keys(j, "validate", {"fault", "coarse_grid", "draws"});
    std::string f = "none";
    read(j, "fault", f, "validate");
    rc.validate.fault = fault_from_string(f);
    read(j, "coarse_grid", rc.validate.coarse_grid, "validate");
    read(j, "draws", rc.validate.draws, "validate");
    if (rc.validate.coarse_grid < 2) throw ConfigError("validate.coarse_grid must be >= 2");
    if (rc.validate.draws < 1) throw ConfigError("validate.draws must be >= 1");
  }
  if (root.contains("sweep")) {
    const json& j = root.at("sweep");
    if (j.is_array()) {
      if (j.empty()) throw ConfigError("sweep: empty list");
      for (std::size_t i = 0; i < j.size(); ++i) rc.sweeps.push_back(read_sweep(j[i], rc, i));
    } else {
      rc.sweeps.push_back(read_sweep(j, rc, 0));
    }
    std::set<std::string> names;
    for (const auto& s : rc.sweeps) {
      if (!names.insert(s.name).second) throw ConfigError("sweep: duplicate name '" + s.name + "'");
      s.spec.validate();
    }
  }
  return rc;
}

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

inline std::filesystem::path preset_directory() {
  if (const char* env = std::getenv("CCAQED_PRESET_DIR")) return env;
#ifdef CCAQED_PRESET_DIR
  return CCAQED_PRESET_DIR;
#else
  return "presets";
#endif
}

inline json load_preset(const std::string& name) {
  if (name.empty() || name.find_first_of("/\\.") != std::string::npos)
    throw ConfigError("invalid preset name '" + name + "'");
  const auto path = preset_directory() / (name + ".json");
  if (!std::filesystem::exists(path)) throw ConfigError("unknown preset '" + name + "'");
  return load_json_file(path);
}

/// 64-bit FNV-1a of the canonical (sorted-key, compact) JSON text.
inline std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ccaqed

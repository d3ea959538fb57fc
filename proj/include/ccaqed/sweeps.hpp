#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "ccaqed/error.hpp"
#include "ccaqed/hamiltonian.hpp"
#include "ccaqed/model.hpp"
#include "ccaqed/parallel.hpp"
#include "ccaqed/scattering.hpp"
#include "ccaqed/spectral.hpp"

namespace ccaqed {

enum class Axis { omega_in, g, eta };

inline std::string to_string(Axis a) {
  switch (a) {
    case Axis::omega_in: return "omega_in";
    case Axis::g: return "g";
    case Axis::eta: return "eta";
  }
  return "?";
}

inline Axis axis_from_string(const std::string& s) {
  if (s == "omega_in") return Axis::omega_in;
  if (s == "g") return Axis::g;
  if (s == "eta") return Axis::eta;
  throw ConfigError("unknown sweep axis '" + s + "' (expected omega_in, g or eta)");
}

struct GridSpec {
  double min = 0.0;
  double max = 0.0;
  int count = 0;

  void validate(const std::string& what) const {
    if (count < 1) throw ConfigError(what + ": grid count must be >= 1");
    if (!std::isfinite(min) || !std::isfinite(max)) throw ConfigError(what + ": non-finite range");
    if (min > max) throw ConfigError(what + ": min > max");
    if (count == 1 && min != max) throw ConfigError(what + ": one-point grid needs min == max");
  }
  std::vector<double> points() const {
    std::vector<double> v(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i)
      v[i] = count == 1 ? min : min + (max - min) * double(i) / double(count - 1);
    if (count > 1) v.back() = max;
    return v;
  }
};

inline constexpr double kBandMargin = 1e-4;
inline constexpr double kDefectTolerance = 1e-8;

struct SweepSpec {
  ModelParams base;
  Axis axis = Axis::omega_in;
  GridSpec grid;
  std::optional<Axis> secondary_axis;
  GridSpec secondary_grid;
  double omega_in = 1.0;  ///< used when neither axis is omega_in
  bool rwa_compare = false;
  double bound_threshold = 0.01;
  bool quasi_bound_overlay = false;
  SolverLimits limits;
  SolveOptions solve;
  double pole_nudge = 1e-7;
  bool cache_spectra = true;
  unsigned threads = 1;
  std::size_t dimension_limit = kDefaultDimensionLimit;

  bool has_axis(Axis a) const { return axis == a || (secondary_axis && *secondary_axis == a); }

  /// Grid for an axis, with omega_in clipped into the open band.
  std::vector<double> points(Axis a, const GridSpec& gs) const {
    GridSpec c = gs;
    if (a == Axis::omega_in) {
      const double lo = base.omega_c - 2.0 * base.xi + kBandMargin;
      const double hi = base.omega_c + 2.0 * base.xi - kBandMargin;
      c.min = std::max(c.min, lo);
      c.max = std::min(c.max, hi);
      if (c.count == 1) c.max = c.min;
      if (c.min > c.max) throw ConfigError("omega_in grid lies outside the band");
    }
    return c.points();
  }
  std::vector<double> primary_points() const { return points(axis, grid); }
  std::vector<double> secondary_points() const {
    return secondary_axis ? points(*secondary_axis, secondary_grid) : std::vector<double>{};
  }

  void validate() const {
    base.validate();
    grid.validate(to_string(axis));
    if (secondary_axis) {
      if (*secondary_axis == axis) throw ConfigError("secondary axis repeats the primary axis");
      secondary_grid.validate(to_string(*secondary_axis));
    }
    if (!(base.xi > 0.0)) throw ConfigError("sweeps need xi > 0");
    auto check = [&](Axis a, const GridSpec& gs) {
      if (a == Axis::g && gs.min < 0.0) throw ConfigError("g grid must be non-negative");
      if (a == Axis::eta && (gs.min <= 0.0 || gs.max > base.xi))
        throw ConfigError("eta grid must lie in (0, xi]");
    };
    check(axis, grid);
    if (secondary_axis) check(*secondary_axis, secondary_grid);
    if (!has_axis(Axis::eta) && !(base.eta > 0.0))
      throw ConfigError("eta must be positive: the scatterer is decoupled from the leads");
    if (!has_axis(Axis::omega_in) &&
        !(std::abs(omega_in - base.omega_c) < 2.0 * base.xi))
      throw ConfigError("fixed omega_in lies outside the band");
    if (!(bound_threshold > 0.0)) throw ConfigError("bound_threshold must be positive");
    primary_points();
    secondary_points();
  }
};

/// Scatterer data for one H_S (fixed g and rwa flag); eta and omega_in free.
struct SliceKernel {
  double g = 0.0;
  bool rwa_only = false;
  std::optional<TransitionTables> tables;
  double e0 = std::numeric_limits<double>::quiet_NaN();
  double e1 = std::numeric_limits<double>::quiet_NaN();
  double e2 = std::numeric_limits<double>::quiet_NaN();
  double r0 = std::numeric_limits<double>::quiet_NaN();
  double r1 = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

inline std::string kernel_key(const ModelParams& p) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "N=%d,c=%d,wc=%.17g,wa=%.17g,xi=%.17g,g=%.17g,rwa=%d",
                p.n_cavities, p.max_excitation, p.omega_c, p.omega_a, p.xi, p.g,
                p.rwa_only ? 1 : 0);
  return buf;
}

inline SliceKernel build_kernel(const ModelParams& p, const Basis& basis, double threshold,
                                const SolverLimits& lim) {
  SliceKernel k;
  k.g = p.g;
  k.rwa_only = p.rwa_only;
  try {
    const Spectrum sp = diagonalize(build_sc_hamiltonian(p, basis), basis, Sector::both, lim);
    const BoundStateSet bs = classify_bound_states(sp, basis, p, threshold);
    if (const auto* s = bs.find(0)) k.e0 = s->energy, k.r0 = s->localization_ratio;
    if (const auto* s = bs.find(1)) k.e1 = s->energy, k.r1 = s->localization_ratio;
    if (const auto* s = bs.find(2)) k.e2 = s->energy, k.r2 = s->localization_ratio;
    k.tables = transition_amplitudes(sp, bs, basis);
  } catch (const Error& e) {
    k.error = e.what();
  }
  return k;
}

enum class PointFlag { ok, augmented, nudged, inexact, pole_skip, error };

inline std::string to_string(PointFlag f) {
  switch (f) {
    case PointFlag::ok: return "ok";
    case PointFlag::augmented: return "augmented";
    case PointFlag::nudged: return "nudged";
    case PointFlag::inexact: return "inexact";
    case PointFlag::pole_skip: return "pole_skip";
    case PointFlag::error: return "error";
  }
  return "?";
}

struct PointResult {
  double axis1 = 0.0;
  double axis2 = 0.0;
  double omega_in = 0.0;  ///< frequency actually solved (after a nudge)
  Flows flows;
  double residual = 0.0;
  PointFlag flag = PointFlag::ok;
  std::string message;
};

inline PointResult evaluate_point(const ModelParams& p, const SliceKernel& k, double omega,
                                  const SweepSpec& spec) {
  PointResult r;
  r.omega_in = omega;
  auto fail = [&](PointFlag f, const std::string& msg) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    r.flows = Flows{nan, nan, nan, nan, nan};
    r.residual = nan;
    r.flag = f;
    r.message = msg;
  };
  if (!k.tables) {
    fail(PointFlag::error, k.error.empty() ? "no scatterer kernel" : k.error);
    return r;
  }
  auto run = [&](double w) {
    const ScatteringSolution s = solve_scattering(p, *k.tables, w, spec.solve);
    r.flows = flows(s);
    r.residual = s.residual;
    r.omega_in = w;
    if (s.augmented) r.flag = PointFlag::augmented;
  };
  try {
    try {
      run(omega);
    } catch (const PoleError&) {
      run(omega + spec.pole_nudge);
      r.flag = PointFlag::nudged;
    }
  } catch (const PoleError& e) {
    fail(PointFlag::pole_skip, e.what());
    return r;
  } catch (const Error& e) {
    fail(PointFlag::error, e.what());
    return r;
  }
  if (r.flows.conservation_defect > kDefectTolerance) r.flag = PointFlag::inexact;
  return r;
}

struct SliceInfo {
  double axis2 = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> g;  ///< set when g is constant along the slice
  double e0 = std::numeric_limits<double>::quiet_NaN();
  double e1 = std::numeric_limits<double>::quiet_NaN();
  double e2 = std::numeric_limits<double>::quiet_NaN();
  double threshold = std::numeric_limits<double>::quiet_NaN();
  double quasi_bound = std::numeric_limits<double>::quiet_NaN();
  double omega_min = std::numeric_limits<double>::quiet_NaN();
  double omega_min_rwa = std::numeric_limits<double>::quiet_NaN();
  std::vector<DarkMode> dark_modes;
};

struct SweepResult {
  SweepSpec spec;
  std::vector<double> axis1, axis2;  ///< axis2 holds one value when 1-D
  std::vector<PointResult> points;      ///< index = slice * axis1.size() + i
  std::vector<PointResult> points_rwa;  ///< empty unless rwa_compare
  std::vector<SliceInfo> slices;
  std::vector<std::string> cache_keys;
  std::size_t kernel_builds = 0;

  const PointResult& at(std::size_t i1, std::size_t i2, bool rwa = false) const {
    return (rwa ? points_rwa : points).at(i2 * axis1.size() + i1);
  }
};

namespace detail {

inline ModelParams point_params(const SweepSpec& s, double a1, double a2, bool rwa) {
  ModelParams p = s.base;
  auto set = [&](Axis a, double v) {
    if (a == Axis::g) p.g = v;
    if (a == Axis::eta) p.eta = v;
  };
  set(s.axis, a1);
  if (s.secondary_axis) set(*s.secondary_axis, a2);
  if (rwa) p.rwa_only = true;
  return p;
}

inline double point_omega(const SweepSpec& s, double a1, double a2) {
  if (s.axis == Axis::omega_in) return a1;
  if (s.secondary_axis && *s.secondary_axis == Axis::omega_in) return a2;
  return s.omega_in;
}

/// Secondary value used to label a 1-D sweep: the fixed g.
inline double fixed_axis2(const SweepSpec& s) { return s.base.g; }

}  // namespace detail

/// Vertex of the parabola through three points; returns x1 if they are collinear.
inline double parabola_vertex(double x0, double y0, double x1, double y1, double x2, double y2) {
  const double a = (x1 - x0) * (y1 - y2);
  const double b = (x1 - x2) * (y1 - y0);
  const double den = a - b;
  if (den == 0.0) return x1;
  return x1 - 0.5 * ((x1 - x0) * a - (x1 - x2) * b) / den;
}

struct MinimumPoint {
  double axis2 = 0.0;
  double omega_min = std::numeric_limits<double>::quiet_NaN();  ///< NaN marks a flat slice
  double value = std::numeric_limits<double>::quiet_NaN();
  std::size_t grid_index = 0;
  bool flat = false;
};

/// Per-slice minimum of J_Te over the omega_in grid, refined by a parabola
/// through the grid minimum and its neighbours.
inline std::vector<MinimumPoint> transmission_minimum(const SweepResult& r, bool rwa = false) {
  if (r.spec.axis != Axis::omega_in)
    throw ContractError("transmission_minimum needs omega_in as the primary axis");
  if (rwa && r.points_rwa.empty()) throw ContractError("sweep has no RWA columns");
  std::vector<MinimumPoint> out;
  const std::size_t n = r.axis1.size();
  for (std::size_t s = 0; s < r.axis2.size(); ++s) {
    MinimumPoint m;
    m.axis2 = r.axis2[s];
    std::size_t best = n;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = r.at(i, s, rwa).flows.transmit_elastic;
      if (std::isnan(y)) continue;
      hi = std::max(hi, y);
      if (y < lo) lo = y, best = i;
    }
    if (best == n || best == 0 || best + 1 == n || hi - lo < 1e-14) {
      m.flat = true;
      out.push_back(m);
      continue;
    }
    m.grid_index = best;
    m.value = lo;
    const double y0 = r.at(best - 1, s, rwa).flows.transmit_elastic;
    const double y2 = r.at(best + 1, s, rwa).flows.transmit_elastic;
    m.omega_min = (std::isnan(y0) || std::isnan(y2))
                      ? r.axis1[best]
                      : parabola_vertex(r.axis1[best - 1], y0, r.axis1[best], lo,
                                        r.axis1[best + 1], y2);
    out.push_back(m);
  }
  return out;
}

/// Attaches reference lines to every slice: the psi_2 threshold
/// E2 - E0 + omega_c - 2 xi, the dark-mode lines, the transmission minimum
/// and (on request) the N_ext >= 3 quasi-bound energy relative to E0.
inline void overlay_references(SweepResult& r, bool quasi_bound = false) {
  const auto dark = dark_mode_energies(r.spec.base);
  std::vector<MinimumPoint> mins, mins_rwa;
  if (r.spec.axis == Axis::omega_in) {
    mins = transmission_minimum(r);
    if (!r.points_rwa.empty()) mins_rwa = transmission_minimum(r, true);
  }
  std::vector<std::size_t> todo;
  for (std::size_t s = 0; s < r.slices.size(); ++s) {
    SliceInfo& info = r.slices[s];
    info.dark_modes = dark;
    if (!std::isnan(info.e2) && !std::isnan(info.e0))
      info.threshold = info.e2 - info.e0 + r.spec.base.omega_c - 2.0 * r.spec.base.xi;
    if (!mins.empty()) info.omega_min = mins[s].omega_min;
    if (!mins_rwa.empty()) info.omega_min_rwa = mins_rwa[s].omega_min;
    if (quasi_bound && info.g && !std::isnan(info.e0)) todo.push_back(s);
  }
  parallel_for(todo.size(), r.spec.threads, [&](std::size_t t) {
    SliceInfo& info = r.slices[todo[t]];
    ModelParams p = r.spec.base;
    p.g = *info.g;
    try {
      const Basis b(p, r.spec.dimension_limit);
      info.quasi_bound = subspace_quasi_bound_state(p, b, info.e0).energy_rel;
    } catch (const Error&) {
    }
  });
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (v == 0.0) v = 0.0;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return buf;
}

/// Kernels shared between sweeps, keyed by kernel_key plus the bound-state
/// threshold.
using KernelStore = std::map<std::string, SliceKernel>;

/// Runs the sweep. Spectra are computed once per distinct H_S (g value and
/// RWA flag) in a parallel pre-pass; eta and omega_in only enter the
/// boundary equations and reuse them. With a store, kernels found there are
/// reused and new ones are added; kernel_builds counts only fresh builds.
inline SweepResult sweep(const SweepSpec& spec, KernelStore* store = nullptr) {
  spec.validate();
  SweepResult r;
  r.spec = spec;
  r.axis1 = spec.primary_points();
  r.axis2 = spec.secondary_axis ? spec.secondary_points()
                                : std::vector<double>{detail::fixed_axis2(spec)};
  const std::size_t n1 = r.axis1.size(), n2 = r.axis2.size(), np = n1 * n2;
  const Basis basis(spec.base, spec.dimension_limit);

  struct Job {
    double a1, a2, omega;
    ModelParams p;
    std::size_t kernel;
  };
  std::vector<bool> variants{false};
  if (spec.rwa_compare) variants.push_back(true);
  std::map<std::string, std::size_t> key_to_kernel;
  std::vector<ModelParams> kernel_params;
  std::vector<std::vector<Job>> jobs(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (std::size_t s = 0; s < n2; ++s) {
      for (std::size_t i = 0; i < n1; ++i) {
        Job j{r.axis1[i], r.axis2[s], detail::point_omega(spec, r.axis1[i], r.axis2[s]),
              detail::point_params(spec, r.axis1[i], r.axis2[s], variants[v]), 0};
        const std::string key = kernel_key(j.p);
        auto [it, inserted] = key_to_kernel.emplace(key, kernel_params.size());
        if (inserted) {
          kernel_params.push_back(j.p);
          r.cache_keys.push_back(key);
        }
        j.kernel = it->second;
        jobs[v].push_back(j);
      }
    }
  }

  std::vector<SliceKernel> kernels;
  if (spec.cache_spectra) {
    kernels.resize(kernel_params.size());
    auto store_key = [&](std::size_t k) {
      return r.cache_keys[k] + ",threshold=" + format_number(spec.bound_threshold);
    };
    std::vector<std::size_t> fresh;
    for (std::size_t k = 0; k < kernels.size(); ++k) {
      auto it = store ? store->find(store_key(k)) : KernelStore::iterator{};
      if (store && it != store->end())
        kernels[k] = it->second;
      else
        fresh.push_back(k);
    }
    parallel_for(fresh.size(), spec.threads, [&](std::size_t t) {
      const std::size_t k = fresh[t];
      kernels[k] = build_kernel(kernel_params[k], basis, spec.bound_threshold, spec.limits);
    });
    if (store)
      for (std::size_t k : fresh) store->emplace(store_key(k), kernels[k]);
    r.kernel_builds = fresh.size();
  }

  for (std::size_t v = 0; v < variants.size(); ++v) {
    std::vector<PointResult>& out = v == 0 ? r.points : r.points_rwa;
    out.resize(np);
    parallel_for(np, spec.threads, [&](std::size_t i) {
      const Job& j = jobs[v][i];
      PointResult pr;
      if (spec.cache_spectra) {
        pr = evaluate_point(j.p, kernels[j.kernel], j.omega, spec);
      } else {
        const SliceKernel k = build_kernel(j.p, basis, spec.bound_threshold, spec.limits);
        pr = evaluate_point(j.p, k, j.omega, spec);
      }
      pr.axis1 = j.a1;
      pr.axis2 = j.a2;
      out[i] = std::move(pr);
    });
    if (!spec.cache_spectra) r.kernel_builds += np;
  }

  r.slices.resize(n2);
  for (std::size_t s = 0; s < n2; ++s) {
    SliceInfo& info = r.slices[s];
    info.axis2 = r.axis2[s];
    if (spec.axis == Axis::g) continue;
    const ModelParams p = detail::point_params(spec, r.axis1[0], r.axis2[s], false);
    info.g = p.g;
    const SliceKernel k = spec.cache_spectra
                              ? kernels[key_to_kernel.at(kernel_key(p))]
                              : build_kernel(p, basis, spec.bound_threshold, spec.limits);
    info.e0 = k.e0;
    info.e1 = k.e1;
    info.e2 = k.e2;
  }
  return r;
}


/// Long-format CSV, one row per grid point. `preamble` lines are written
/// first, each prefixed with "# ".
inline void write_sweep_csv(std::ostream& os, const SweepResult& r,
                            const std::vector<std::string>& preamble = {}) {
  for (const auto& l : preamble) os << "# " << l << '\n';
  const bool rwa = !r.points_rwa.empty();
  os << "axis1,axis2,J_Te,J_Re,J_Tin,J_Rin,conservation_defect,flag";
  if (rwa) os << ",J_Te_rwa,J_Re_rwa,J_Tin_rwa,J_Rin_rwa,conservation_defect_rwa,flag_rwa";
  os << '\n';
  auto cols = [&](const PointResult& p) {
    const Flows& f = p.flows;
    os << format_number(f.transmit_elastic) << ',' << format_number(f.reflect_elastic) << ','
       << format_number(f.transmit_inelastic) << ',' << format_number(f.reflect_inelastic)
       << ',' << format_number(f.conservation_defect) << ',' << to_string(p.flag);
  };
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const PointResult& p = r.points[i];
    os << format_number(p.axis1) << ',' << format_number(p.axis2) << ',';
    cols(p);
    if (rwa) {
      os << ',';
      cols(r.points_rwa[i]);
    }
    os << '\n';
  }
}

/// Per-slice reference lines.
inline void write_overlay_csv(std::ostream& os, const SweepResult& r,
                              const std::vector<std::string>& preamble = {}) {
  for (const auto& l : preamble) os << "# " << l << '\n';
  const auto dark = dark_mode_energies(r.spec.base);
  os << "axis2,g,E0,E1,E2,threshold,quasi_bound,omega_min,omega_min_rwa";
  for (const auto& d : dark) os << ",dark_k" << d.k;
  os << '\n';
  for (const auto& s : r.slices) {
    os << format_number(s.axis2) << ','
       << format_number(s.g ? *s.g : std::numeric_limits<double>::quiet_NaN()) << ','
       << format_number(s.e0) << ',' << format_number(s.e1) << ',' << format_number(s.e2)
       << ',' << format_number(s.threshold) << ',' << format_number(s.quasi_bound) << ','
       << format_number(s.omega_min) << ',' << format_number(s.omega_min_rwa);
    for (const auto& d : dark) os << ',' << format_number(d.gap);
    os << '\n';
  }
}

enum class MapKind { total, inelastic };

/// Heat-map CSV of J_T (elastic + inelastic) or J_Tin with the slice
/// reference lines repeated on every row.
inline void write_map_csv(std::ostream& os, const SweepResult& r, MapKind kind,
                          const std::vector<std::string>& preamble = {}) {
  for (const auto& l : preamble) os << "# " << l << '\n';
  os << "axis1,axis2," << (kind == MapKind::total ? "J_T" : "J_Tin")
     << ",threshold,quasi_bound,omega_min,flag\n";
  const std::size_t n1 = r.axis1.size();
  for (std::size_t i = 0; i < r.points.size(); ++i) {
    const PointResult& p = r.points[i];
    const SliceInfo& s = r.slices[i / n1];
    const double v = kind == MapKind::total ? p.flows.transmit_total() : p.flows.transmit_inelastic;
    os << format_number(p.axis1) << ',' << format_number(p.axis2) << ',' << format_number(v)
       << ',' << format_number(s.threshold) << ',' << format_number(s.quasi_bound) << ','
       << format_number(s.omega_min) << ',' << to_string(p.flag) << '\n';
  }
}

}  // namespace ccaqed

#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ccaqed/config.hpp"
#include "ccaqed/error.hpp"
#include "ccaqed/hamiltonian.hpp"
#include "ccaqed/model.hpp"
#include "ccaqed/parallel.hpp"
#include "ccaqed/scattering.hpp"
#include "ccaqed/spectral.hpp"
#include "ccaqed/sweeps.hpp"

#ifndef CCAQED_VERSION
#define CCAQED_VERSION "0.0.0"
#endif

namespace ccaqed {

inline constexpr const char* kVersion = CCAQED_VERSION;

/// Files produced by a command. Nothing touches the disk until commit(),
/// which writes every file to a temporary name first and renames them only
/// once all writes have succeeded.
class OutputSet {
 public:
  void add(std::string name, std::string content) {
    files_.emplace_back(std::move(name), std::move(content));
  }
  const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }
  const std::string& content(const std::string& name) const {
    for (const auto& f : files_)
      if (f.first == name) return f.second;
    throw ContractError("no output named " + name);
  }

  std::vector<std::filesystem::path> commit(const std::filesystem::path& dir) const {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ResourceLimitError("cannot create output directory " + dir.string());
    std::vector<fs::path> tmp, done;
    auto cleanup = [&] {
      for (const auto& t : tmp) fs::remove(t, ec);
    };
    for (const auto& [name, text] : files_) {
      const fs::path t = dir / (name + ".tmp");
      tmp.push_back(t);
      std::ofstream out(t, std::ios::binary);
      out << text;
      out.close();
      if (!out) {
        cleanup();
        throw ResourceLimitError("cannot write " + t.string());
      }
    }
    for (std::size_t i = 0; i < files_.size(); ++i) {
      const fs::path final_path = dir / files_[i].first;
      fs::rename(tmp[i], final_path, ec);
      if (ec) {
        cleanup();
        throw ResourceLimitError("cannot move " + tmp[i].string() + " into place");
      }
      done.push_back(final_path);
    }
    return done;
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

struct CommandResult {
  OutputSet files;
  std::string summary;
  int exit_code = 0;
};

namespace detail {

inline std::vector<std::string> preamble(const std::string& hash) {
  return {"config_hash=" + hash, "ccaqed " + std::string(kVersion) + ", energies in units of omega_c"};
}

inline std::string preamble_text(const std::string& hash) {
  std::string s;
  for (const auto& l : preamble(hash)) s += "# " + l + "\n";
  return s;
}

inline json model_json(const ModelParams& p) {
  return {{"n_cavities", p.n_cavities}, {"atom_site", p.atom_site()}, {"omega_c", p.omega_c},
          {"omega_a", p.omega_a},       {"xi", p.xi},                  {"eta", p.eta},
          {"g", p.g},                   {"max_excitation", p.max_excitation},
          {"rwa_only", p.rwa_only}};
}

inline json grid_json(const GridSpec& g) {
  return {{"min", g.min}, {"max", g.max}, {"count", g.count}};
}

inline json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace detail

/// Fig. 2 style table of bound-state energies over a g grid.
inline CommandResult cmd_bound_states(const RunConfig& rc, const std::string& hash) {
  const auto gs = rc.bound_states.g_grid.points();
  const Basis basis(rc.model, rc.dimension_limit);
  struct Row {
    double g;
    double e[3], r[3], bw[3];
    int par[3];
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<Row> rows(gs.size());
  parallel_for(gs.size(), rc.threads, [&](std::size_t i) {
    ModelParams p = rc.model;
    p.g = gs[i];
    Row row{gs[i], {nan, nan, nan}, {nan, nan, nan}, {nan, nan, nan}, {0, 0, 0}};
    const Spectrum sp = diagonalize(build_sc_hamiltonian(p, basis), basis, Sector::both, rc.limits);
    const BoundStateSet bs = classify_bound_states(sp, basis, p, rc.bound_states.threshold);
    for (int l = 0; l < 3; ++l) {
      if (const auto* s = bs.find(l)) {
        row.e[l] = s->energy;
        row.r[l] = s->localization_ratio;
        row.par[l] = s->parity;
      }
    }
    if (rc.bound_states.bwpt) {
      const RabiLevelRef refs[3] = {{0, +1}, {0, -1}, {1, +1}};
      for (int l = 0; l < 3; ++l) {
        try {
          row.bw[l] = bwpt_bound_energy(p, refs[l]).energy;
        } catch (const NumericalError&) {
        }
      }
    }
    rows[i] = row;
  });

  std::ostringstream os;
  os << detail::preamble_text(hash);
  os << "g,E0,E1,E2,parity0,parity1,parity2,ratio0,ratio1,ratio2";
  if (rc.bound_states.bwpt) os << ",bwpt_E0,bwpt_E1,bwpt_E2,bwpt_agree";
  os << '\n';
  int disagreements = 0;
  for (const auto& r : rows) {
    os << format_number(r.g);
    for (double e : r.e) os << ',' << format_number(e);
    for (int q : r.par) os << ',' << (q == 0 ? std::string("nan") : (q > 0 ? "+1" : "-1"));
    for (double x : r.r) os << ',' << format_number(x);
    if (rc.bound_states.bwpt) {
      bool agree = true;
      for (int l = 0; l < 3; ++l) {
        os << ',' << format_number(r.bw[l]);
        if (!std::isnan(r.e[l]) && !(std::abs(r.bw[l] - r.e[l]) <= rc.bound_states.bwpt_tolerance))
          agree = false;
      }
      os << ',' << (agree ? 1 : 0);
      if (!agree) ++disagreements;
    }
    os << '\n';
  }
  CommandResult res;
  res.files.add(rc.output.name + "_bound_states.csv", os.str());
  res.summary = "bound-states: " + std::to_string(rows.size()) + " g values";
  if (rc.bound_states.bwpt)
    res.summary += ", BWPT/ED disagreements: " + std::to_string(disagreements);
  return res;
}

/// Eigenvalues, parities and localization ratios; optionally the N_ext >= 3
/// quasi-bound state and its site profile.
inline CommandResult cmd_spectrum(const RunConfig& rc, const std::string& hash) {
  const ModelParams& p = rc.model;
  const Basis basis(p, rc.dimension_limit);
  const Spectrum sp = diagonalize(build_sc_hamiltonian(p, basis), basis, rc.spectrum.sector, rc.limits);
  const Eigen::VectorXd ratio = localization_ratios(sp, basis);
  std::map<std::size_t, int> labels;
  std::optional<double> e0;
  if (rc.spectrum.sector == Sector::both) {
    const BoundStateSet bs = classify_bound_states(sp, basis, p, rc.bound_states.threshold);
    for (const auto& s : bs.states) labels[s.spectrum_index] = s.label;
    if (const auto* g = bs.find(0)) e0 = g->energy;
  }
  std::ostringstream os;
  os << detail::preamble_text(hash) << "index,energy,parity,localization_ratio,bound_label\n";
  for (std::size_t m = 0; m < sp.size(); ++m) {
    os << m << ',' << format_number(sp.energy(m)) << ',' << (sp.parity(m) > 0 ? "+1" : "-1")
       << ',' << format_number(ratio[Eigen::Index(m)]) << ',';
    if (auto it = labels.find(m); it != labels.end()) os << it->second;
    os << '\n';
  }
  CommandResult res;
  res.files.add(rc.output.name + "_spectrum.csv", os.str());
  res.summary = "spectrum: " + std::to_string(sp.size()) + " levels";
  if (rc.spectrum.quasi_bound) {
    if (!e0) e0 = lowest_eigenpair(build_sc_hamiltonian(p, basis), basis, +1).energy;
    const QuasiBoundState q =
        subspace_quasi_bound_state(p, basis, *e0, rc.spectrum.min_excitation);
    std::ostringstream qs;
    qs << detail::preamble_text(hash) << "site,occupation,energy,energy_rel\n";
    for (std::size_t j = 0; j < q.profile.size(); ++j)
      qs << j + 1 << ',' << format_number(q.profile[j]) << ',' << format_number(q.energy) << ','
         << format_number(q.energy_rel) << '\n';
    res.files.add(rc.output.name + "_quasi_bound_profile.csv", qs.str());
    res.summary += ", quasi-bound E-E0=" + format_number(q.energy_rel);
  }
  return res;
}

/// Single-frequency scattering solve.
inline CommandResult cmd_scatter(const RunConfig& rc, const std::string& hash) {
  if (!rc.scatter_omega_in) throw ConfigError("scatter.omega_in is required (or --omega-in)");
  const ModelParams& p = rc.model;
  if (!(p.eta > 0.0)) throw ConfigError("eta must be positive for a scattering solve");
  const Basis basis(p, rc.dimension_limit);
  const Spectrum sp = diagonalize(build_sc_hamiltonian(p, basis), basis, Sector::both, rc.limits);
  const BoundStateSet bs = classify_bound_states(sp, basis, p, rc.bound_states.threshold);
  const TransitionTables t = transition_amplitudes(sp, bs, basis);
  const ScatteringSolution s = solve_scattering(p, t, *rc.scatter_omega_in, rc.solve);
  const Flows f = flows(s);
  std::ostringstream os;
  os << detail::preamble_text(hash)
     << "omega_in,k0,omega_out,inelastic_open,r_e_re,r_e_im,t_e_re,t_e_im,r_in_re,r_in_im,"
        "t_in_re,t_in_im,J_Te,J_Re,J_Tin,J_Rin,conservation_defect,residual,augmented\n";
  const auto& k = s.kinematics;
  os << format_number(k.omega_in) << ',' << format_number(k.k0) << ','
     << format_number(k.has_inelastic ? k.omega_out : std::numeric_limits<double>::quiet_NaN())
     << ',' << (k.inelastic_open ? 1 : 0);
  for (const cplx& a : {s.r_e, s.t_e, s.r_in, s.t_in})
    os << ',' << format_number(a.real()) << ',' << format_number(a.imag());
  os << ',' << format_number(f.transmit_elastic) << ',' << format_number(f.reflect_elastic) << ','
     << format_number(f.transmit_inelastic) << ',' << format_number(f.reflect_inelastic) << ','
     << format_number(f.conservation_defect) << ',' << format_number(s.residual) << ','
     << (s.augmented ? 1 : 0) << '\n';
  CommandResult res;
  res.files.add(rc.output.name + "_scatter.csv", os.str());
  res.summary = "scatter: J_Te=" + format_number(f.transmit_elastic) +
                " J_Re=" + format_number(f.reflect_elastic) +
                " J_Tin=" + format_number(f.transmit_inelastic) +
                " J_Rin=" + format_number(f.reflect_inelastic);
  return res;
}

/// Standing-wave modes of the segment with their atom couplings; dark modes
/// are those with G_k = 0.
inline CommandResult cmd_dark_lines(const RunConfig& rc, const std::string& hash) {
  const ModelParams& p = rc.model;
  std::ostringstream os;
  os << detail::preamble_text(hash) << "k,mode_energy,G_k,dark\n";
  int dark = 0;
  for (int k = 1; k <= p.n_cavities; ++k) {
    const double gk = mode_coupling(p, k);
    const bool is_dark = k % 2 == 0;
    dark += is_dark;
    os << k << ',' << format_number(p.omega_c - 2.0 * p.xi * std::cos(k * M_PI / (p.n_cavities + 1)))
       << ',' << format_number(gk) << ',' << (is_dark ? 1 : 0) << '\n';
  }
  CommandResult res;
  res.files.add(rc.output.name + "_dark_lines.csv", os.str());
  res.summary = "dark-lines: " + std::to_string(dark) + " dark modes";
  return res;
}

inline json sweep_metadata(const SweepJob& job, const SweepResult& r, const std::string& hash) {
  std::map<std::string, int> flags;
  for (const auto* v : {&r.points, &r.points_rwa})
    for (const auto& p : *v) ++flags[to_string(p.flag)];
  json meta;
  meta["name"] = job.name;
  meta["config_hash"] = hash;
  meta["version"] = kVersion;
  meta["units"] = "energies in units of omega_c";
  meta["model"] = detail::model_json(job.spec.base);
  meta["axis1"] = {{"name", to_string(job.spec.axis)}, {"grid", detail::grid_json(job.spec.grid)},
                   {"count", r.axis1.size()}};
  if (job.spec.secondary_axis)
    meta["axis2"] = {{"name", to_string(*job.spec.secondary_axis)},
                     {"grid", detail::grid_json(job.spec.secondary_grid)},
                     {"count", r.axis2.size()}};
  else
    meta["axis2"] = {{"name", "g"}, {"fixed", job.spec.base.g}, {"count", 1}};
  if (!job.spec.has_axis(Axis::omega_in)) meta["omega_in"] = job.spec.omega_in;
  meta["rwa_compare"] = job.spec.rwa_compare;
  meta["bound_threshold"] = job.spec.bound_threshold;
  meta["cache_keys"] = r.cache_keys;
  meta["kernel_builds"] = r.kernel_builds;
  meta["flags"] = flags;
  if (job.overlays) {
    json slices = json::array();
    for (const auto& s : r.slices) {
      json d = json::array();
      for (const auto& m : s.dark_modes) d.push_back({{"k", m.k}, {"omega", m.gap}});
      slices.push_back({{"axis2", s.axis2},
                        {"E0", detail::number_or_null(s.e0)},
                        {"E2", detail::number_or_null(s.e2)},
                        {"threshold", detail::number_or_null(s.threshold)},
                        {"quasi_bound", detail::number_or_null(s.quasi_bound)},
                        {"omega_min", detail::number_or_null(s.omega_min)},
                        {"omega_min_rwa", detail::number_or_null(s.omega_min_rwa)},
                        {"dark_modes", d}});
    }
    meta["overlays"] = slices;
  }
  return meta;
}

inline CommandResult cmd_sweep(const RunConfig& rc, const std::string& hash) {
  if (rc.sweeps.empty()) throw ConfigError("no sweep section in the configuration");
  CommandResult res;
  KernelStore store;
  for (const SweepJob& job : rc.sweeps) {
    SweepResult r = sweep(job.spec, &store);
    if (job.overlays) overlay_references(r, job.spec.quasi_bound_overlay);
    const auto pre = detail::preamble(hash);
    std::ostringstream main;
    write_sweep_csv(main, r, pre);
    res.files.add(job.name + ".csv", main.str());
    if (job.overlays) {
      std::ostringstream ov;
      write_overlay_csv(ov, r, pre);
      res.files.add(job.name + "_overlay.csv", ov.str());
    }
    if (job.maps) {
      std::ostringstream tot, inel;
      write_map_csv(tot, r, MapKind::total, pre);
      write_map_csv(inel, r, MapKind::inelastic, pre);
      res.files.add(job.name + "_total.csv", tot.str());
      res.files.add(job.name + "_inelastic.csv", inel.str());
    }
    res.files.add(job.name + "_meta.json", sweep_metadata(job, r, hash).dump(2) + "\n");
    std::size_t bad = 0;
    for (const auto* v : {&r.points, &r.points_rwa})
      for (const auto& p : *v) bad += p.flag == PointFlag::error || p.flag == PointFlag::pole_skip;
    if (!res.summary.empty()) res.summary += "\n";
    res.summary += "sweep " + job.name + ": " + std::to_string(r.points.size()) + " points, " +
                   std::to_string(r.kernel_builds) + " new spectra, " + std::to_string(bad) +
                   " skipped";
  }
  return res;
}

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double limit = 0.0;
  std::string detail;
};

/// Maximum |difference| between the reduced and augmented solves on
/// `draws` random N=3 instances (fixed seed).
inline double reduced_vs_augmented(int draws, unsigned seed = 20240611) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  int done = 0;
  while (done < draws) {
    ModelParams p;
    p.n_cavities = 3;
    p.max_excitation = 3;
    p.xi = 0.05 + 0.45 * u(rng);
    p.eta = p.xi * (0.1 + 0.9 * u(rng));
    p.g = u(rng);
    p.omega_a = 0.5 + u(rng);
    p.rwa_only = u(rng) < 0.25;
    const double omega = p.omega_c - 2.0 * p.xi * (1.0 - 2e-3) + 4.0 * p.xi * (1.0 - 2e-3) * u(rng);
    const Basis b(p);
    const Spectrum sp = diagonalize(build_sc_hamiltonian(p, b), b, Sector::both);
    const BoundStateSet bs = classify_bound_states(sp, b, p, 0.05);
    if (!bs.find(0)) continue;
    const TransitionTables t = transition_amplitudes(sp, bs, b);
    ScatteringSolution x, y;
    try {
      x = solve_scattering(p, t, omega);
      y = solve_scattering_augmented(p, t, omega);
    } catch (const PoleError&) {
      continue;
    }
    for (auto [a, c] : {std::pair{x.r_e, y.r_e}, {x.t_e, y.t_e}, {x.r_in, y.r_in}, {x.t_in, y.t_in}})
      worst = std::max(worst, std::abs(a - c));
    ++done;
  }
  return worst;
}

/// Invariant suite: structure of H_S, flow conservation, the g = 0 chain and
/// reduced-vs-augmented agreement.
inline std::vector<CheckResult> run_validation(const RunConfig& rc) {
  const ModelParams& p = rc.model;
  if (!(p.eta > 0.0))
    throw ConfigError("validate: eta = 0 decouples the scatterer from the leads");
  if (!(p.xi > 0.0)) throw ConfigError("validate: xi must be positive");
  const Fault fault = rc.validate.fault;
  const Basis basis(p, rc.dimension_limit);
  std::vector<CheckResult> out;
  auto add = [&](std::string name, double v, double lim, std::string d = {}) {
    out.push_back({std::move(name), v <= lim, v, lim, std::move(d)});
  };

  add("hermiticity", hermiticity_defect(p, basis, fault), 0.0);
  const HermitianOperator h = build_sc_hamiltonian(p, basis, fault);
  add("parity_blocks", parity_block_defect(h, basis), 0.0);
  ModelParams pr = p;
  pr.rwa_only = true;
  add("rwa_excitation_conservation",
      excitation_block_defect(build_sc_hamiltonian(pr, basis, fault), basis), 0.0);

  const int n = rc.validate.coarse_grid;
  auto band = [&](const ModelParams& q) {
    GridSpec g{q.omega_c - 2.0 * q.xi + kBandMargin, q.omega_c + 2.0 * q.xi - kBandMargin, n};
    return g.points();
  };
  {
    double worst = 0.0;
    std::string d;
    if (fault != Fault::none) {
      d = "skipped: fault injected";
    } else {
      const Spectrum sp = diagonalize(h, basis, Sector::both, rc.limits);
      const BoundStateSet bs = classify_bound_states(sp, basis, p, rc.bound_states.threshold);
      const TransitionTables t = transition_amplitudes(sp, bs, basis);
      for (double w : band(p)) {
        try {
          worst = std::max(worst, flows(solve_scattering(p, t, w, rc.solve)).conservation_defect);
        } catch (const PoleError&) {
        } catch (const NumericalError& e) {
          worst = std::max(worst, 1.0);
          d = e.what();
        }
      }
    }
    add("flow_conservation", worst, kDefectTolerance, d);
  }
  {
    ModelParams q = p;
    q.g = 0.0;
    q.eta = q.xi;
    q.max_excitation = std::min(q.max_excitation, 2);
    const Basis b(q);
    const Spectrum sp = diagonalize(build_sc_hamiltonian(q, b), b, Sector::both);
    const BoundStateSet bs = classify_bound_states(sp, b, q, rc.bound_states.threshold);
    const TransitionTables t = transition_amplitudes(sp, bs, b);
    double worst = 0.0;
    for (double w : band(q)) worst = std::max(worst, std::abs(std::abs(solve_scattering(q, t, w).t_e) - 1.0));
    add("g0_identity_transmission", worst, 1e-8);
  }
  add("reduced_vs_augmented", reduced_vs_augmented(rc.validate.draws), 1e-9);
  return out;
}

inline CommandResult cmd_validate(const RunConfig& rc, const std::string& hash) {
  const auto checks = run_validation(rc);
  CommandResult res;
  json report;
  report["config_hash"] = hash;
  report["version"] = kVersion;
  report["checks"] = json::array();
  bool all = true;
  std::ostringstream text;
  for (const auto& c : checks) {
    all = all && c.passed;
    report["checks"].push_back(
        {{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"limit", c.limit}, {"detail", c.detail}});
    text << (c.passed ? "PASS " : "FAIL ") << c.name << " value=" << format_number(c.value)
         << " limit=" << format_number(c.limit);
    if (!c.detail.empty()) text << " (" << c.detail << ")";
    text << '\n';
  }
  report["passed"] = all;
  res.files.add(rc.output.name + "_validate.json", report.dump(2) + "\n");
  res.summary = text.str() + (all ? "validate: all checks passed" : "validate: FAILED");
  res.exit_code = all ? 0 : 1;
  return res;
}

}  // namespace ccaqed

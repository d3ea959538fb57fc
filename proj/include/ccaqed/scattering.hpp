#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "ccaqed/error.hpp"
#include "ccaqed/hamiltonian.hpp"
#include "ccaqed/model.hpp"
#include "ccaqed/spectral.hpp"

namespace ccaqed {

using cplx = std::complex<double>;

/// Lead momentum for frequency omega on the band omega_c - 2 xi cos k.
/// Inside the band k is real in [0, pi]; outside it is the evanescent branch
/// k = i kappa (below the band) or pi + i kappa (above), kappa > 0.
inline cplx momentum_from_frequency(double omega, double omega_c, double xi) {
  if (!(xi > 0.0)) throw ParameterError("lead hopping xi must be positive");
  const double x = (omega_c - omega) / (2.0 * xi);
  if (x > 1.0) return {0.0, std::acosh(x)};
  if (x < -1.0) return {M_PI, std::acosh(-x)};
  return {std::acos(x), 0.0};
}

struct ChannelKinematics {
  double omega_in = 0.0;
  double k0 = 0.0;
  double energy_in = 0.0;      ///< E_0 + omega_in
  bool has_inelastic = false;  ///< psi_2 is part of the problem
  double omega_out = 0.0;      ///< E_in - E_2
  cplx k2{0.0, 0.0};
  bool inelastic_open = false;
};

/// Everything the boundary equations need from the scatterer, for one H_S.
/// Amplitudes are indexed by eigenstate in ascending energy:
///   ground_first[j]  = <psi_0|a_1|phi_j>,  ground_last[j]  = <psi_0|a_N|phi_j>,
///   excited_first[j] = <psi_2|a_1|phi_j>,  excited_last[j] = <psi_2|a_N|phi_j>.
struct TransitionTables {
  int n_cavities = 0;
  double ground_energy = 0.0;
  std::optional<double> excited_energy;
  Eigen::VectorXd energies;
  Eigen::VectorXd ground_first, ground_last;
  Eigen::VectorXd excited_first, excited_last;

  std::size_t size() const { return static_cast<std::size_t>(energies.size()); }
};

/// Amplitude tables from the spectrum and the bound states psi_0 (and psi_2
/// when present).
inline TransitionTables transition_amplitudes(const Spectrum& sp, const BoundStateSet& bound,
                                              const Basis& basis) {
  if (sp.basis_tag() != basis.tag()) throw ContractError("spectrum/basis mismatch");
  const BoundState* g = bound.find(0);
  if (!g) throw ContractError("bound-state set lacks the ground state");
  if (static_cast<std::size_t>(g->vector.size()) != basis.size())
    throw ContractError("bound state does not live on this basis");
  TransitionTables t;
  t.n_cavities = basis.n_cavities();
  t.ground_energy = g->energy;
  t.energies = sp.energies();
  const int n = basis.n_cavities();
  t.ground_first = sp.overlaps(apply_creation(g->vector, basis, 1));
  t.ground_last = sp.overlaps(apply_creation(g->vector, basis, n));
  if (const BoundState* e = bound.find(2)) {
    t.excited_energy = e->energy;
    t.excited_first = sp.overlaps(apply_creation(e->vector, basis, 1));
    t.excited_last = sp.overlaps(apply_creation(e->vector, basis, n));
  } else {
    t.excited_first = Eigen::VectorXd::Zero(t.energies.size());
    t.excited_last = Eigen::VectorXd::Zero(t.energies.size());
  }
  return t;
}

/// E_2 - E_0 + omega_c - 2 xi: lowest incident frequency for which the
/// outgoing photon of the psi_2 channel can propagate.
inline double inelastic_threshold(const BoundStateSet& bound, const ModelParams& p) {
  const BoundState* g = bound.find(0);
  const BoundState* e = bound.find(2);
  if (!g || !e)
    throw ContractError("no psi_2 bound state: run in elastic-only mode");
  return e->energy - g->energy + p.omega_c - 2.0 * p.xi;
}

inline ChannelKinematics channel_kinematics(const ModelParams& p, const TransitionTables& t,
                                            double omega_in) {
  ChannelKinematics k;
  k.omega_in = omega_in;
  const cplx k0 = momentum_from_frequency(omega_in, p.omega_c, p.xi);
  k.k0 = k0.real();
  k.energy_in = t.ground_energy + omega_in;
  if (t.excited_energy) {
    k.has_inelastic = true;
    k.omega_out = k.energy_in - *t.excited_energy;
    k.k2 = momentum_from_frequency(k.omega_out, p.omega_c, p.xi);
    k.inelastic_open = k.k2.imag() == 0.0 && std::abs(k.omega_out - p.omega_c) < 2.0 * p.xi;
  }
  return k;
}

struct ScatteringSolution {
  ChannelKinematics kinematics;
  cplx r_e, t_e, r_in, t_in;
  Eigen::VectorXcd d;        ///< scatterer amplitudes, same order as the tables
  double residual = 0.0;     ///< max defect of the full boundary system, relative
  bool augmented = false;    ///< solved by the direct (M+4) route
};

struct Flows {
  double reflect_elastic = 0.0;
  double transmit_elastic = 0.0;
  double reflect_inelastic = 0.0;
  double transmit_inelastic = 0.0;
  double conservation_defect = 0.0;

  double transmit_total() const { return transmit_elastic + transmit_inelastic; }
};

struct SolveOptions {
  double pole_tolerance = 1e-9;
  double amplitude_floor = 1e-14;  ///< states below this coupling are decoupled
};

namespace detail {

inline void check_in_band(const ModelParams& p, double omega_in) {
  if (!(p.eta > 0.0)) throw ParameterError("eta must be positive for scattering");
  if (!(p.xi > 0.0)) throw ParameterError("xi must be positive for scattering");
  if (!(std::abs(omega_in - p.omega_c) < 2.0 * p.xi))
    throw ContractError("omega_in=" + std::to_string(omega_in) +
                        " is outside the open propagation band");
}

/// Scatterer amplitudes from the channel amplitudes (the d_j equations).
inline Eigen::VectorXcd scatterer_amplitudes(const ModelParams& p, const TransitionTables& t,
                                             const ChannelKinematics& k, cplx r_e, cplx t_e,
                                             cplx r_in, cplx t_in) {
  const int n = t.n_cavities;
  const cplx i{0.0, 1.0};
  const cplx p0 = std::exp(i * double(n + 1) * k.k0);
  const cplx p2 = k.has_inelastic ? std::exp(i * double(n + 1) * k.k2) : cplx{0.0};
  Eigen::VectorXcd d(t.size());
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    const cplx src = (1.0 + r_e) * t.ground_first[j] + r_in * t.excited_first[j] +
                     t_e * p0 * t.ground_last[j] + t_in * p2 * t.excited_last[j];
    d[j] = src == 0.0 ? cplx{0.0} : -p.eta * src / (k.energy_in - t.energies[j]);
  }
  return d;
}

/// Largest relative defect of the (M+4) boundary equations.
inline double boundary_residual(const ModelParams& p, const TransitionTables& t,
                                const ChannelKinematics& k, const ScatteringSolution& s) {
  const int n = t.n_cavities;
  const cplx i{0.0, 1.0};
  const double xi = p.xi, eta = p.eta;
  const cplx p0 = std::exp(i * double(n + 1) * k.k0);
  const cplx p2 = k.has_inelastic ? std::exp(i * double(n + 1) * k.k2) : cplx{0.0};
  cplx sa{0.0}, sb{0.0}, sc{0.0}, sd{0.0};
  double scale = xi;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < s.d.size(); ++j) {
    sa += s.d[j] * t.ground_first[j];
    sb += s.d[j] * t.ground_last[j];
    sc += s.d[j] * t.excited_first[j];
    sd += s.d[j] * t.excited_last[j];
    const cplx terms[] = {(k.energy_in - t.energies[j]) * s.d[j],
                          eta * s.r_e * t.ground_first[j], eta * s.r_in * t.excited_first[j],
                          eta * s.t_e * p0 * t.ground_last[j],
                          eta * s.t_in * p2 * t.excited_last[j], eta * t.ground_first[j]};
    cplx sum = terms[0] + terms[1] + terms[2] + terms[3] + terms[4] + terms[5];
    double mag = 0.0;
    for (const cplx& x : terms) mag = std::max(mag, std::abs(x));
    scale = std::max(scale, mag);
    worst = std::max(worst, std::abs(sum));
  }
  const cplx e0 = std::exp(-i * k.k0);
  const cplx eN0 = std::exp(i * double(n) * k.k0);
  worst = std::max(worst, std::abs(xi * s.r_e * e0 - eta * sa + xi * std::exp(i * k.k0)));
  worst = std::max(worst, std::abs(xi * s.t_e * eN0 - eta * sb));
  scale = std::max({scale, std::abs(xi * s.r_e), std::abs(xi * s.t_e), std::abs(eta * sa),
                    std::abs(eta * sb)});
  if (k.has_inelastic) {
    const cplx e2 = std::exp(-i * k.k2);
    const cplx eN2 = std::exp(i * double(n) * k.k2);
    worst = std::max(worst, std::abs(xi * e2 * s.r_in - eta * sc));
    worst = std::max(worst, std::abs(xi * eN2 * s.t_in - eta * sd));
    scale = std::max({scale, std::abs(xi * e2 * s.r_in), std::abs(xi * eN2 * s.t_in),
                      std::abs(eta * sc), std::abs(eta * sd)});
  }
  return worst / scale;
}

inline bool coupled(const TransitionTables& t, Eigen::Index j, double floor) {
  return std::abs(t.ground_first[j]) > floor || std::abs(t.ground_last[j]) > floor ||
         std::abs(t.excited_first[j]) > floor || std::abs(t.excited_last[j]) > floor;
}

}  // namespace detail

/// Direct solve of the (M+4) boundary system in the unknowns
/// (r_e, t_e, r_in, t_in, d_1..d_M). Eigenstates with no coupling to either
/// channel have d_j = 0 and are left out of the matrix.
inline ScatteringSolution solve_scattering_augmented(const ModelParams& p,
                                                     const TransitionTables& t,
                                                     double omega_in,
                                                     const SolveOptions& opt = {}) {
  detail::check_in_band(p, omega_in);
  ScatteringSolution s;
  s.kinematics = channel_kinematics(p, t, omega_in);
  s.augmented = true;
  const auto& k = s.kinematics;
  const int n = t.n_cavities;
  const cplx i{0.0, 1.0};
  const double xi = p.xi, eta = p.eta;
  const cplx p0 = std::exp(i * double(n + 1) * k.k0);
  const cplx p2 = k.has_inelastic ? std::exp(i * double(n + 1) * k.k2) : cplx{0.0};

  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < Eigen::Index(t.size()); ++j)
    if (detail::coupled(t, j, opt.amplitude_floor)) active.push_back(j);
  const int nch = k.has_inelastic ? 4 : 2;
  const Eigen::Index dim = nch + Eigen::Index(active.size());
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(dim, dim);
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(dim);

  // rows 0..3: the lead equations at sites 0, N+1 (elastic) and 0, N+1 (psi_2)
  a(0, 0) = xi * std::exp(-i * k.k0);
  rhs[0] = -xi * std::exp(i * k.k0);
  a(1, 1) = xi * std::exp(i * double(n) * k.k0);
  if (k.has_inelastic) {
    a(2, 2) = xi * std::exp(-i * k.k2);
    a(3, 3) = xi * std::exp(i * double(n) * k.k2);
  }
  for (std::size_t q = 0; q < active.size(); ++q) {
    const Eigen::Index j = active[q];
    const Eigen::Index c = nch + Eigen::Index(q);
    a(0, c) = -eta * t.ground_first[j];
    a(1, c) = -eta * t.ground_last[j];
    if (k.has_inelastic) {
      a(2, c) = -eta * t.excited_first[j];
      a(3, c) = -eta * t.excited_last[j];
    }
    // scatterer row j
    a(c, c) = k.energy_in - t.energies[j];
    a(c, 0) = eta * t.ground_first[j];
    a(c, 1) = eta * p0 * t.ground_last[j];
    if (k.has_inelastic) {
      a(c, 2) = eta * t.excited_first[j];
      a(c, 3) = eta * p2 * t.excited_last[j];
    }
    rhs[c] = -eta * t.ground_first[j];
  }
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(a);
  lu.setThreshold(1e-13);
  if (!lu.isInvertible())
    throw PoleError("augmented boundary system is singular at omega_in=" +
                    std::to_string(omega_in));
  const Eigen::VectorXcd x = lu.solve(rhs);
  s.r_e = x[0];
  s.t_e = x[1];
  s.r_in = k.has_inelastic ? x[2] : cplx{0.0};
  s.t_in = k.has_inelastic ? x[3] : cplx{0.0};
  s.d = Eigen::VectorXcd::Zero(t.size());
  for (std::size_t q = 0; q < active.size(); ++q) s.d[active[q]] = x[nch + Eigen::Index(q)];
  s.residual = detail::boundary_residual(p, t, k, s);
  return s;
}

/// Single-photon scattering at incident frequency omega_in.
///
/// The scatterer amplitudes d_j are eliminated analytically, leaving a 4x4
/// system for (r_e, t_e, r_in, t_in) whose coefficients are Green-function
/// sums  G_XY = sum_j X_j Y_j / (E_in - eps_j).  The channel amplitudes at
/// the first lead site (t e^{i(N+1)k}) are the actual unknowns, which keeps
/// evanescent channels well scaled. Falls back to the augmented solve when
/// E_in sits on an eigenvalue of a coupled state.
inline ScatteringSolution solve_scattering(const ModelParams& p, const TransitionTables& t,
                                           double omega_in, const SolveOptions& opt = {}) {
  detail::check_in_band(p, omega_in);
  ChannelKinematics k = channel_kinematics(p, t, omega_in);
  for (Eigen::Index j = 0; j < Eigen::Index(t.size()); ++j) {
    if (std::abs(k.energy_in - t.energies[j]) < opt.pole_tolerance &&
        detail::coupled(t, j, opt.amplitude_floor))
      return solve_scattering_augmented(p, t, omega_in, opt);
  }

  // G_XY for X, Y in {A: ground_first, B: ground_last, C: excited_first, D: excited_last}
  double g[4][4] = {};
  for (Eigen::Index j = 0; j < Eigen::Index(t.size()); ++j) {
    const double x[4] = {t.ground_first[j], t.ground_last[j], t.excited_first[j],
                         t.excited_last[j]};
    if (x[0] == 0.0 && x[1] == 0.0 && x[2] == 0.0 && x[3] == 0.0) continue;
    const double inv = 1.0 / (k.energy_in - t.energies[j]);
    for (int a = 0; a < 4; ++a)
      for (int b = a; b < 4; ++b) g[a][b] += x[a] * x[b] * inv;
  }
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < a; ++b) g[a][b] = g[b][a];

  const cplx i{0.0, 1.0};
  const double xi = p.xi, e2 = p.eta * p.eta;
  const int nch = k.has_inelastic ? 4 : 2;
  // unknowns: r_e, tau_e = t_e p0, r_in, tau_in = t_in p2
  const cplx diag[4] = {xi * std::exp(-i * k.k0), xi * std::exp(-i * k.k0),
                        xi * std::exp(-i * k.k2), xi * std::exp(-i * k.k2)};
  Eigen::MatrixXcd m(nch, nch);
  Eigen::VectorXcd rhs(nch);
  for (int row = 0; row < nch; ++row) {
    for (int c = 0; c < nch; ++c) m(row, c) = e2 * g[row][c];
    m(row, row) += diag[row];
    rhs[row] = -e2 * g[row][0];
  }
  rhs[0] += -xi * std::exp(i * k.k0);
  const Eigen::VectorXcd x = m.fullPivLu().solve(rhs);

  ScatteringSolution s;
  s.kinematics = k;
  const int n = t.n_cavities;
  s.r_e = x[0];
  s.t_e = x[1] * std::exp(-i * double(n + 1) * k.k0);
  if (k.has_inelastic) {
    s.r_in = x[2];
    s.t_in = x[3] * std::exp(-i * double(n + 1) * k.k2);
  }
  s.d = detail::scatterer_amplitudes(p, t, k, s.r_e, s.t_e, s.r_in, s.t_in);
  s.residual = detail::boundary_residual(p, t, k, s);
  return s;
}

/// Convenience overload building the tables on the fly.
inline ScatteringSolution solve_scattering(const ModelParams& p, const Spectrum& sp,
                                           const BoundStateSet& bound, const Basis& basis,
                                           double omega_in, const SolveOptions& opt = {}) {
  return solve_scattering(p, transition_amplitudes(sp, bound, basis), omega_in, opt);
}

inline constexpr double kConservationHardLimit = 1e-6;

/// Elastic and inelastic flows; inelastic flows carry the group-velocity
/// ratio sin k2 / sin k0 and vanish when the psi_2 channel is closed.
inline Flows flows(const ScatteringSolution& s) {
  Flows f;
  f.reflect_elastic = std::norm(s.r_e);
  f.transmit_elastic = std::norm(s.t_e);
  const auto& k = s.kinematics;
  if (k.has_inelastic && k.inelastic_open) {
    const double v = std::sin(k.k2.real()) / std::sin(k.k0);
    f.reflect_inelastic = std::norm(s.r_in) * v;
    f.transmit_inelastic = std::norm(s.t_in) * v;
  }
  f.conservation_defect = std::abs(1.0 - (f.reflect_elastic + f.transmit_elastic +
                                          f.reflect_inelastic + f.transmit_inelastic));
  if (!(f.conservation_defect <= kConservationHardLimit))
    throw NumericalError("flow conservation broken: defect " +
                         std::to_string(f.conservation_defect) + " at omega_in=" +
                         std::to_string(k.omega_in));
  return f;
}

}  // namespace ccaqed

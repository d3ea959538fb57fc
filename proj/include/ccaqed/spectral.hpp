#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ccaqed/dense_eigen.hpp"
#include "ccaqed/error.hpp"
#include "ccaqed/hamiltonian.hpp"
#include "ccaqed/model.hpp"

namespace ccaqed {

struct SolverLimits {
  /// Largest dense block handed to the eigensolver (after the mirror split).
  std::size_t dense_block_limit = 12000;
  /// Split parity sectors further by the cavity mirror j -> N+1-j.
  bool use_mirror = true;
};

/// Eigenpairs of one parity sector. `support` lists basis positions; vectors
/// are stored column-wise over that support.
struct SpectrumBlock {
  int parity = +1;
  std::vector<std::size_t> support;
  Eigen::VectorXd energies;
  Eigen::MatrixXd vectors;
};

/// Eigen-decomposition of a scatterer operator, indexed in ascending energy.
class Spectrum {
 public:
  Spectrum(std::vector<SpectrumBlock> blocks, std::size_t basis_size,
           std::uint64_t basis_tag)
      : blocks_(std::move(blocks)), basis_size_(basis_size), tag_(basis_tag) {
    for (int b = 0; b < static_cast<int>(blocks_.size()); ++b)
      for (Eigen::Index c = 0; c < blocks_[b].energies.size(); ++c) order_.push_back({b, c});
    std::stable_sort(order_.begin(), order_.end(), [&](const Ref& x, const Ref& y) {
      return blocks_[x.block].energies[x.col] < blocks_[y.block].energies[y.col];
    });
  }

  std::size_t size() const { return order_.size(); }
  std::size_t basis_size() const { return basis_size_; }
  std::uint64_t basis_tag() const { return tag_; }
  const std::vector<SpectrumBlock>& blocks() const { return blocks_; }

  double energy(std::size_t m) const {
    const Ref& r = order_.at(m);
    return blocks_[r.block].energies[r.col];
  }
  int parity(std::size_t m) const { return blocks_[order_.at(m).block].parity; }

  Eigen::VectorXd energies() const {
    Eigen::VectorXd e(size());
    for (std::size_t m = 0; m < size(); ++m) e[m] = energy(m);
    return e;
  }

  /// Eigenvector m expanded over the full basis.
  Eigen::VectorXd vector(std::size_t m) const {
    const Ref& r = order_.at(m);
    const SpectrumBlock& b = blocks_[r.block];
    Eigen::VectorXd v = Eigen::VectorXd::Zero(basis_size_);
    for (std::size_t i = 0; i < b.support.size(); ++i) v[b.support[i]] = b.vectors(i, r.col);
    return v;
  }

  /// <phi_m|x> for every m, ascending order; x is a basis-length vector.
  Eigen::VectorXd overlaps(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != basis_size_)
      throw ContractError("overlap vector does not match the basis");
    std::vector<Eigen::VectorXd> per_block;
    for (const auto& b : blocks_) {
      Eigen::VectorXd local(b.support.size());
      for (std::size_t i = 0; i < b.support.size(); ++i) local[i] = x[b.support[i]];
      per_block.push_back(b.vectors.transpose() * local);
    }
    Eigen::VectorXd out(size());
    for (std::size_t m = 0; m < size(); ++m) out[m] = per_block[order_[m].block][order_[m].col];
    return out;
  }

  /// Applies a per-basis-state weight: returns sum_i |phi_m(i)|^2 w(i) for all m.
  Eigen::VectorXd expectation_diagonal(const Eigen::VectorXd& w) const {
    std::vector<Eigen::VectorXd> per_block;
    for (const auto& b : blocks_) {
      Eigen::VectorXd local(b.support.size());
      for (std::size_t i = 0; i < b.support.size(); ++i) local[i] = w[b.support[i]];
      per_block.push_back(b.vectors.cwiseAbs2().transpose() * local);
    }
    Eigen::VectorXd out(size());
    for (std::size_t m = 0; m < size(); ++m) out[m] = per_block[order_[m].block][order_[m].col];
    return out;
  }

 private:
  struct Ref {
    int block;
    Eigen::Index col;
  };
  std::vector<SpectrumBlock> blocks_;
  std::vector<Ref> order_;
  std::size_t basis_size_;
  std::uint64_t tag_;
};

namespace detail {

inline void fix_sign(Eigen::MatrixXd& v) {
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index imax = 0;
    v.col(c).cwiseAbs().maxCoeff(&imax);
    if (v(imax, c) < 0.0) v.col(c) *= -1.0;
  }
}

inline void check_dense_limit(std::size_t n, const SolverLimits& lim) {
  if (n > lim.dense_block_limit)
    throw ResourceLimitError("dense block of dimension " + std::to_string(n) +
                             " exceeds the solver limit " +
                             std::to_string(lim.dense_block_limit) +
                             "; diagonalize one parity sector or lower max_excitation");
}

/// Restriction of h to the local positions `sel` (indices into h.support()).
inline Eigen::SparseMatrix<double> restrict_sparse(const HermitianOperator& h,
                                                   const std::vector<std::size_t>& sel) {
  std::vector<std::ptrdiff_t> pos(h.dim(), -1);
  for (std::size_t a = 0; a < sel.size(); ++a) pos[sel[a]] = static_cast<std::ptrdiff_t>(a);
  std::vector<Eigen::Triplet<double>> t;
  for (const auto& e : h.entries()) {
    const auto r = pos[e.row], c = pos[e.col];
    if (r < 0 || c < 0) continue;
    t.emplace_back(int(r), int(c), e.value);
    if (r != c) t.emplace_back(int(c), int(r), e.value);
  }
  Eigen::SparseMatrix<double> m(int(sel.size()), int(sel.size()));
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

inline SpectrumBlock solve_block_plain(const Eigen::SparseMatrix<double>& s,
                                       const SolverLimits& lim) {
  check_dense_limit(static_cast<std::size_t>(s.rows()), lim);
  SpectrumBlock b;
  b.vectors = Eigen::MatrixXd(s);
  symmetric_eigen(b.vectors, b.energies);
  return b;
}

/// Diagonalizes the block in the mirror-adapted basis (symmetric and
/// antisymmetric combinations of |n> and its reflection). Returns nullopt if
/// the support is not closed under reflection.
inline std::optional<SpectrumBlock> solve_block_mirror(
    const Eigen::SparseMatrix<double>& s, const std::vector<std::size_t>& basis_idx,
    const Basis& basis, const SolverLimits& lim) {
  const std::size_t n = basis_idx.size();
  std::vector<std::ptrdiff_t> pos(basis.size(), -1);
  for (std::size_t a = 0; a < n; ++a) pos[basis_idx[a]] = static_cast<std::ptrdiff_t>(a);
  std::vector<Eigen::Triplet<double>> up, um;
  int ncol_p = 0, ncol_m = 0;
  const double r2 = 1.0 / std::sqrt(2.0);
  for (std::size_t a = 0; a < n; ++a) {
    const auto mb = pos[basis.mirror(basis_idx[a])];
    if (mb < 0) return std::nullopt;
    const auto m = static_cast<std::size_t>(mb);
    if (m == a) {
      up.emplace_back(int(a), ncol_p++, 1.0);
    } else if (a < m) {
      up.emplace_back(int(a), ncol_p, r2);
      up.emplace_back(int(m), ncol_p++, r2);
      um.emplace_back(int(a), ncol_m, r2);
      um.emplace_back(int(m), ncol_m++, -r2);
    }
  }
  Eigen::SparseMatrix<double> u_p(int(n), ncol_p), u_m(int(n), ncol_m);
  u_p.setFromTriplets(up.begin(), up.end());
  u_m.setFromTriplets(um.begin(), um.end());

  auto half = [&](const Eigen::SparseMatrix<double>& u, Eigen::VectorXd& w) {
    check_dense_limit(static_cast<std::size_t>(u.cols()), lim);
    Eigen::SparseMatrix<double> hu = u.transpose() * s * u;
    Eigen::MatrixXd z(hu);
    symmetric_eigen(z, w);
    return Eigen::MatrixXd(u * z);
  };
  Eigen::VectorXd wp, wm;
  Eigen::MatrixXd vp = half(u_p, wp);
  Eigen::MatrixXd vm = ncol_m > 0 ? half(u_m, wm) : Eigen::MatrixXd(int(n), 0);

  std::vector<std::pair<double, Eigen::Index>> key;
  for (Eigen::Index c = 0; c < wp.size(); ++c) key.emplace_back(wp[c], c);
  for (Eigen::Index c = 0; c < wm.size(); ++c) key.emplace_back(wm[c], wp.size() + c);
  std::stable_sort(key.begin(), key.end(),
                   [](const auto& x, const auto& y) { return x.first < y.first; });
  SpectrumBlock b;
  b.energies.resize(Eigen::Index(n));
  b.vectors.resize(Eigen::Index(n), Eigen::Index(n));
  for (std::size_t c = 0; c < key.size(); ++c) {
    b.energies[Eigen::Index(c)] = key[c].first;
    const Eigen::Index src = key[c].second;
    b.vectors.col(Eigen::Index(c)) = src < wp.size() ? vp.col(src) : vm.col(src - wp.size());
  }
  return b;
}

}  // namespace detail

/// Full eigen-decomposition of H in the requested parity sector(s).
/// Operators that conserve N_ext (RWA) are further split per excitation number.
inline Spectrum diagonalize(const HermitianOperator& h, const Basis& basis, Sector sector,
                            const SolverLimits& lim = {}) {
  if (h.basis_tag() != basis.tag())
    throw ContractError("operator was not assembled on this basis");
  const bool by_excitation = excitation_block_defect(h, basis) == 0.0;
  std::vector<SpectrumBlock> blocks;
  for (int parity : {+1, -1}) {
    if (sector == Sector::even && parity < 0) continue;
    if (sector == Sector::odd && parity > 0) continue;
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t l = 0; l < h.dim(); ++l) {
      const auto& st = basis[h.support()[l]];
      if (parity_of(st) == parity) groups[by_excitation ? st.excitation() : 0].push_back(l);
    }
    for (auto& [ext, sel] : groups) {
      std::vector<std::size_t> basis_idx(sel.size());
      for (std::size_t a = 0; a < sel.size(); ++a) basis_idx[a] = h.support()[sel[a]];
      const Eigen::SparseMatrix<double> s = detail::restrict_sparse(h, sel);
      std::optional<SpectrumBlock> b;
      if (lim.use_mirror) b = detail::solve_block_mirror(s, basis_idx, basis, lim);
      if (!b) b = detail::solve_block_plain(s, lim);
      b->parity = parity;
      b->support = std::move(basis_idx);
      detail::fix_sign(b->vectors);
      blocks.push_back(std::move(*b));
    }
  }
  return Spectrum(std::move(blocks), basis.size(), basis.tag());
}

struct Eigenpair {
  double energy = 0.0;
  Eigen::VectorXd vector;  ///< over the full basis
  int parity = +1;
  double residual = 0.0;   ///< ||H v - E v||
};

struct LanczosOptions {
  int max_krylov = 400;
  double tol = 1e-11;
  unsigned seed = 20240611u;
};

/// Lowest eigenpair of one parity sector by Lanczos with full
/// reorthogonalization. Deterministic for a fixed seed.
inline Eigenpair lowest_eigenpair(const HermitianOperator& h, const Basis& basis, int parity,
                                  const LanczosOptions& opt = {}) {
  if (h.basis_tag() != basis.tag())
    throw ContractError("operator was not assembled on this basis");
  std::vector<std::size_t> sel;
  for (std::size_t l = 0; l < h.dim(); ++l)
    if (basis.parity(h.support()[l]) == parity) sel.push_back(l);
  if (sel.empty()) throw ContractError("requested parity sector is empty");
  const Eigen::SparseMatrix<double> s = detail::restrict_sparse(h, sel);
  const Eigen::Index n = s.rows();
  const int kmax = static_cast<int>(std::min<Eigen::Index>(n, opt.max_krylov));

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Eigen::MatrixXd q(n, kmax);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = uni(rng);
  q.col(0) = v.normalized();
  std::vector<double> alpha, beta;
  double theta = 0.0;
  Eigen::VectorXd ritz;
  const double scale = std::max(1.0, h.norm_bound());
  for (int j = 0; j < kmax; ++j) {
    Eigen::VectorXd w = s * q.col(j);
    alpha.push_back(q.col(j).dot(w));
    w -= alpha.back() * q.col(j);
    if (j > 0) w -= beta.back() * q.col(j - 1);
    for (int pass = 0; pass < 2; ++pass)
      w -= q.leftCols(j + 1) * (q.leftCols(j + 1).transpose() * w);
    const double b = w.norm();

    const int m = j + 1;
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      t(i, i) = alpha[i];
      if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    theta = es.eigenvalues()[0];
    ritz = es.eigenvectors().col(0);
    const bool exhausted = b < 1e-13 * scale || m == kmax;
    if (std::abs(b * ritz[m - 1]) < opt.tol * scale || exhausted) break;
    beta.push_back(b);
    q.col(j + 1) = w / b;
  }
  const Eigen::Index m = ritz.size();
  Eigen::VectorXd local = q.leftCols(m) * ritz;
  local.normalize();
  Eigenpair out;
  out.energy = theta;
  out.parity = parity;
  out.residual = (s * local - theta * local).norm();
  out.vector = Eigen::VectorXd::Zero(basis.size());
  for (std::size_t a = 0; a < sel.size(); ++a) out.vector[h.support()[sel[a]]] = local[a];
  Eigen::Index imax = 0;
  out.vector.cwiseAbs().maxCoeff(&imax);
  if (out.vector[imax] < 0) out.vector *= -1.0;
  return out;
}

/// Photons in the last cavity divided by the total photon number; zero for
/// states without photons.
inline double localization_ratio(const Eigen::Ref<const Eigen::VectorXd>& v,
                                 const Basis& basis) {
  if (static_cast<std::size_t>(v.size()) != basis.size())
    throw ContractError("state vector length does not match the basis");
  double edge = 0.0, total = 0.0;
  const int last = basis.n_cavities() - 1;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    const double w = v[i] * v[i];
    if (w == 0.0) continue;
    edge += w * basis[i].photon_occupations[last];
    total += w * basis[i].photon_number();
  }
  return total < 1e-14 ? 0.0 : edge / total;
}

inline double localization_ratio(const Eigen::Ref<const Eigen::VectorXd>& v,
                                 const Basis& basis, const ModelParams&) {
  return localization_ratio(v, basis);
}

/// Localization ratio of every eigenvector of the spectrum, ascending order.
inline Eigen::VectorXd localization_ratios(const Spectrum& sp, const Basis& basis) {
  Eigen::VectorXd edge(basis.size()), total(basis.size());
  const int last = basis.n_cavities() - 1;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    edge[i] = basis[i].photon_occupations[last];
    total[i] = basis[i].photon_number();
  }
  const Eigen::VectorXd e = sp.expectation_diagonal(edge);
  const Eigen::VectorXd t = sp.expectation_diagonal(total);
  Eigen::VectorXd r(sp.size());
  for (Eigen::Index m = 0; m < r.size(); ++m) r[m] = t[m] < 1e-14 ? 0.0 : e[m] / t[m];
  return r;
}

struct BoundState {
  int label = 0;  ///< 0: ground, 1: lowest odd, 2: second even
  double energy = 0.0;
  Eigen::VectorXd vector;
  int parity = +1;
  double localization_ratio = 0.0;
  std::size_t spectrum_index = 0;
};

/// psi_0, psi_1, psi_2 as found by the localization test. Missing states are
/// simply absent; `complete()` tells whether all three were found.
struct BoundStateSet {
  std::vector<BoundState> states;
  double threshold = 0.01;
  double xi = 0.0;

  std::size_t found() const { return states.size(); }
  bool complete() const { return states.size() == 3; }
  const BoundState* find(int label) const {
    for (const auto& s : states)
      if (s.label == label) return &s;
    return nullptr;
  }
  /// psi_2 can act as an inelastic channel only while E2 <= E0 + 4 xi.
  bool excited_usable() const {
    const auto* g = find(0);
    const auto* e = find(2);
    return g && e && e->energy <= g->energy + 4.0 * xi;
  }
};

/// Selects psi_0 (lowest even), psi_1 (lowest odd) and psi_2 (next even) among
/// the eigenstates whose localization ratio is below the threshold.
/// Degenerate levels prefer the smaller ratio, then the lower index.
inline BoundStateSet classify_bound_states(const Spectrum& sp, const Basis& basis,
                                           const ModelParams& p, double threshold = 0.01) {
  if (sp.basis_tag() != basis.tag()) throw ContractError("spectrum/basis mismatch");
  const Eigen::VectorXd ratio = localization_ratios(sp, basis);
  BoundStateSet out;
  out.threshold = threshold;
  out.xi = p.xi;

  std::vector<std::size_t> order(sp.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const double degenerate = 1e-10 * std::max(1.0, std::abs(sp.size() ? sp.energy(0) : 1.0));
  // reorder inside groups of (numerically) equal energy
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && sp.energy(j) - sp.energy(i) < degenerate) ++j;
    std::stable_sort(order.begin() + i, order.begin() + j,
                     [&](std::size_t a, std::size_t b) { return ratio[a] < ratio[b]; });
    i = j;
  }

  int even_found = 0;
  bool odd_found = false;
  for (std::size_t m : order) {
    if (ratio[m] >= threshold) continue;
    int label = -1;
    if (sp.parity(m) > 0 && even_found < 2) label = even_found++ == 0 ? 0 : 2;
    else if (sp.parity(m) < 0 && !odd_found) { label = 1; odd_found = true; }
    if (label < 0) continue;
    out.states.push_back({label, sp.energy(m), sp.vector(m), sp.parity(m), ratio[m], m});
    if (even_found == 2 && odd_found) break;
  }
  std::sort(out.states.begin(), out.states.end(),
            [](const BoundState& a, const BoundState& b) { return a.label < b.label; });
  return out;
}

/// Eigenstates of the single-site Rabi model, split by parity.
struct RabiLevels {
  struct Sector {
    std::vector<std::pair<int, bool>> states;  ///< (photons, atom excited)
    Eigen::VectorXd energies;
    Eigen::MatrixXd vectors;
  };
  Sector even, odd;
  const Sector& sector(int parity) const { return parity > 0 ? even : odd; }
};

namespace detail {

/// omega_c n + omega_a/2 sigma_z + g sigma_x (a + a^dag) on the listed local
/// states, plus a constant shift.
inline Eigen::MatrixXd rabi_matrix(const ModelParams& p,
                                   const std::vector<std::pair<int, bool>>& st,
                                   double shift) {
  const auto n = static_cast<Eigen::Index>(st.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    h(a, a) = shift + p.omega_c * st[a].first + 0.5 * p.omega_a * (st[a].second ? 1.0 : -1.0);
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto [na, ea] = st[a];
      const auto [nb, eb] = st[b];
      if (!(ea && !eb)) continue;  // <na,e| ... |nb,g>
      double v = 0.0;
      if (na == nb - 1) v = p.g * std::sqrt(double(nb));                  // sigma_+ a
      if (na == nb + 1 && !p.rwa_only) v = p.g * std::sqrt(double(na));  // sigma_+ a^dag
      h(a, b) = h(b, a) = v;
    }
  }
  return h;
}

}  // namespace detail

inline RabiLevels rabi_site_eigensystem(const ModelParams& p, int local_cutoff) {
  if (local_cutoff < 1) throw ContractError("local_cutoff must be >= 1");
  RabiLevels out;
  for (int ext = 0; ext <= local_cutoff; ++ext) {
    for (int atom = 0; atom <= 1; ++atom) {
      const int n = ext - atom;
      if (n < 0) continue;
      (ext % 2 == 0 ? out.even : out.odd).states.emplace_back(n, atom == 1);
    }
  }
  for (auto* s : {&out.even, &out.odd}) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(detail::rabi_matrix(p, s->states, 0.0));
    s->energies = es.eigenvalues();
    s->vectors = es.eigenvectors();
    detail::fix_sign(s->vectors);
  }
  return out;
}

struct RabiLevelRef {
  int index = 0;   ///< 0-based position inside the parity sector
  int parity = +1;
};

struct BwptResult {
  double energy = 0.0;
  double unperturbed = 0.0;  ///< level of the uncoupled Rabi site
  bool converged = false;
  int iterations = 0;
  bool damped = false;
};

/// Brillouin-Wigner energy of the bound state grown out of a Rabi level with
/// empty neighbours. H_S = H_0 + V with V the inter-cavity hopping.
///
/// The energy is iterated to self-consistency,
///   E <- e0 + <0|V|0> + <0|V Q (E - Q H Q)^{-1} Q V|0>,
/// where the Q-space resolvent is evaluated in the eigenbasis of H_0 (Rabi
/// site times free cavities). Oscillating iterates switch on damping 0.5.
inline BwptResult bwpt_bound_energy(const ModelParams& p, RabiLevelRef level,
                                    double tol = 1e-12, int max_iter = 200) {
  p.validate();
  const Basis basis(p);
  const int s0 = p.atom_site() - 1;
  const auto& sec = basis.sector_indices(level.parity);
  const auto n = static_cast<Eigen::Index>(sec.size());

  // group sector states by the occupation of the cavities other than s
  std::map<std::uint64_t, std::vector<Eigen::Index>> groups;
  for (Eigen::Index a = 0; a < n; ++a) {
    const BasisState& st = basis[sec[a]];
    const std::uint64_t others = basis.key_of(st) - (st.atom_excited ? 1 : 0) -
                                 basis.radix(s0) * std::uint64_t(st.photon_occupations[s0]);
    groups[others].push_back(a);
  }

  std::vector<Eigen::Triplet<double>> ut;
  Eigen::VectorXd h0(n);
  Eigen::Index ref = -1;
  Eigen::Index col = 0;
  for (const auto& [others, members] : groups) {
    std::vector<std::pair<int, bool>> local;
    int n_other = 0;
    for (Eigen::Index a : members) {
      const BasisState& st = basis[sec[a]];
      local.emplace_back(st.photon_occupations[s0], st.atom_excited);
      n_other = st.photon_number() - st.photon_occupations[s0];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        detail::rabi_matrix(p, local, p.omega_c * n_other));
    Eigen::MatrixXd z = es.eigenvectors();
    detail::fix_sign(z);
    for (Eigen::Index c = 0; c < z.cols(); ++c, ++col) {
      h0[col] = es.eigenvalues()[c];
      for (Eigen::Index r = 0; r < z.rows(); ++r)
        if (z(r, c) != 0.0) ut.emplace_back(int(members[r]), int(col), z(r, c));
      if (others == 0 && c == level.index) ref = col;
    }
  }
  if (ref < 0)
    throw ContractError("Rabi level " + std::to_string(level.index) +
                        " does not exist at this cutoff");

  Eigen::SparseMatrix<double> u(n, n);
  u.setFromTriplets(ut.begin(), ut.end());

  ModelParams hop = p;
  hop.omega_c = hop.omega_a = hop.g = 0.0;
  std::vector<Eigen::Index> pos(basis.size(), -1);
  for (Eigen::Index a = 0; a < n; ++a) pos[sec[a]] = a;
  std::vector<Eigen::Triplet<double>> vt;
  for_each_sc_element(hop, basis, [&](std::size_t r, std::size_t c, double v) {
    if (pos[r] >= 0 && pos[c] >= 0) vt.emplace_back(int(pos[r]), int(pos[c]), v);
  });
  Eigen::SparseMatrix<double> vhop(n, n);
  vhop.setFromTriplets(vt.begin(), vt.end());
  const Eigen::SparseMatrix<double> v = u.transpose() * vhop * u;

  // Q space: every H_0 eigenstate except the reference
  auto qpos = [&](Eigen::Index i) { return i < ref ? i : i - 1; };
  const Eigen::Index nq = n - 1;
  Eigen::VectorXd coupling = Eigen::VectorXd::Zero(nq);
  double diag_v = 0.0;
  std::vector<Eigen::Triplet<double>> qt;
  for (int k = 0; k < v.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(v, k); it; ++it) {
      const Eigen::Index r = it.row(), c = it.col();
      if (r == ref && c == ref) diag_v += it.value();
      else if (c == ref) coupling[qpos(r)] += it.value();
      else if (r != ref) qt.emplace_back(int(qpos(r)), int(qpos(c)), -it.value());
    }
  }
  Eigen::VectorXd h0q(nq);
  for (Eigen::Index i = 0; i < n; ++i)
    if (i != ref) h0q[qpos(i)] = h0[i];

  BwptResult res;
  res.unperturbed = h0[ref];
  double e = h0[ref];
  if (nq == 0 || coupling.norm() == 0.0) {
    res.energy = e + diag_v;
    res.converged = true;
    res.iterations = 1;
    return res;
  }
  for (Eigen::Index i = 0; i < nq; ++i) qt.emplace_back(int(i), int(i), 0.0);
  Eigen::SparseMatrix<double> m(nq, nq);
  m.setFromTriplets(qt.begin(), qt.end());
  const Eigen::VectorXd m_diag = m.diagonal();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.analyzePattern(m);

  double damp = 1.0;
  double prev_step = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    const double gap = (h0q.array() - e).abs().minCoeff();
    if (gap < 1e-12)
      throw NumericalError("BWPT small denominator: E=" + std::to_string(e) +
                           " hits an unperturbed level");
    Eigen::SparseMatrix<double> me = m;
    for (Eigen::Index i = 0; i < nq; ++i) me.coeffRef(i, i) = m_diag[i] + e - h0q[i];
    lu.factorize(me);
    if (lu.info() != Eigen::Success) throw NumericalError("BWPT resolvent is singular");
    const Eigen::VectorXd y = lu.solve(coupling);
    const double next = h0[ref] + diag_v + coupling.dot(y);
    const double step = next - e;
    res.iterations = it;
    if (std::abs(step) < tol) {
      res.energy = next;
      res.converged = true;
      res.damped = damp < 1.0;
      return res;
    }
    if (it > 1 && step * prev_step < 0.0) damp = 0.5;
    prev_step = step;
    e += damp * step;
  }
  res.energy = e;
  res.damped = damp < 1.0;
  return res;
}

struct QuasiBoundState {
  double energy = 0.0;
  double energy_rel = 0.0;          ///< relative to the ground energy E_0
  std::vector<double> profile;      ///< <n_j>, j = 1..N
  int parity = -1;
  double localization_ratio = 0.0;
  double residual = 0.0;
};

enum class EigenMethod { dense, lanczos };

/// Lowest odd-parity eigenpair of H_S projected onto N_ext >= min_excitation.
inline QuasiBoundState subspace_quasi_bound_state(const ModelParams& p, const Basis& basis,
                                                  double ground_energy, int min_excitation = 3,
                                                  EigenMethod method = EigenMethod::lanczos,
                                                  const SolverLimits& lim = {}) {
  const HermitianOperator h = build_subspace_hamiltonian(p, basis, min_excitation);
  QuasiBoundState q;
  Eigen::VectorXd vec;
  if (method == EigenMethod::dense) {
    const Spectrum sp = diagonalize(h, basis, Sector::odd, lim);
    if (sp.size() == 0) throw ContractError("odd subspace is empty");
    q.energy = sp.energy(0);
    vec = sp.vector(0);
    Eigen::VectorXd local(h.dim());
    for (std::size_t l = 0; l < h.dim(); ++l) local[l] = vec[h.support()[l]];
    q.residual = (h.to_sparse() * local - q.energy * local).norm();
  } else {
    const Eigenpair ep = lowest_eigenpair(h, basis, -1);
    q.energy = ep.energy;
    vec = ep.vector;
    q.residual = ep.residual;
  }
  q.energy_rel = q.energy - ground_energy;
  for (int j = 1; j <= basis.n_cavities(); ++j) q.profile.push_back(site_occupation(vec, basis, j));
  q.localization_ratio = localization_ratio(vec, basis);
  return q;
}

/// Same, with E_0 taken from a Lanczos solve of the full even sector.
inline QuasiBoundState subspace_quasi_bound_state(const ModelParams& p, int min_excitation = 3) {
  const Basis basis(p);
  const Eigenpair ground = lowest_eigenpair(build_sc_hamiltonian(p, basis), basis, +1);
  return subspace_quasi_bound_state(p, basis, ground.energy, min_excitation);
}

}  // namespace ccaqed

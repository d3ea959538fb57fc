#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <vector>

#include "ccaqed/error.hpp"
#include "ccaqed/model.hpp"

namespace ccaqed {

struct MatrixEntry {
  std::size_t row;
  std::size_t col;
  double value;
};

/// Real symmetric operator stored as its upper triangle (row <= col), sorted
/// row-major. Indices are local to `support`, the list of basis positions the
/// operator acts on; for a full-space operator support is 0..dim-1.
class HermitianOperator {
 public:
  HermitianOperator(std::vector<MatrixEntry> upper, std::uint64_t basis_tag,
                    std::vector<std::size_t> support)
      : entries_(std::move(upper)), basis_tag_(basis_tag), support_(std::move(support)) {}

  std::size_t dim() const { return support_.size(); }
  const std::vector<MatrixEntry>& entries() const { return entries_; }
  std::uint64_t basis_tag() const { return basis_tag_; }
  const std::vector<std::size_t>& support() const { return support_; }

  Eigen::SparseMatrix<double> to_sparse() const {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(2 * entries_.size());
    for (const auto& e : entries_) {
      t.emplace_back(static_cast<int>(e.row), static_cast<int>(e.col), e.value);
      if (e.row != e.col)
        t.emplace_back(static_cast<int>(e.col), static_cast<int>(e.row), e.value);
    }
    Eigen::SparseMatrix<double> m(static_cast<int>(dim()), static_cast<int>(dim()));
    m.setFromTriplets(t.begin(), t.end());
    return m;
  }

  Eigen::MatrixXd to_dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim(), dim());
    for (const auto& e : entries_) {
      m(e.row, e.col) = e.value;
      m(e.col, e.row) = e.value;
    }
    return m;
  }

  /// Upper bound on the spectral norm (maximum absolute row sum).
  double norm_bound() const {
    std::vector<double> rows(dim(), 0.0);
    for (const auto& e : entries_) {
      rows[e.row] += std::abs(e.value);
      if (e.row != e.col) rows[e.col] += std::abs(e.value);
    }
    return rows.empty() ? 0.0 : *std::max_element(rows.begin(), rows.end());
  }

  /// Debug dump: one "row,col,value" line per stored entry, basis indices.
  void write_csv(std::ostream& os) const {
    os << "row,col,value\n";
    os.precision(17);
    for (const auto& e : entries_)
      os << support_[e.row] << ',' << support_[e.col] << ',' << e.value << '\n';
  }

 private:
  std::vector<MatrixEntry> entries_;
  std::uint64_t basis_tag_;
  std::vector<std::size_t> support_;
};

/// Deliberate corruption of the counter-rotating term, used to check that the
/// validation suite notices broken hermiticity and broken parity.
enum class Fault {
  none,
  crw_sign,    ///< sigma_+ a_s^dagger gets the wrong sign, its conjugate does not
  crw_parity,  ///< counter-rotating pair acts as g(sigma_+ + sigma_-) without photons
};

/// Applies every term of the scatterer Hamiltonian to each basis state and
/// reports the nonzero matrix elements as sink(row, col, <row|H|col>).
/// Elements leading outside the truncated space are dropped.
template <class Sink>
void for_each_sc_element(const ModelParams& p, const Basis& basis, Sink&& sink,
                         Fault fault = Fault::none) {
  const int n = basis.n_cavities();
  const int cutoff = basis.max_excitation();
  const int s0 = p.atom_site() - 1;
  auto emit = [&](std::size_t col, std::uint64_t key, double value) {
    const auto row = basis.find_key(key);
    if (row >= 0 && value != 0.0) sink(static_cast<std::size_t>(row), col, value);
  };
  for (std::size_t col = 0; col < basis.size(); ++col) {
    const BasisState& st = basis[col];
    const auto& occ = st.photon_occupations;
    const std::uint64_t key = basis.key_of(st);
    const int ext = st.excitation();

    const double diag = p.omega_c * st.photon_number() +
                        0.5 * p.omega_a * (st.atom_excited ? 1.0 : -1.0);
    if (diag != 0.0) sink(col, col, diag);

    for (int j = 0; j + 1 < n; ++j) {
      if (occ[j] > 0) {
        emit(col, key - basis.radix(j) + basis.radix(j + 1),
             -p.xi * std::sqrt(double(occ[j]) * double(occ[j + 1] + 1)));
      }
      if (occ[j + 1] > 0) {
        emit(col, key - basis.radix(j + 1) + basis.radix(j),
             -p.xi * std::sqrt(double(occ[j + 1]) * double(occ[j] + 1)));
      }
    }

    const int ns = occ[s0];
    const std::uint64_t rs = basis.radix(s0);
    // rotating pair: sigma_+ a_s + a_s^dagger sigma_-
    if (!st.atom_excited && ns > 0) emit(col, key + 1 - rs, p.g * std::sqrt(double(ns)));
    if (st.atom_excited) emit(col, key - 1 + rs, p.g * std::sqrt(double(ns + 1)));

    if (p.rwa_only) continue;
    if (fault == Fault::crw_parity) {
      if (!st.atom_excited && ext + 1 <= cutoff) emit(col, key + 1, p.g);
      if (st.atom_excited) emit(col, key - 1, p.g);
      continue;
    }
    // counter-rotating pair: sigma_+ a_s^dagger + a_s sigma_-
    const double sign = fault == Fault::crw_sign ? -1.0 : 1.0;
    if (!st.atom_excited && ext + 2 <= cutoff)
      emit(col, key + 1 + rs, sign * p.g * std::sqrt(double(ns + 1)));
    if (st.atom_excited && ns > 0) emit(col, key - 1 - rs, p.g * std::sqrt(double(ns)));
  }
}

namespace detail {

inline std::vector<MatrixEntry> merge_upper(std::vector<MatrixEntry> e) {
  std::sort(e.begin(), e.end(), [](const MatrixEntry& a, const MatrixEntry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  std::vector<MatrixEntry> out;
  out.reserve(e.size());
  for (const auto& x : e) {
    if (!out.empty() && out.back().row == x.row && out.back().col == x.col)
      out.back().value += x.value;
    else
      out.push_back(x);
  }
  std::erase_if(out, [](const MatrixEntry& x) { return x.value == 0.0; });
  return out;
}

inline std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

inline void check_basis(const ModelParams& p, const Basis& basis) {
  if (basis.n_cavities() != p.n_cavities || basis.max_excitation() != p.max_excitation)
    throw ContractError("basis was not built from these model parameters");
}

}  // namespace detail

/// omega_c sum a^dag a - xi sum (a_j^dag a_{j-1} + h.c.) + omega_a/2 sigma_z
///   + g sigma_x (a_s^dag + a_s), without the counter-rotating pair when
/// rwa_only is set, projected onto the truncated space.
inline HermitianOperator build_sc_hamiltonian(const ModelParams& p, const Basis& basis,
                                              Fault fault = Fault::none) {
  p.validate();
  detail::check_basis(p, basis);
  std::vector<MatrixEntry> upper;
  for_each_sc_element(
      p, basis,
      [&](std::size_t row, std::size_t col, double v) {
        if (row <= col) upper.push_back({row, col, v});
      },
      fault);
  return HermitianOperator(detail::merge_upper(std::move(upper)), basis.tag(),
                           detail::iota_indices(basis.size()));
}

/// H_S restricted to the states with N_ext >= min_excitation.
inline HermitianOperator build_subspace_hamiltonian(const ModelParams& p,
                                                    const Basis& basis,
                                                    int min_excitation) {
  if (min_excitation > p.max_excitation)
    throw ContractError("min_excitation exceeds the excitation cutoff");
  const HermitianOperator full = build_sc_hamiltonian(p, basis);
  std::vector<std::ptrdiff_t> local(basis.size(), -1);
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    if (basis[i].excitation() >= min_excitation) {
      local[i] = static_cast<std::ptrdiff_t>(support.size());
      support.push_back(i);
    }
  }
  if (support.empty()) throw ContractError("projected subspace is empty");
  std::vector<MatrixEntry> upper;
  for (const auto& e : full.entries()) {
    if (local[e.row] >= 0 && local[e.col] >= 0)
      upper.push_back({std::size_t(local[e.row]), std::size_t(local[e.col]), e.value});
  }
  return HermitianOperator(std::move(upper), basis.tag(), std::move(support));
}

/// Largest |<r|H|c> - <c|H|r>| over every generated element. A correctly
/// assembled Hamiltonian gives exactly zero.
inline double hermiticity_defect(const ModelParams& p, const Basis& basis,
                                 Fault fault = Fault::none) {
  std::vector<MatrixEntry> all;
  for_each_sc_element(
      p, basis, [&](std::size_t r, std::size_t c, double v) { all.push_back({r, c, v}); },
      fault);
  auto less = [](const MatrixEntry& a, const MatrixEntry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  };
  std::sort(all.begin(), all.end(), less);
  double worst = 0.0;
  for (const auto& e : all) {
    MatrixEntry probe{e.col, e.row, 0.0};
    auto it = std::lower_bound(all.begin(), all.end(), probe, less);
    const double mirror =
        (it != all.end() && it->row == e.col && it->col == e.row) ? it->value : 0.0;
    worst = std::max(worst, std::abs(e.value - mirror));
  }
  return worst;
}

/// Largest |value| of a stored element joining states of different parity.
inline double parity_block_defect(const HermitianOperator& h, const Basis& basis) {
  double worst = 0.0;
  for (const auto& e : h.entries())
    if (basis.parity(h.support()[e.row]) != basis.parity(h.support()[e.col]))
      worst = std::max(worst, std::abs(e.value));
  return worst;
}

/// Largest |value| of a stored element joining states of different N_ext.
inline double excitation_block_defect(const HermitianOperator& h, const Basis& basis) {
  double worst = 0.0;
  for (const auto& e : h.entries())
    if (basis[h.support()[e.row]].excitation() != basis[h.support()[e.col]].excitation())
      worst = std::max(worst, std::abs(e.value));
  return worst;
}

/// Coupling of the atom to the k-th standing-wave mode of the segment,
/// g sqrt(2/(N+1)) sin(k pi / 2). Exact zero when the atom sits on a node.
inline double mode_coupling(const ModelParams& p, int k) {
  if (k < 1 || k > p.n_cavities)
    throw ContractError("mode index " + std::to_string(k) + " outside 1.." +
                        std::to_string(p.n_cavities));
  if (k % 2 == 0) return 0.0;
  const double sign = (k % 4 == 1) ? 1.0 : -1.0;
  return p.g * std::sqrt(2.0 / (p.n_cavities + 1)) * sign;
}

struct DarkMode {
  int k;
  double gap;  ///< excitation energy above the ground state
};

/// Modes with a node at the atom site; their one-photon excitations above the
/// ground state sit at omega_c - 2 xi cos(k pi / (N+1)) for every g.
inline std::vector<DarkMode> dark_mode_energies(const ModelParams& p) {
  std::vector<DarkMode> out;
  for (int k = 2; k <= p.n_cavities; k += 2)
    out.push_back({k, p.omega_c - 2.0 * p.xi * std::cos(k * M_PI / (p.n_cavities + 1))});
  return out;
}

/// <a_site^dag a_site> for a state vector over the basis (site is 1-based).
inline double site_occupation(const Eigen::Ref<const Eigen::VectorXd>& v,
                              const Basis& basis, int site) {
  if (site < 1 || site > basis.n_cavities())
    throw ContractError("site " + std::to_string(site) + " outside 1.." +
                        std::to_string(basis.n_cavities()));
  if (static_cast<std::size_t>(v.size()) != basis.size())
    throw ContractError("state vector length does not match the basis");
  double n = 0.0;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    const int occ = basis[i].photon_occupations[site - 1];
    if (occ) n += occ * v[i] * v[i];
  }
  return n;
}

/// a^dagger_site applied to a state vector (site 1-based), truncated.
inline Eigen::VectorXd apply_creation(const Eigen::Ref<const Eigen::VectorXd>& v,
                                      const Basis& basis, int site) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(basis.size());
  const int j = site - 1;
  for (std::size_t i = 0; i < basis.size(); ++i) {
    if (v[i] == 0.0) continue;
    const BasisState& st = basis[i];
    if (st.excitation() + 1 > basis.max_excitation()) continue;
    const auto target = basis.find_key(basis.key_of(st) + basis.radix(j));
    if (target >= 0) out[target] += std::sqrt(double(st.photon_occupations[j] + 1)) * v[i];
  }
  return out;
}

}  // namespace ccaqed

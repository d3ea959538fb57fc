#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ccaqed/error.hpp"

namespace ccaqed {

/// Physical and truncation parameters of the cavity array + atom.
/// Energies are in units of the cavity frequency (omega_c = 1 by default).
struct ModelParams {
  int n_cavities = 7;       ///< odd number of cavities in the scattering segment
  double omega_c = 1.0;     ///< cavity frequency
  double omega_a = 1.0;     ///< atomic level splitting
  double xi = 0.23;         ///< hopping inside the segment and in the leads
  double eta = 0.23;        ///< hopping between the segment and the leads
  double g = 0.0;           ///< atom-cavity coupling
  int max_excitation = 7;   ///< global cutoff on photons + atomic excitation
  bool rwa_only = false;    ///< drop the counter-rotating coupling

  /// 1-based index of the cavity holding the atom (always the centre).
  int atom_site() const { return (n_cavities + 1) / 2; }

  void validate() const {
    if (n_cavities < 1 || n_cavities % 2 == 0) {
      throw ParameterError("n_cavities must be a positive odd integer, got " +
                           std::to_string(n_cavities));
    }
    if (max_excitation < 1) {
      throw ParameterError("max_excitation must be >= 1, got " +
                           std::to_string(max_excitation));
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(omega_c) || !finite(omega_a) || !finite(xi) || !finite(eta) ||
        !finite(g)) {
      throw ParameterError("model parameters must be finite");
    }
    if (xi < 0.0 || eta < 0.0 || g < 0.0) {
      throw ParameterError("xi, eta and g must be non-negative");
    }
    if (eta > xi) {
      throw ParameterError("eta must not exceed xi (eta=" + std::to_string(eta) +
                           ", xi=" + std::to_string(xi) + ")");
    }
  }
};

/// Fock occupation of every cavity plus the atomic state.
struct BasisState {
  std::vector<int> photon_occupations;
  bool atom_excited = false;

  int photon_number() const {
    int n = 0;
    for (int k : photon_occupations) n += k;
    return n;
  }
  int excitation() const { return photon_number() + (atom_excited ? 1 : 0); }

  friend bool operator==(const BasisState&, const BasisState&) = default;
};

/// (-1)^N_ext.
inline int parity_of(const BasisState& state) {
  return state.excitation() % 2 == 0 ? +1 : -1;
}

enum class Sector { even, odd, both };

inline constexpr std::size_t kDefaultDimensionLimit = 2'000'000;

/// Number of states with N_ext <= cutoff on n sites plus a two-level atom.
/// Returns a double so that oversized requests can be rejected before any
/// integer arithmetic overflows.
inline double basis_dimension(int n_sites, int cutoff) {
  // sum_{p<=c} C(p+n-1, n-1) = C(c+n, n)
  auto binom = [](int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return std::round(r);
  };
  return binom(cutoff + n_sites, n_sites) + binom(cutoff - 1 + n_sites, n_sites);
}

/// Truncated Fock x atom basis. Immutable after construction.
///
/// Ordering is lexicographic in (N_ext, atom flag, occupation vector) which
/// makes every derived table reproducible across runs.
class Basis {
 public:
  Basis(int n_cavities, int max_excitation,
        std::size_t dimension_limit = kDefaultDimensionLimit)
      : n_cavities_(n_cavities), cutoff_(max_excitation) {
    if (n_cavities < 1) throw ParameterError("basis needs at least one cavity");
    if (max_excitation < 0) throw ParameterError("negative excitation cutoff");
    const double dim = basis_dimension(n_cavities, max_excitation);
    if (dim > static_cast<double>(dimension_limit)) {
      throw ResourceLimitError(
          "basis dimension " + std::to_string(static_cast<long long>(dim)) +
          " exceeds the configured limit " + std::to_string(dimension_limit) +
          " (n_cavities=" + std::to_string(n_cavities) +
          ", max_excitation=" + std::to_string(max_excitation) + ")");
    }
    const double key_range =
        2.0 * std::pow(static_cast<double>(cutoff_ + 1), n_cavities_);
    if (key_range >= 1.8e19) {
      throw ResourceLimitError("basis too wide for 64-bit state keys");
    }
    radix_.resize(n_cavities_);
    std::uint64_t r = 2;
    for (int j = 0; j < n_cavities_; ++j) {
      radix_[j] = r;
      r *= static_cast<std::uint64_t>(cutoff_ + 1);
    }

    states_.reserve(static_cast<std::size_t>(dim));
    std::vector<int> occ(n_cavities_, 0);
    for (int ext = 0; ext <= cutoff_; ++ext) {
      for (int atom = 0; atom <= 1; ++atom) {
        const int photons = ext - atom;
        if (photons < 0) continue;
        compositions(occ, 0, photons, atom == 1);
      }
    }
    index_.reserve(states_.size());
    for (std::size_t i = 0; i < states_.size(); ++i) {
      index_.emplace(key_of(states_[i]), i);
      (parity_of(states_[i]) > 0 ? even_ : odd_).push_back(i);
    }
    tag_ = (static_cast<std::uint64_t>(n_cavities_) << 32) ^
           static_cast<std::uint64_t>(cutoff_) ^ 0x9e3779b97f4a7c15ULL;
  }

  explicit Basis(const ModelParams& p,
                 std::size_t dimension_limit = kDefaultDimensionLimit)
      : Basis((p.validate(), p.n_cavities), p.max_excitation, dimension_limit) {}

  std::size_t size() const { return states_.size(); }
  int n_cavities() const { return n_cavities_; }
  int max_excitation() const { return cutoff_; }
  std::uint64_t tag() const { return tag_; }

  const BasisState& operator[](std::size_t i) const { return states_[i]; }
  const std::vector<BasisState>& states() const { return states_; }

  int parity(std::size_t i) const { return parity_of(states_[i]); }

  /// Indices of even (+1) and odd (-1) parity states, ascending.
  const std::vector<std::size_t>& even_indices() const { return even_; }
  const std::vector<std::size_t>& odd_indices() const { return odd_; }
  const std::vector<std::size_t>& sector_indices(int parity) const {
    return parity > 0 ? even_ : odd_;
  }

  /// Position of a state, or -1 when it is outside the truncated space.
  std::ptrdiff_t find(const BasisState& s) const {
    if (static_cast<int>(s.photon_occupations.size()) != n_cavities_) return -1;
    for (int n : s.photon_occupations)
      if (n < 0 || n > cutoff_) return -1;
    if (s.excitation() > cutoff_) return -1;
    return find_key(key_of(s));
  }

  /// Key arithmetic used by the operator builders: a_j^dagger shifts the key
  /// by radix(j), sigma_+ by 1.
  std::uint64_t key_of(const BasisState& s) const {
    std::uint64_t k = s.atom_excited ? 1 : 0;
    for (int j = 0; j < n_cavities_; ++j)
      k += radix_[j] * static_cast<std::uint64_t>(s.photon_occupations[j]);
    return k;
  }
  std::uint64_t radix(int site0) const { return radix_[site0]; }
  std::ptrdiff_t find_key(std::uint64_t key) const {
    auto it = index_.find(key);
    return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
  }

  /// Index of the state with the cavity order reversed (j -> N+1-j).
  std::size_t mirror(std::size_t i) const {
    BasisState m = states_[i];
    std::reverse(m.photon_occupations.begin(), m.photon_occupations.end());
    return static_cast<std::size_t>(find(m));
  }

 private:
  void compositions(std::vector<int>& occ, int site, int remaining, bool atom) {
    if (site == n_cavities_ - 1) {
      occ[site] = remaining;
      states_.push_back(BasisState{occ, atom});
      return;
    }
    for (int n = 0; n <= remaining; ++n) {
      occ[site] = n;
      compositions(occ, site + 1, remaining - n, atom);
    }
    occ[site] = 0;
  }

  int n_cavities_;
  int cutoff_;
  std::uint64_t tag_ = 0;
  std::vector<std::uint64_t> radix_;
  std::vector<BasisState> states_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<std::size_t> even_, odd_;
};

inline Basis enumerate_basis(const ModelParams& params,
                             std::size_t dimension_limit = kDefaultDimensionLimit) {
  return Basis(params, dimension_limit);
}

}  // namespace ccaqed

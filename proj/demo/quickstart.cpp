// Bound states and a coarse transmission spectrum for a short array.
#include <cstdio>

#include "ccaqed/ccaqed.hpp"

int main() {
  using namespace ccaqed;
  ModelParams p;
  p.n_cavities = 7;
  p.max_excitation = 5;
  p.xi = 0.23;
  p.eta = 0.23;
  p.g = 0.6;

  const Basis basis(p);
  const Spectrum sp = diagonalize(build_sc_hamiltonian(p, basis), basis, Sector::both);
  const BoundStateSet bound = classify_bound_states(sp, basis, p);
  std::printf("dim %zu, %zu bound states\n", basis.size(), bound.found());
  for (const auto& s : bound.states)
    std::printf("  psi%d  E=% .6f  parity %+d  ratio %.2e\n", s.label, s.energy, s.parity,
                s.localization_ratio);
  if (bound.find(2)) std::printf("inelastic threshold %.6f\n", inelastic_threshold(bound, p));

  const TransitionTables t = transition_amplitudes(sp, bound, basis);
  std::printf("\n omega_in    J_Te      J_Re      J_Tin     J_Rin\n");
  for (int i = 1; i < 20; ++i) {
    const double w = p.omega_c - 2.0 * p.xi + 4.0 * p.xi * i / 20.0;
    const Flows f = flows(solve_scattering(p, t, w));
    std::printf(" %.4f   %.5f   %.5f   %.5f   %.5f\n", w, f.transmit_elastic, f.reflect_elastic,
                f.transmit_inelastic, f.reflect_inelastic);
  }
}

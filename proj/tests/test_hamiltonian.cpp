#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ccaqed/hamiltonian.hpp"

using namespace ccaqed;

namespace {

// Dense H_S on the full product space (each cavity 0..cutoff photons, atom
// last), assembled from Kronecker products of single-mode operators. Shares
// no code with the library builder.
Eigen::MatrixXd kron_oracle(const ModelParams& p, int cutoff) {
  const int n = p.n_cavities, d = cutoff + 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (int k = 1; k < d; ++k) a(k - 1, k) = std::sqrt(double(k));
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd sz(2, 2), sp(2, 2), i2 = Eigen::MatrixXd::Identity(2, 2);
  sz << -1, 0, 0, 1;  // index 0 = ground
  sp << 0, 0, 1, 0;   // |e><g|
  auto site_op = [&](int j, const Eigen::MatrixXd& op) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(1, 1);
    for (int k = 0; k < n; ++k) m = Eigen::kroneckerProduct(m, k == j ? op : id).eval();
    return Eigen::kroneckerProduct(m, i2).eval();
  };
  Eigen::MatrixXd photon_id = Eigen::MatrixXd::Identity(int(std::pow(d, n)), int(std::pow(d, n)));
  const Eigen::MatrixXd atom_z = Eigen::kroneckerProduct(photon_id, sz);
  const Eigen::MatrixXd atom_p = Eigen::kroneckerProduct(photon_id, sp);
  const Eigen::MatrixXd atom_x = atom_p + atom_p.transpose();

  std::vector<Eigen::MatrixXd> an;
  for (int j = 0; j < n; ++j) an.push_back(site_op(j, a));
  Eigen::MatrixXd h = 0.5 * p.omega_a * atom_z;
  for (int j = 0; j < n; ++j) h += p.omega_c * an[j].transpose() * an[j];
  for (int j = 1; j < n; ++j) {
    const Eigen::MatrixXd hop = an[j].transpose() * an[j - 1];
    h -= p.xi * (hop + hop.transpose());
  }
  const int s = p.atom_site() - 1;
  const Eigen::MatrixXd as = an[s];
  if (p.rwa_only) {
    const Eigen::MatrixXd rw = atom_p * as;
    h += p.g * (rw + rw.transpose());
  } else {
    h += p.g * atom_x * (as + as.transpose());
  }
  return h;
}

std::size_t product_index(const BasisState& st, int cutoff) {
  std::size_t idx = 0;
  for (int occ : st.photon_occupations) idx = idx * (cutoff + 1) + occ;
  return idx * 2 + (st.atom_excited ? 1 : 0);
}

Eigen::MatrixXd project(const Eigen::MatrixXd& full, const Basis& b) {
  Eigen::MatrixXd out(b.size(), b.size());
  for (std::size_t r = 0; r < b.size(); ++r)
    for (std::size_t c = 0; c < b.size(); ++c)
      out(r, c) = full(product_index(b[r], b.max_excitation()), product_index(b[c], b.max_excitation()));
  return out;
}

ModelParams small(int n, int c, double g) {
  ModelParams p;
  p.n_cavities = n;
  p.max_excitation = c;
  p.g = g;
  p.omega_a = 0.9;
  p.xi = 0.23;
  p.eta = 0.1;
  return p;
}

}  // namespace

TEST(Hamiltonian, SingleCavityDiagonal) {
  ModelParams p = small(1, 1, 0.0);
  Basis b(p);
  const Eigen::MatrixXd h = build_sc_hamiltonian(p, b).to_dense();
  EXPECT_DOUBLE_EQ(h(0, 0), -0.45);
  EXPECT_DOUBLE_EQ(h(1, 1), 1.0 - 0.45);
  EXPECT_DOUBLE_EQ(h(2, 2), 0.45);
  EXPECT_EQ((h - h.diagonal().asDiagonal().toDenseMatrix()).norm(), 0.0);
}

TEST(Hamiltonian, SingleCavityCouplings) {
  ModelParams p = small(1, 2, 0.3);
  Basis b(p);
  const Eigen::MatrixXd h = build_sc_hamiltonian(p, b).to_dense();
  const auto g0 = b.find({{0}, false}), g1 = b.find({{1}, false});
  const auto e0 = b.find({{0}, true}), e1 = b.find({{1}, true});
  EXPECT_DOUBLE_EQ(h(e0, g1), 0.3);  // rotating
  EXPECT_DOUBLE_EQ(h(e1, g0), 0.3);  // counter-rotating
  p.rwa_only = true;
  const Eigen::MatrixXd hr = build_sc_hamiltonian(p, b).to_dense();
  EXPECT_DOUBLE_EQ(hr(e0, g1), 0.3);
  EXPECT_EQ(hr(e1, g0), 0.0);
}

TEST(Hamiltonian, MatchesKroneckerOracle) {
  for (bool rwa : {false, true}) {
    for (int c : {1, 2, 3}) {
      ModelParams p = small(3, c, 0.47);
      p.rwa_only = rwa;
      Basis b(p);
      const Eigen::MatrixXd mine = build_sc_hamiltonian(p, b).to_dense();
      const Eigen::MatrixXd ref = project(kron_oracle(p, c), b);
      EXPECT_LT((mine - ref).cwiseAbs().maxCoeff(), 1e-14) << "rwa=" << rwa << " c=" << c;
    }
  }
}

TEST(Hamiltonian, StructuralHermiticity) {
  ModelParams p = small(7, 7, 0.6);
  Basis b(p);
  EXPECT_EQ(hermiticity_defect(p, b), 0.0);
  EXPECT_GT(hermiticity_defect(p, b, Fault::crw_sign), 0.0);
  EXPECT_EQ(hermiticity_defect(p, b, Fault::crw_parity), 0.0);
}

TEST(Hamiltonian, ParityBlocks) {
  ModelParams p = small(7, 7, 0.6);
  Basis b(p);
  const auto h = build_sc_hamiltonian(p, b);
  EXPECT_EQ(parity_block_defect(h, b), 0.0);
  EXPECT_GT(parity_block_defect(build_sc_hamiltonian(p, b, Fault::crw_parity), b), 0.0);
  EXPECT_GT(excitation_block_defect(h, b), 0.0);
}

TEST(Hamiltonian, RwaConservesExcitation) {
  ModelParams p = small(7, 7, 0.6);
  p.rwa_only = true;
  Basis b(p);
  EXPECT_EQ(excitation_block_defect(build_sc_hamiltonian(p, b), b), 0.0);
}

TEST(Hamiltonian, LinearInG) {
  ModelParams p0 = small(5, 4, 0.0), p1 = small(5, 4, 0.3), p2 = small(5, 4, 0.9);
  Basis b(p0);
  const Eigen::MatrixXd h0 = build_sc_hamiltonian(p0, b).to_dense();
  const Eigen::MatrixXd d1 = build_sc_hamiltonian(p1, b).to_dense() - h0;
  const Eigen::MatrixXd d2 = build_sc_hamiltonian(p2, b).to_dense() - h0;
  EXPECT_LT((d2 - 3.0 * d1).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Hamiltonian, DecoupledAtomAtZeroG) {
  ModelParams p = small(3, 3, 0.0);
  Basis b(p);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(build_sc_hamiltonian(p, b).to_dense());
  // free bosons: m photons distributed over the normal modes
  // omega_c - 2 xi cos(k pi / 4); the atom adds -omega_a/2 (with <= c photons)
  // or +omega_a/2 (with <= c-1 photons)
  std::vector<double> mode;
  for (int k = 1; k <= 3; ++k) mode.push_back(p.omega_c - 2.0 * p.xi * std::cos(k * M_PI / 4));
  std::vector<double> expected;
  for (int n1 = 0; n1 <= 3; ++n1)
    for (int n2 = 0; n1 + n2 <= 3; ++n2)
      for (int n3 = 0; n1 + n2 + n3 <= 3; ++n3) {
        const double e = n1 * mode[0] + n2 * mode[1] + n3 * mode[2];
        expected.push_back(e - p.omega_a / 2);
        if (n1 + n2 + n3 <= 2) expected.push_back(e + p.omega_a / 2);
      }
  std::sort(expected.begin(), expected.end());
  ASSERT_EQ(expected.size(), std::size_t(es.eigenvalues().size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    EXPECT_NEAR(es.eigenvalues()[Eigen::Index(i)], expected[i], 1e-12) << i;
}

TEST(Hamiltonian, SubspaceProjection) {
  ModelParams p = small(7, 7, 0.6);
  Basis b(p);
  const auto full = build_sc_hamiltonian(p, b);
  const auto same = build_subspace_hamiltonian(p, b, 0);
  EXPECT_EQ(same.dim(), full.dim());
  ASSERT_EQ(same.entries().size(), full.entries().size());
  for (std::size_t i = 0; i < full.entries().size(); ++i) {
    EXPECT_EQ(same.entries()[i].row, full.entries()[i].row);
    EXPECT_EQ(same.entries()[i].col, full.entries()[i].col);
    EXPECT_EQ(same.entries()[i].value, full.entries()[i].value);
  }
  EXPECT_EQ(build_subspace_hamiltonian(p, b, 3).dim(), 5104u);
  EXPECT_THROW(build_subspace_hamiltonian(p, b, 8), ContractError);
}

TEST(Hamiltonian, BasisMismatchIsAContractError) {
  ModelParams p = small(5, 3, 0.2);
  Basis other(5, 4);
  EXPECT_THROW(build_sc_hamiltonian(p, other), ContractError);
}

TEST(Hamiltonian, CsvDumpUsesBasisIndices) {
  ModelParams p = small(1, 1, 0.3);
  Basis b(p);
  std::ostringstream os;
  build_subspace_hamiltonian(p, b, 1).write_csv(os);
  const std::string s = os.str();
  EXPECT_EQ(s.rfind("row,col,value\n", 0), 0u);
  EXPECT_NE(s.find("\n1,2,0.2999"), std::string::npos);
}

TEST(ModeCoupling, NodesAndValues) {
  ModelParams p;
  p.g = 0.8;
  EXPECT_EQ(mode_coupling(p, 2), 0.0);
  EXPECT_DOUBLE_EQ(mode_coupling(p, 1), 0.4);
  for (int k = 1; k <= 7; ++k) EXPECT_EQ(mode_coupling(p, k) == 0.0, k % 2 == 0) << k;
  EXPECT_NEAR(mode_coupling(p, 3), 0.8 * std::sqrt(2.0 / 8.0) * std::sin(3 * M_PI / 2), 1e-15);
  EXPECT_THROW(mode_coupling(p, 0), ContractError);
  EXPECT_THROW(mode_coupling(p, 8), ContractError);
}

TEST(DarkModes, PositionsForSevenCavities) {
  ModelParams p;
  p.xi = 0.23;
  const auto d = dark_mode_energies(p);
  ASSERT_EQ(d.size(), 3u);
  EXPECT_EQ(d[0].k, 2);
  EXPECT_NEAR(d[0].gap, 1.0 - 0.46 * std::cos(M_PI / 4), 1e-15);
  EXPECT_NEAR(d[0].gap, 0.6747, 1e-4);
  EXPECT_NEAR(d[1].gap, 1.0, 1e-15);
  EXPECT_NEAR(d[2].gap, 1.3253, 1e-4);
  p.g = 0.9;
  const auto d2 = dark_mode_energies(p);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d2[i].gap, d[i].gap);
}

TEST(SiteOccupation, Examples) {
  Basis b(7, 3);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size());
  v[b.find({{0, 0, 0, 2, 0, 0, 0}, false})] = 1.0;
  EXPECT_DOUBLE_EQ(site_occupation(v, b, 4), 2.0);
  EXPECT_DOUBLE_EQ(site_occupation(v, b, 1), 0.0);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(b.size());
  w[b.find({{1, 0, 0, 0, 0, 0, 0}, false})] = std::sqrt(0.5);
  w[b.find({{0, 0, 0, 0, 0, 0, 1}, false})] = std::sqrt(0.5);
  EXPECT_NEAR(site_occupation(w, b, 7), 0.5, 1e-15);
  EXPECT_THROW(site_occupation(w, b, 0), ContractError);
  EXPECT_THROW(site_occupation(w, b, 8), ContractError);
}

TEST(ApplyCreation, TruncatesAtCutoff) {
  Basis b(3, 2);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(b.size());
  v[b.find({{0, 1, 0}, false})] = 1.0;
  const Eigen::VectorXd out = apply_creation(v, b, 2);
  EXPECT_DOUBLE_EQ(out[b.find({{0, 2, 0}, false})], std::sqrt(2.0));
  Eigen::VectorXd top = Eigen::VectorXd::Zero(b.size());
  top[b.find({{0, 2, 0}, false})] = 1.0;
  EXPECT_EQ(apply_creation(top, b, 1).norm(), 0.0);
}

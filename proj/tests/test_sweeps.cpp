#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ccaqed/sweeps.hpp"

using namespace ccaqed;

namespace {

SweepSpec small_spec() {
  SweepSpec s;
  s.base.n_cavities = 3;
  s.base.max_excitation = 3;
  s.base.xi = 0.23;
  s.base.eta = 0.15;
  s.base.g = 0.4;
  s.bound_threshold = 0.05;
  s.axis = Axis::omega_in;
  s.grid = {0.6, 1.4, 41};
  s.secondary_axis = Axis::g;
  s.secondary_grid = {0.2, 0.8, 3};
  return s;
}

std::string csv(const SweepResult& r) {
  std::ostringstream os;
  write_sweep_csv(os, r, {"config_hash=test"});
  return os.str();
}

}  // namespace

TEST(Grid, PointsAndValidation) {
  GridSpec g{0.0, 1.0, 5};
  const auto v = g.points();
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v.front(), 0.0);
  EXPECT_EQ(v.back(), 1.0);
  EXPECT_DOUBLE_EQ(v[2], 0.5);
  EXPECT_THROW((GridSpec{0.0, 1.0, 0}.validate("x")), ConfigError);
  EXPECT_THROW((GridSpec{0.0, 1.0, 1}.validate("x")), ConfigError);
  EXPECT_THROW((GridSpec{1.0, 0.0, 3}.validate("x")), ConfigError);
  EXPECT_NO_THROW((GridSpec{0.3, 0.3, 1}.validate("x")));
}

TEST(Grid, OmegaIsClippedIntoTheBand) {
  SweepSpec s = small_spec();
  s.grid = {0.0, 2.0, 11};
  const auto v = s.primary_points();
  EXPECT_DOUBLE_EQ(v.front(), 1.0 - 0.46 + kBandMargin);
  EXPECT_DOUBLE_EQ(v.back(), 1.0 + 0.46 - kBandMargin);
}

TEST(Grid, SpecValidation) {
  SweepSpec s = small_spec();
  s.secondary_axis = Axis::omega_in;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.secondary_axis = Axis::eta;
  s.secondary_grid = {0.1, 0.3, 3};
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.base.eta = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(axis_from_string("k"), ConfigError);
}

TEST(ParabolaVertex, RecoversExactVertex) {
  auto f = [](double x) { return 3.0 * (x - 0.37) * (x - 0.37) + 0.2; };
  EXPECT_NEAR(parabola_vertex(0.3, f(0.3), 0.35, f(0.35), 0.4, f(0.4)), 0.37, 1e-14);
  EXPECT_NEAR(parabola_vertex(0.1, f(0.1), 0.3, f(0.3), 0.7, f(0.7)), 0.37, 1e-14);
  EXPECT_EQ(parabola_vertex(0, 1, 1, 1, 2, 1), 1.0);
}

TEST(Sweep, SinglePointEqualsDirectSolve) {
  SweepSpec s = small_spec();
  s.grid = {1.07, 1.07, 1};
  s.secondary_axis.reset();
  const SweepResult r = sweep(s);
  ASSERT_EQ(r.points.size(), 1u);
  EXPECT_EQ(r.kernel_builds, 1u);
  const Basis b(s.base);
  const Spectrum sp = diagonalize(build_sc_hamiltonian(s.base, b), b, Sector::both);
  const BoundStateSet bs = classify_bound_states(sp, b, s.base, s.bound_threshold);
  const Flows f = flows(solve_scattering(s.base, sp, bs, b, 1.07));
  EXPECT_EQ(r.points[0].flows.transmit_elastic, f.transmit_elastic);
  EXPECT_EQ(r.points[0].flows.reflect_elastic, f.reflect_elastic);
  EXPECT_EQ(r.points[0].flows.transmit_inelastic, f.transmit_inelastic);
  EXPECT_EQ(r.points[0].axis2, s.base.g);
}

TEST(Sweep, CachingIsInvisible) {
  SweepSpec s = small_spec();
  s.grid.count = 15;
  s.rwa_compare = true;
  const SweepResult cached = sweep(s);
  s.cache_spectra = false;
  const SweepResult uncached = sweep(s);
  EXPECT_EQ(cached.kernel_builds, 6u);
  EXPECT_EQ(uncached.kernel_builds, 2u * 15u * 3u);
  EXPECT_EQ(csv(cached), csv(uncached));
}

TEST(Sweep, ParallelEqualsSerial) {
  SweepSpec s = small_spec();
  s.rwa_compare = true;
  s.threads = 1;
  const std::string serial = csv(sweep(s));
  s.threads = 4;
  EXPECT_EQ(csv(sweep(s)), serial);
}

TEST(Sweep, EtaAxisReusesOneSpectrum) {
  SweepSpec s = small_spec();
  s.secondary_axis = Axis::eta;
  s.secondary_grid = {0.05, 0.23, 4};
  const SweepResult r = sweep(s);
  EXPECT_EQ(r.kernel_builds, 1u);
  EXPECT_EQ(r.axis2.size(), 4u);
  for (const auto& p : r.points) {
    EXPECT_TRUE(p.flag == PointFlag::ok || p.flag == PointFlag::augmented);
    EXPECT_LE(p.flows.conservation_defect, kDefectTolerance);
  }
}

TEST(Sweep, FixedFrequencyAlongG) {
  SweepSpec s = small_spec();
  s.axis = Axis::g;
  s.grid = {0.1, 0.5, 3};
  s.secondary_axis.reset();
  s.omega_in = 1.05;
  const SweepResult r = sweep(s);
  EXPECT_EQ(r.kernel_builds, 3u);
  for (const auto& p : r.points) EXPECT_EQ(p.omega_in, 1.05);
  EXPECT_THROW(transmission_minimum(r), ContractError);
}

TEST(Sweep, PoleNudge) {
  SweepSpec s = small_spec();
  s.secondary_axis.reset();
  const Basis b(s.base);
  const SliceKernel k = build_kernel(s.base, b, s.bound_threshold, s.limits);
  ASSERT_TRUE(k.tables.has_value());
  // an energy where the elimination hits a pole of a coupled state
  for (Eigen::Index j = 0; j < k.tables->energies.size(); ++j) {
    const double w = k.tables->energies[j] - k.tables->ground_energy;
    if (std::abs(w - 1.0) > 0.4 || std::abs(k.tables->ground_first[j]) < 1e-3) continue;
    const PointResult pr = evaluate_point(s.base, k, w, s);
    EXPECT_TRUE(pr.flag == PointFlag::augmented || pr.flag == PointFlag::nudged ||
                pr.flag == PointFlag::ok);
    EXPECT_LE(pr.flows.conservation_defect, kDefectTolerance);
    return;
  }
  GTEST_SKIP() << "no coupled pole inside the band";
}

TEST(Sweep, KernelFailureIsRecordedPerPoint) {
  SweepSpec s = small_spec();
  s.bound_threshold = 1e-300;  // nothing qualifies as psi_0
  s.secondary_axis.reset();
  s.base.g = 0.4;
  const SweepResult r = sweep(s);
  for (const auto& p : r.points) {
    EXPECT_EQ(p.flag, PointFlag::error);
    EXPECT_TRUE(std::isnan(p.flows.transmit_elastic));
  }
}

TEST(TransmissionMinimum, FlatSliceGetsMarker) {
  SweepSpec s = small_spec();
  s.base.g = 0.0;
  s.base.eta = s.base.xi;
  s.secondary_axis.reset();
  const SweepResult r = sweep(s);
  const auto m = transmission_minimum(r);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_TRUE(m[0].flat);
  EXPECT_TRUE(std::isnan(m[0].omega_min));
}

TEST(TransmissionMinimum, RwaMinimumAtCavityFrequency) {
  SweepSpec s = small_spec();
  s.base.rwa_only = true;
  s.base.eta = s.base.xi;
  s.grid = {0.6, 1.4, 81};
  const SweepResult r = sweep(s);
  const double step = 0.8 / 80;
  for (const auto& m : transmission_minimum(r)) {
    ASSERT_FALSE(m.flat);
    EXPECT_NEAR(m.omega_min, 1.0, step) << m.axis2;
  }
}

TEST(Overlay, DarkLinesConstantAndThresholdTracksBoundStates) {
  SweepSpec s = small_spec();
  s.base.n_cavities = 5;
  s.base.max_excitation = 4;
  s.grid.count = 21;
  s.secondary_grid = {0.4, 0.8, 3};
  SweepResult r = sweep(s);
  overlay_references(r, true);
  ASSERT_EQ(r.slices.size(), 3u);
  for (const auto& sl : r.slices) {
    ASSERT_EQ(sl.dark_modes.size(), r.slices[0].dark_modes.size());
    for (std::size_t i = 0; i < sl.dark_modes.size(); ++i)
      EXPECT_EQ(sl.dark_modes[i].gap, r.slices[0].dark_modes[i].gap);
    if (!std::isnan(sl.e2)) EXPECT_DOUBLE_EQ(sl.threshold, sl.e2 - sl.e0 + 1.0 - 0.46);
    EXPECT_FALSE(std::isnan(sl.quasi_bound));
  }
}

TEST(Csv, LayoutAndPreamble) {
  SweepSpec s = small_spec();
  s.grid.count = 3;
  s.secondary_grid.count = 2;
  s.secondary_grid.max = 0.8;
  s.rwa_compare = true;
  const std::string text = csv(sweep(s));
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "# config_hash=test");
  std::getline(is, line);
  EXPECT_EQ(line,
            "axis1,axis2,J_Te,J_Re,J_Tin,J_Rin,conservation_defect,flag,J_Te_rwa,J_Re_rwa,"
            "J_Tin_rwa,J_Rin_rwa,conservation_defect_rwa,flag_rwa");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 6);
}

TEST(Sweep, KernelStoreSharedAcrossSweeps) {
  SweepSpec s = small_spec();
  KernelStore store;
  const SweepResult first = sweep(s, &store);
  EXPECT_EQ(first.kernel_builds, 3u);
  EXPECT_EQ(store.size(), 3u);
  s.base.eta = 0.08;
  const SweepResult second = sweep(s, &store);
  EXPECT_EQ(second.kernel_builds, 0u);
  const SweepResult direct = sweep(s);
  EXPECT_EQ(csv(second), csv(direct));
  s.bound_threshold = 0.06;
  EXPECT_EQ(sweep(s, &store).kernel_builds, 3u);
}

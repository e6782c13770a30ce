#include "roughctl/fbm.hpp"
#include "roughctl/hjb.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace roughctl;

namespace {

CoefficientField control_drift(ScalarFamily sigma) { return CoefficientField::scalar_families({0.0, 0.0, 1.0, 0.0}, {sigma}); }

RewardSpec drive_to_zero() {
  RewardSpec s;
  s.terminal.gabs = -1.0;
  return s;
}

ControlSet five() { return ControlSet::dirac_grid(-1.0, 1.0, 5); }

FlowField inverted_flow(const CoefficientField& cf, std::shared_ptr<const RoughLift> lift, const UniformAxis& axis) {
  auto ff = solve_flow(cf, std::move(lift), axis);
  invert_flow(ff);
  return ff;
}

std::shared_ptr<const RoughLift> fbm(double h, std::size_t n, std::uint64_t seed) {
  return std::make_shared<const RoughLift>(lift_fbm(h, 1, n, seed));
}

double kink_error(const ValueGrid& v, double reach) {
  double worst = 0.0;
  for (std::size_t j = 0; j < v.axis.nodes(); ++j) {
    const double x = v.axis.x(j);
    if (std::abs(x) > reach) continue;
    worst = std::max(worst, std::abs(v.values(0, static_cast<Eigen::Index>(j)) + std::max(0.0, std::abs(x) - 1.0)));
  }
  return worst;
}

}  // namespace

TEST(Hamiltonian, Examples) {
  const HamiltonianSpec hs(RewardSpec{}, five(), control_drift(ScalarFamily::constant(0.0)));
  EXPECT_EQ(hamiltonian(hs, 0.0, 0.3, DiscreteMeasure::uniform({-1.0, 1.0}), 2.0), 0.0);
  EXPECT_EQ(hamiltonian(hs, 0.0, 0.3, DiscreteMeasure::dirac(1.0), 2.0), 2.0);
  EXPECT_EQ(hamiltonian(hs, 0.0, 0.3, std::size_t{4}, 2.0), 2.0);
  RewardSpec one;
  one.rate.r0 = 1.0;
  const HamiltonianSpec hf(one, five(), control_drift(ScalarFamily::constant(0.0)));
  EXPECT_EQ(hamiltonian(hf, 0.5, -2.0, DiscreteMeasure::dirac(0.5), 0.0), 1.0);
  EXPECT_EQ(hf.sup(0.0, 0.0, -3.0).second, 0u);
  EXPECT_THROW(hamiltonian(hs, 0.0, 0.0, std::size_t{5}, 1.0), ValidationError);
}

TEST(Hamiltonian, HatUnderConstantSigmaIsAShift) {
  const auto lift = fbm(0.45, 256, 60);
  const auto cf = CoefficientField::scalar_families({0.0, 0.4, 1.0, 0.0}, {ScalarFamily::constant(0.3)});
  RewardSpec s;
  s.rate.rxx = -1.0;
  const HamiltonianSpec hs(s, five(), cf);
  const auto ff = inverted_flow(cf, lift, UniformAxis(-4.0, 4.0, 81));
  for (std::size_t i : {0u, 100u, 256u})
    for (double y : {-1.3, 0.0, 0.77})
      for (std::size_t c = 0; c < hs.size(); ++c) {
        const double t = ff.time.time(i), z = lift->path().at(i)[0];
        EXPECT_NEAR(hamiltonian_hat(hs, ff, i, y, c, 1.7), hamiltonian(hs, t, y + 0.3 * z, c, 1.7), 1e-12);
      }
  EXPECT_THROW(hamiltonian_hat(hs, ff, 0, 4.5, 0, 1.0), ValidationError);
}

TEST(Hamiltonian, HatAtTimeZeroIsH) {
  const auto lift = fbm(0.45, 256, 61);
  const auto cf = control_drift(ScalarFamily::trig(0.2, 0.1));
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  const auto ff = inverted_flow(cf, lift, UniformAxis(-4.0, 4.0, 81));
  for (double y : {-2.0, 0.1, 3.3}) EXPECT_DOUBLE_EQ(hamiltonian_hat(hs, ff, 0, y, 1, -0.4), hamiltonian(hs, 0.0, y, 1, -0.4));
}

TEST(Hamiltonian, HatUnderGeometricFlow) {
  // sigma(x) = x: phi_t(y) = y e^{zeta_t}, a_t = e^{-zeta_t}, so H^ = p e^{-zeta_t} int a dgamma.
  const auto lift = fbm(0.5, 1 << 12, 62);
  const auto cf = control_drift(ScalarFamily::affine(0.0, 1.0));
  const HamiltonianSpec hs(RewardSpec{}, five(), cf);
  const auto ff = inverted_flow(cf, lift, UniformAxis(-1.0, 1.0, 65));
  double worst = 0.0;
  for (std::size_t i = 0; i <= lift->grid().steps(); i += 97)
    for (double y : {-0.6, 0.2, 0.5})
      for (std::size_t c = 0; c < hs.size(); ++c) {
        const double u = -1.0 + 0.5 * static_cast<double>(c);
        worst = std::max(worst, std::abs(hamiltonian_hat(hs, ff, i, y, c, 2.0) - 2.0 * std::exp(-lift->path().at(i)[0]) * u));
      }
  EXPECT_LE(worst, 1e-3);
}

TEST(LipschitzProbe, BoundedDriftUnderConstantSigma) {
  const auto lift = fbm(0.45, 256, 63);
  const auto cf = control_drift(ScalarFamily::constant(0.3));
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  const auto r = lipschitz_probe(hs, inverted_flow(cf, lift, UniformAxis(-4.0, 4.0, 81)), 2000);
  EXPECT_LE(r.p_ratio, 1.0 + 1e-12);  // |H~(p) - H~(q)| <= |p - q| up to rounding
  EXPECT_GT(r.p_ratio, 0.9);
}

TEST(LipschitzProbe, SineSigmaRatiosFinite) {
  const auto lift = fbm(0.45, 1 << 10, 64);
  const auto cf = control_drift(ScalarFamily::trig(0.2, 0.1));
  RewardSpec s = drive_to_zero();
  s.rate.rxx = -0.5;
  const HamiltonianSpec hs(s, five(), cf);
  const auto r = lipschitz_probe(hs, inverted_flow(cf, lift, UniformAxis(-4.0, 4.0, 129)), 10000);
  EXPECT_TRUE(std::isfinite(r.x_ratio));
  EXPECT_TRUE(std::isfinite(r.p_ratio));
  EXPECT_EQ(r.samples, 10000u);
}

TEST(HjbTransformed, NoDynamicsKeepsTerminalData) {
  const auto lift = fbm(0.45, 256, 65);
  const auto cf = CoefficientField::scalar_families({}, {ScalarFamily::trig(0.2, 0.1)});
  RewardSpec s;
  s.terminal.g2 = -1.0;
  const HamiltonianSpec hs(s, five(), cf);
  const auto ff = inverted_flow(cf, lift, UniformAxis(-8.0, 8.0, 257));
  const UniformAxis ax(-3.0, 3.0, 301);
  const auto v = solve_hjb_transformed(hs, ff, ax);
  for (std::size_t i = 0; i <= 256; i += 32)
    for (std::size_t j = 7; j + 7 < ax.nodes(); j += 7) {
      const double x = ff.phi_at(256, ax.x(j));
      EXPECT_EQ(v.values(static_cast<Eigen::Index>(v.row(i)), static_cast<Eigen::Index>(j)), -x * x);
    }
  EXPECT_EQ(v.provenance, "hjb");
}

TEST(HjbTransformed, DeterministicDriveToZero) {
  // The scheme is first order and monotone, so the error at the corners of the value scales like sqrt(dx).
  const auto cf = control_drift(ScalarFamily::constant(0.0));
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  const auto lift = fbm(0.5, 256, 66);
  const auto ff = inverted_flow(cf, lift, UniformAxis(-8.0, 8.0, 257));
  const UniformAxis coarse(-4.0, 4.0, 401);
  EXPECT_LE(kink_error(solve_hjb_transformed(hs, ff, coarse), 2.0), 3.0 * coarse.spacing());
  const auto fine_lift = fbm(0.5, 2048, 66);
  const auto fine_ff = inverted_flow(cf, fine_lift, UniformAxis(-8.0, 8.0, 257));
  EXPECT_LT(kink_error(solve_hjb_transformed(hs, fine_ff, UniformAxis(-4.0, 4.0, 3201)), 2.0),
            0.5 * kink_error(solve_hjb_transformed(hs, ff, coarse), 2.0));
}

TEST(HjbTransformed, ConstantSigmaMatchesDp) {
  const auto cf = control_drift(ScalarFamily::constant(0.3));
  const auto lift = fbm(0.5, 1 << 12, 67);
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  const auto ff = inverted_flow(cf, lift, UniformAxis(-8.0, 8.0, 512));
  const UniformAxis ax(-4.0, 4.0, 8001);
  HjbOptions ho;
  ho.stride = 1024;
  const auto v = backmap_value(solve_hjb_transformed(hs, ff, ax, ho), ff, ax);
  EXPECT_EQ(v.provenance, "hjb-backmapped");
  DpOptions dp;
  dp.stride = 256;
  dp.region = std::make_pair(-1.5, 1.5);
  const auto vd = value_dp(drive_to_zero(), five(), cf, *lift, ax, Grid(1.0, 1024), dp);
  EXPECT_LE(value_agreement(vd, v, 0.0, -1.5, 1.5).sup_rel, 0.05);
}

TEST(HjbTransformed, CflViolationRefusedWithSuggestion) {
  const auto cf = control_drift(ScalarFamily::constant(0.0));
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  const auto ff = inverted_flow(cf, fbm(0.5, 64, 68), UniformAxis(-8.0, 8.0, 129));
  const UniformAxis ax(-4.0, 4.0, 801);
  try {
    solve_hjb_transformed(hs, ff, ax);
    FAIL() << "expected a CFL refusal";
  } catch (const CflError& e) {
    EXPECT_NEAR(e.suggested_dt, ax.spacing() / 2.2, 1e-12);
    EXPECT_NE(std::string(e.what()).find("substeps"), std::string::npos);
    HjbOptions o;
    o.substeps = e.suggested_substeps;
    EXPECT_NO_THROW(solve_hjb_transformed(hs, ff, ax, o));
  }
}

TEST(HjbTransformed, UnderestimatedDissipationFailsAudit) {
  const auto cf = control_drift(ScalarFamily::constant(0.0));
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  const auto ff = inverted_flow(cf, fbm(0.5, 256, 69), UniformAxis(-8.0, 8.0, 129));
  HjbOptions o;
  o.theta = 0.5;
  EXPECT_THROW(solve_hjb_transformed(hs, ff, UniformAxis(-4.0, 4.0, 201), o), NumericalError);
}

TEST(HjbTransformed, MonotoneAndShiftEquivariant) {
  const auto cf = control_drift(ScalarFamily::trig(0.2, 0.1));
  const auto ff = inverted_flow(cf, fbm(0.45, 512, 70), UniformAxis(-8.0, 8.0, 257));
  const UniformAxis ax(-4.0, 4.0, 401);
  RewardSpec a = drive_to_zero(), b = drive_to_zero(), c = drive_to_zero();
  b.terminal.g2 = 0.01;
  c.terminal.g0 = 0.75;
  const auto va = solve_hjb_transformed(HamiltonianSpec(a, five(), cf), ff, ax);
  const auto vb = solve_hjb_transformed(HamiltonianSpec(b, five(), cf), ff, ax);
  const auto vc = solve_hjb_transformed(HamiltonianSpec(c, five(), cf), ff, ax);
  EXPECT_TRUE(((vb.values - va.values).array() >= 0.0).all());
  EXPECT_LE(((vc.values - va.values).array() - 0.75).abs().maxCoeff(), 1e-12);
}

TEST(HjbTransformed, WorkerCountDoesNotChangeBits) {
  const auto cf = control_drift(ScalarFamily::trig(0.2, 0.1));
  const auto ff = inverted_flow(cf, fbm(0.45, 512, 71), UniformAxis(-8.0, 8.0, 257));
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  HjbOptions one, four;
  one.workers = 1;
  four.workers = 4;
  const UniformAxis ax(-4.0, 4.0, 401);
  EXPECT_TRUE(solve_hjb_transformed(hs, ff, ax, one).values == solve_hjb_transformed(hs, ff, ax, four).values);
}

TEST(Backmap, ConstantSigmaIsAShift) {
  const auto lift = fbm(0.45, 256, 72);
  const auto cf = control_drift(ScalarFamily::constant(0.3));
  const auto ff = inverted_flow(cf, lift, UniformAxis(-8.0, 8.0, 257));
  const HamiltonianSpec hs(drive_to_zero(), five(), cf);
  const UniformAxis ax(-4.0, 4.0, 401);
  const auto vh = solve_hjb_transformed(hs, ff, ax);
  const auto v = backmap_value(vh, ff, ax);
  for (std::size_t i : {0u, 128u, 256u}) {
    const double z = lift->path().at(i)[0];
    for (std::size_t j = 20; j < 380; j += 13) {
      const double x = ax.x(j);
      EXPECT_NEAR(v.at(i, x), interp::linear(ax, vh.slice(i), x - 0.3 * z), 1e-9) << i << " " << x;
    }
  }
  for (std::size_t j = 0; j < ax.nodes(); ++j) EXPECT_NEAR(v.values(0, static_cast<Eigen::Index>(j)), vh.values(0, static_cast<Eigen::Index>(j)), 1e-12);
}

TEST(Agreement, SineSigmaRoughDriver) {
  const auto cf = control_drift(ScalarFamily::trig(0.2, 0.1));
  const auto lift = fbm(0.45, 1 << 12, 73);
  const auto ff = inverted_flow(cf, lift, UniformAxis(-8.0, 8.0, 512));
  const UniformAxis ax(-4.0, 4.0, 8001);
  HjbOptions ho;
  ho.stride = 1024;
  const auto v = backmap_value(solve_hjb_transformed(HamiltonianSpec(drive_to_zero(), five(), cf), ff, ax, ho), ff, ax);
  DpOptions dp;
  dp.stride = 1024;
  dp.region = std::make_pair(-1.5, 1.5);
  const auto vd = value_dp(drive_to_zero(), five(), cf, *lift, ax, Grid(1.0, 1024), dp);
  const auto a = value_agreement(vd, v, 0.0, -1.5, 1.5);
  EXPECT_LE(a.sup_rel, 0.05);
  EXPECT_GT(a.sup_ref, 0.0);
  EXPECT_THROW(value_agreement(vd, v, 0.3, -1.5, 1.5), ValidationError);
}

TEST(HjbResidual, SmoothRegionOfDeterministicValue) {
  // b = u in {-1, .., 1}, F = -x^2, G = 0: for x > 1 the value is smooth and the control is -1.
  RewardSpec s;
  s.rate.rxx = -1.0;
  const auto cf = control_drift(ScalarFamily::constant(0.0));
  const HamiltonianSpec hs(s, five(), cf);
  double prev = 1e300;
  for (std::size_t n : {64u, 256u}) {
    const auto lift = fbm(0.5, n, 74);
    const UniformAxis ax(-4.0, 4.0, 8 * n + 1);
    const auto v = value_dp(s, five(), cf, *lift, ax, Grid(1.0, n));
    const double r = std::max(hjb_residual(v, hs, n / 4, 1.3, 2.0), hjb_residual(v, hs, n / 2, 1.3, 2.0));
    EXPECT_LT(r, prev);
    prev = r;
  }
  EXPECT_LT(prev, 0.05);
}

TEST(SmoothApprox, ZeroSigmaIgnoresDriver) {
  const auto cf = control_drift(ScalarFamily::constant(0.0));
  const auto lift = lift_fbm(0.45, 1, 256, 75);
  const auto rows = smooth_approx_study(drive_to_zero(), five(), cf, lift, UniformAxis(-4.0, 4.0, 401), Grid(1.0, 64),
                                        {16, 32, 64}, -1.5, 1.5);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.sup_error, 0.0);
    EXPECT_EQ(r.runtime_ms, 0.0);
  }
}

TEST(SmoothApprox, FullResolutionIsIdentical) {
  const auto cf = control_drift(ScalarFamily::trig(0.2, 0.1));
  const auto lift = lift_fbm(0.45, 1, 256, 76);
  const UniformAxis ax(-4.0, 4.0, 401);
  const auto rows = smooth_approx_study(drive_to_zero(), five(), cf, lift, ax, Grid(1.0, 64), {64}, -1.5, 1.5);
  EXPECT_LE(rows[0].sup_error, 2.0 * ax.spacing());
}

TEST(SmoothApprox, PiecewiseLinearLiftInterpolates) {
  const auto lift = lift_fbm(0.45, 1, 256, 77);
  const auto pl = piecewise_linear_lift(lift, 16, Grid(1.0, 64));
  for (std::size_t k = 0; k <= 16; ++k) EXPECT_DOUBLE_EQ(pl.path().at(4 * k)[0], lift.path().at(16 * k)[0]);
  EXPECT_NEAR(pl.path().at(2)[0], 0.5 * (lift.path().at(0)[0] + lift.path().at(16)[0]), 1e-15);
}

TEST(SmoothApprox, MonotoneCheck) {
  auto rows = [](std::vector<double> e) {
    std::vector<StudyRow> r;
    for (double x : e) r.push_back({0, x, 0.0});
    return r;
  };
  EXPECT_TRUE(nonincreasing_after_first_decrease(rows({1.0, 2.0, 1.5, 1.0, 1.0})));
  EXPECT_FALSE(nonincreasing_after_first_decrease(rows({1.0, 0.5, 0.7})));
  EXPECT_TRUE(nonincreasing_after_first_decrease(rows({1.0})));
}

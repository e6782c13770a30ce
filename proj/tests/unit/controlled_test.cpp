#include "roughctl/fbm.hpp"
#include "roughctl/integrate.hpp"
#include "roughctl/rde.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

using namespace roughctl;

namespace {

std::shared_ptr<const RoughLift> fbm_lift(double h, std::size_t d, std::size_t steps, std::uint64_t seed, std::size_t over = 8) {
  return std::make_shared<const RoughLift>(lift_fbm(h, d, steps, seed, over));
}

SmoothMap square_map() {
  return {1, [](double, const Eigen::VectorXd& z) { return Eigen::VectorXd::Constant(1, z[0] * z[0]); },
          [](double, const Eigen::VectorXd& z) { return Eigen::MatrixXd::Constant(1, 1, 2.0 * z[0]); }};
}

SmoothMap sin_map() {
  return {1, [](double, const Eigen::VectorXd& z) { return Eigen::VectorXd::Constant(1, std::sin(z[0])); },
          [](double, const Eigen::VectorXd& z) { return Eigen::MatrixXd::Constant(1, 1, std::cos(z[0])); }};
}

}  // namespace

TEST(Kappa, DefaultAndValidation) {
  EXPECT_NEAR(resolve_kappa(0.45, std::nullopt), 0.405, 1e-15);
  EXPECT_THROW(resolve_kappa(0.45, 0.5), ValidationError);
  EXPECT_THROW(resolve_kappa(0.4, 0.2), ValidationError);
}

TEST(Controlled, DriverItselfHasZeroRemainder) {
  const auto lift = fbm_lift(0.45, 2, 256, 3);
  const auto z = identity_path(lift);
  const auto norms = remainder_norms(z);
  EXPECT_EQ(norms.remainder_2kappa, 0.0);
  EXPECT_EQ(norms.gubinelli_kappa, 0.0);
}

TEST(Controlled, ConstantPathIsZero) {
  const auto lift = fbm_lift(0.5, 1, 128, 4);
  const auto c = constant_path(lift, Eigen::VectorXd::Constant(2, 3.0));
  const auto norms = remainder_norms(c);
  EXPECT_EQ(norms.value_kappa, 0.0);
  EXPECT_EQ(norms.gubinelli_sup, 0.0);
  EXPECT_EQ(norms.gubinelli_kappa, 0.0);
  EXPECT_EQ(norms.remainder_2kappa, 0.0);
}

TEST(Controlled, RdeRemainderStableUnderRefinement) {
  // Same fBM sample seen at N and 2N.
  const std::size_t n = 1 << 11;
  const auto fine = sample_fbm(0.45, 1, 16 * n, 19);
  const double alpha = lift_exponent_for_hurst(0.45);
  const auto coarse = std::make_shared<const RoughLift>(lift_smooth(fine, Grid(1.0, n), alpha));
  const auto finer = std::make_shared<const RoughLift>(lift_smooth(fine, Grid(1.0, 2 * n), alpha));
  const auto cf = CoefficientField::scalar_families({}, {ScalarFamily::trig(0.5, 0.3)});
  const auto a = solve_rde(cf, Eigen::VectorXd::Constant(1, 0.2), coarse).path;
  const auto b = solve_rde(cf, Eigen::VectorXd::Constant(1, 0.2), finer).path;
  const double ra = remainder_norms(a).remainder_2kappa, rb = remainder_norms(b).remainder_2kappa;
  EXPECT_GT(ra, 0.0);
  EXPECT_LT(std::max(ra, rb) / std::min(ra, rb), 2.0);
}

TEST(ComposeSmooth, IdentityMap) {
  const auto lift = fbm_lift(0.5, 1, 64, 5);
  const SmoothMap id{1, [](double, const Eigen::VectorXd& z) { return z; },
                     [](double, const Eigen::VectorXd&) { return Eigen::MatrixXd::Identity(1, 1); }};
  const auto z = identity_path(lift);
  const auto out = compose_smooth(id, z);
  EXPECT_EQ(out.values(), z.values());
  for (std::size_t i = 0; i < 65; ++i) EXPECT_EQ(out.gubinelli(i), z.gubinelli(i));
}

TEST(ComposeSmooth, SquareOfDriver) {
  const auto lift = fbm_lift(0.5, 1, 64, 6);
  const auto out = compose_smooth(square_map(), identity_path(lift));
  for (std::size_t i = 0; i < 65; ++i) EXPECT_DOUBLE_EQ(out.gubinelli(i)(0, 0), 2.0 * lift->path().at(i)[0]);
}

TEST(ComposeSmooth, MissingDerivativeRejected) {
  const auto lift = fbm_lift(0.5, 1, 16, 6);
  SmoothMap broken = sin_map();
  broken.jacobian = nullptr;
  EXPECT_THROW(compose_smooth(broken, identity_path(lift)), ValidationError);
}

TEST(ComposeSmooth, FunctorialAtFirstOrder) {
  const auto lift = fbm_lift(0.45, 1, 256, 8);
  const auto cf = CoefficientField::scalar_families({}, {ScalarFamily::trig(0.4, 0.2)});
  const auto z = solve_rde(cf, Eigen::VectorXd::Constant(1, 0.3), lift).path;
  const auto two_steps = compose_smooth(sin_map(), compose_smooth(square_map(), z));
  const SmoothMap composed{1, [](double, const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, std::sin(x[0] * x[0])); },
                           [](double, const Eigen::VectorXd& x) {
                             return Eigen::MatrixXd::Constant(1, 1, std::cos(x[0] * x[0]) * 2.0 * x[0]);
                           }};
  const auto one_step = compose_smooth(composed, z);
  for (std::size_t i = 0; i < 257; ++i) {
    EXPECT_NEAR(two_steps.value(i)[0], one_step.value(i)[0], 1e-14);
    EXPECT_NEAR(two_steps.gubinelli(i)(0, 0), one_step.gubinelli(i)(0, 0), 1e-14);
  }
}

TEST(ComposeSmooth, SeminormBoundAcrossInputs) {
  // N[L(z)] <= c_L (1 + N[z]^2) with one constant for a family of RDE outputs.
  const auto lift = fbm_lift(0.45, 1, 1024, 12);
  double worst = 0.0;
  for (double scale : {0.1, 0.3, 0.6, 1.0})
    for (double y0 : {-1.0, 0.0, 0.7}) {
      const auto cf = CoefficientField::scalar_families({}, {ScalarFamily::trig(scale, 0.5 * scale)});
      const auto z = solve_rde(cf, Eigen::VectorXd::Constant(1, y0), lift).path;
      const double nz = remainder_norms(z).total();
      const double nl = remainder_norms(compose_smooth(sin_map(), z)).total();
      worst = std::max(worst, nl / (1.0 + nz * nz));
    }
  EXPECT_TRUE(std::isfinite(worst));
  EXPECT_LT(worst, 3.0);
}

TEST(Controlled, TriangleInequality) {
  const auto lift = fbm_lift(0.45, 1, 512, 13);
  const auto cf1 = CoefficientField::scalar_families({}, {ScalarFamily::trig(0.3, 0.2)});
  const auto cf2 = CoefficientField::scalar_families({}, {ScalarFamily::affine(0.1, 0.4)});
  const auto a = solve_rde(cf1, Eigen::VectorXd::Constant(1, 0.1), lift).path;
  const auto b = solve_rde(cf2, Eigen::VectorXd::Constant(1, -0.4), lift).path;
  const auto na = remainder_norms(a), nb = remainder_norms(b), ns = remainder_norms(a + b);
  EXPECT_LE(ns.value_kappa, na.value_kappa + nb.value_kappa + 1e-12);
  EXPECT_LE(ns.gubinelli_sup, na.gubinelli_sup + nb.gubinelli_sup + 1e-12);
  EXPECT_LE(ns.gubinelli_kappa, na.gubinelli_kappa + nb.gubinelli_kappa + 1e-12);
  EXPECT_LE(ns.remainder_2kappa, na.remainder_2kappa + nb.remainder_2kappa + 1e-12);
}

TEST(StrongControlled, DroppingSecondLevelStaysWeak) {
  // Flow of sigma(x) = x: nu = phi, nu^zeta = phi, nu^{zeta2} = phi.
  const auto lift = fbm_lift(0.45, 1, 1024, 14);
  const auto cf = CoefficientField::scalar_families({}, {ScalarFamily::affine(0.0, 1.0)});
  const auto x = solve_rde(cf, Eigen::VectorXd::Constant(1, 1.0), lift).path;
  std::vector<Eigen::MatrixXd> second(x.grid().nodes());
  for (std::size_t i = 0; i < second.size(); ++i) second[i] = Eigen::MatrixXd::Constant(1, 1, x.value(i)[0]);
  const StrongControlledPath nu(x, second);
  const auto strong = remainder_norms(nu);
  const auto weak = remainder_norms(nu.weak());
  EXPECT_TRUE(std::isfinite(weak.remainder_2kappa));
  EXPECT_TRUE(std::isfinite(strong.remainder_3kappa));
  EXPECT_TRUE(std::isfinite(strong.gubinelli_remainder_2kappa));
  // Third-order remainder is much smaller than the second-order one on adjacent pairs.
  const auto r2 = nu.weak().remainder();
  const auto r3 = nu.remainder();
  double s2 = 0.0, s3 = 0.0;
  for (std::size_t i = 0; i + 1 < x.grid().nodes(); ++i) {
    s2 = std::max(s2, std::abs(r2(i, i + 1)[0]));
    s3 = std::max(s3, std::abs(r3(i, i + 1)[0]));
  }
  EXPECT_LT(s3, 0.2 * s2);
}

TEST(ComposeStrong, IdentityFieldPassesThrough) {
  const UniformAxis ax(-2.0, 2.0, 81);
  const auto n = static_cast<Eigen::Index>(ax.nodes());
  StrongField1D mu{ax, Eigen::VectorXd(n), Eigen::MatrixXd(n, 1), Eigen::MatrixXd(n, 1), {}, {}, {}};
  StrongField1D nu{ax, Eigen::VectorXd(n), Eigen::MatrixXd::Zero(n, 1), Eigen::MatrixXd::Zero(n, 1), {}, {}, {}};
  for (Eigen::Index j = 0; j < n; ++j) {
    const double x = ax.x(static_cast<std::size_t>(j));
    mu.value[j] = std::sin(x);
    mu.first(j, 0) = std::cos(x);
    mu.second(j, 0) = x * x;
    nu.value[j] = x;
  }
  const auto c = compose_strong(mu, nu);
  for (Eigen::Index j = 0; j < n; ++j) {
    EXPECT_NEAR(c.first(j, 0), mu.first(j, 0), 1e-12);
    EXPECT_NEAR(c.second(j, 0), mu.second(j, 0), 1e-12);
  }
}

TEST(ComposeStrong, OutsideDomainRejected) {
  const UniformAxis ax(-1.0, 1.0, 11);
  StrongField1D mu{ax, Eigen::VectorXd::Zero(11), Eigen::MatrixXd::Zero(11, 1), Eigen::MatrixXd::Zero(11, 1), {}, {}, {}};
  StrongField1D nu = mu;
  nu.value.setConstant(5.0);
  EXPECT_THROW(compose_strong(mu, nu), ValidationError);
}

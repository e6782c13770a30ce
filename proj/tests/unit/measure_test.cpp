#include "roughctl/coefficients.hpp"
#include "roughctl/measure.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace roughctl;

TEST(Wasserstein, DiracPair) {
  EXPECT_DOUBLE_EQ(wasserstein2(DiscreteMeasure::dirac(0.3), DiscreteMeasure::dirac(-0.5)), 0.8);
}

TEST(Wasserstein, SameMeasureIsZero) {
  const Measure m = DiscreteMeasure{{0.1, 0.4, 0.9}, {0.2, 0.5, 0.3}};
  EXPECT_EQ(wasserstein2(m, m), 0.0);
  const Measure g = GaussianMeasure{0.2, 0.7, std::nullopt};
  EXPECT_NEAR(wasserstein2(g, g), 0.0, 1e-12);
}

TEST(Wasserstein, TwoPointExample) {
  // Brute force over couplings of {0,1} and {0,2}: the monotone one moves mass 1/2 by 1.
  const double w = wasserstein2(DiscreteMeasure::uniform({0.0, 1.0}), DiscreteMeasure::uniform({0.0, 2.0}));
  EXPECT_NEAR(w, std::sqrt(0.5), 1e-15);
  double best = 1e300;
  for (int k = 0; k <= 1000; ++k) {
    const double p = 0.5 * k / 1000.0;  // mass moved 0 -> 0
    const double c = p * 0.0 + (0.5 - p) * 4.0 + (0.5 - p) * 1.0 + p * 1.0;
    best = std::min(best, c);
  }
  EXPECT_NEAR(w, std::sqrt(best), 1e-12);
}

TEST(Wasserstein, GaussianClosedForm) {
  const Measure a = GaussianMeasure{0.3, 0.8, std::nullopt};
  const Measure b = GaussianMeasure{-0.4, 1.7, std::nullopt};
  EXPECT_NEAR(wasserstein2(a, b), std::hypot(0.7, 0.9), 1e-8);
}

TEST(Wasserstein, MetricAxiomsOnSampledTriples) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> k(1, 5);
  auto draw = [&] {
    DiscreteMeasure m;
    const int n = k(rng);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      m.atoms.push_back(u(rng));
      m.weights.push_back(0.1 + std::abs(u(rng)));
      total += m.weights.back();
    }
    for (auto& w : m.weights) w /= total;
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < m.weights.size(); ++i) s += m.weights[i];
    m.weights.back() = 1.0 - s;
    return Measure(m);
  };
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Measure a = draw(), b = draw(), c = draw();
    const double ab = wasserstein2(a, b), ba = wasserstein2(b, a);
    EXPECT_EQ(ab, ba);
    worst = std::max(worst, ab - wasserstein2(a, c) - wasserstein2(c, b));
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Dhat, Examples) {
  const Grid g(1.0, 4);
  const MeasurePath a = MeasurePath::constant(g, DiscreteMeasure::dirac(0.0));
  EXPECT_EQ(dhat(a, a), 0.0);
  MeasurePath b = a;
  b.measures[2] = DiscreteMeasure::dirac(1.0);
  EXPECT_EQ(dhat(a, b), 1.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Measure> ma, mb;
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double x = u(rng), y = u(rng);
    ma.push_back(DiscreteMeasure::dirac(x));
    mb.push_back(DiscreteMeasure::dirac(y));
    expected = std::max(expected, std::abs(x - y));
  }
  EXPECT_DOUBLE_EQ(dhat(MeasurePath(g, ma), MeasurePath(g, mb)), expected);
  EXPECT_THROW(dhat(a, MeasurePath::constant(Grid(1.0, 8), DiscreteMeasure::dirac(0.0))), ValidationError);
}

TEST(MeasurePath, HolderViolationAtSwitches) {
  const Grid g(1.0, 4);
  MeasurePath p(g, std::vector<Measure>(5, DiscreteMeasure::dirac(0.0)), std::make_pair(0.5, 1.0));
  EXPECT_EQ(p.holder_violation(), 0.0);
  p.measures[3] = DiscreteMeasure::dirac(1.0);
  EXPECT_GT(p.holder_violation(), 1.0);
}

TEST(Entropy, UniformIsZero) { EXPECT_NEAR(entropy(DensityMeasure::uniform(0.0, 1.0)), 0.0, 1e-14); }

TEST(Entropy, StandardGaussian) {
  const Measure g = GaussianMeasure{0.0, 1.0, std::nullopt};
  EXPECT_NEAR(entropy(g), 1.41894, 1e-5);
  EXPECT_NEAR(entropy(g), entropy_by_quadrature(g), 1e-8);
}

TEST(Entropy, TruncatedGaussianMatchesQuadrature) {
  for (double s : {0.3, 0.8, 2.0}) {
    const Measure g = GaussianMeasure{0.2, s, std::make_pair(-1.0, 1.0)};
    EXPECT_NEAR(entropy(g), entropy_by_quadrature(g), 1e-8) << s;
  }
}

TEST(Entropy, DiscreteIsRejected) {
  EXPECT_THROW(entropy(DiscreteMeasure::dirac(0.0)), ValidationError);
}

TEST(Entropy, BoundedByWassersteinOnGaussians) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> sd(0.5, 2.0), mu(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Measure a = GaussianMeasure{mu(rng), sd(rng), std::nullopt};
    const Measure b = GaussianMeasure{mu(rng), sd(rng), std::nullopt};
    const double w = wasserstein2(a, b);
    if (w < 1e-6) continue;
    worst = std::max(worst, std::abs(entropy(a) - entropy(b)) / w);
  }
  // |log s1 - log s2| <= |s1 - s2| / min(s) <= 2 W2 on this family.
  EXPECT_LE(worst, 2.0);
}

TEST(AveragedDrift, Examples) {
  const auto lin = CoefficientField::scalar_families({0, 0, 1, 0}, {ScalarFamily::constant(0.0)});
  const auto quad = CoefficientField::scalar_families({0, 0, 0, 1}, {ScalarFamily::constant(0.0)});
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(1, 0.3);
  EXPECT_EQ(averaged_drift(lin, DiscreteMeasure::dirac(0.7), 0.0, x)[0], 0.7);
  EXPECT_EQ(averaged_drift(lin, DiscreteMeasure::uniform({-1.0, 1.0}), 0.0, x)[0], 0.0);
  EXPECT_EQ(averaged_drift(quad, DiscreteMeasure::uniform({-1.0, 1.0}), 0.0, x)[0], 1.0);
  const Measure bad = DiscreteMeasure{{0.0, 1.0}, {0.5, 0.6}};
  EXPECT_THROW(averaged_drift(lin, bad, 0.0, x), ValidationError);
}

TEST(AveragedDrift, DensityQuadrature) {
  // General callback (no polynomial shortcut) against a uniform density: int_0^1 sin(x + a) da.
  auto cf = CoefficientField::general(
      1, 1, [](double, const Eigen::VectorXd& x, double a) { return Eigen::VectorXd::Constant(1, std::sin(x[0] + a)); },
      [](double, const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(1, 1); },
      [](double, const Eigen::VectorXd&, std::size_t) { return Eigen::MatrixXd::Zero(1, 1); });
  const double x = 0.4;
  const double exact = std::cos(x) - std::cos(x + 1.0);
  EXPECT_NEAR(averaged_drift(cf, DensityMeasure::uniform(0.0, 1.0), 0.0, Eigen::VectorXd::Constant(1, x))[0], exact, 1e-13);
}

TEST(ControlSet, DiracGrid) {
  const auto k = ControlSet::dirac_grid(-1.0, 1.0, 5);
  EXPECT_EQ(k.size(), 5u);
  EXPECT_EQ(std::get<DiscreteMeasure>(k[1]).atoms[0], -0.5);
  EXPECT_THROW(ControlSet({}), ValidationError);
}

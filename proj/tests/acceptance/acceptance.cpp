// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// A criterion also fails when it overruns its runtime budget.

#include "roughctl/roughctl.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>

using namespace roughctl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what, double value, double bound) {
    pass = pass && ok;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s%s=%.3g (bound %.3g)%s", detail.empty() ? "" : "; ", what.c_str(), value, bound, ok ? "" : " FAILED");
    detail += buf;
  }
};

std::string scenario_file(const std::string& name) { return std::string(ROUGHCTL_SCENARIO_DIR) + "/" + name + ".json"; }

std::string run_dir(const std::string& name) {
  const auto p = fs::path("acceptance_runs") / name;
  fs::remove_all(p);
  return p.string();
}

using LiftPtr = std::shared_ptr<const RoughLift>;

Eigen::Vector2d curve(double t) { return {std::cos(2 * t) - 1.0, std::sin(3 * t)}; }

double max_delta_delta(const GridPath& p) {
  const auto h = delta2(delta1(p));
  double worst = 0.0;
  const std::size_t n = h.grid().nodes();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t u = s; u < n; ++u)
      for (std::size_t t = u; t < n; ++t) worst = std::max(worst, h(s, u, t).cwiseAbs().maxCoeff());
  return worst;
}

Outcome structural_identities() {
  Outcome o;
  const std::size_t n = 1 << 12;
  std::vector<std::pair<std::string, RoughLift>> lifts;
  lifts.emplace_back("smooth", lift_smooth(sample_path(Grid(1.0, 4 * n), 2, [](double t) { return Eigen::VectorXd(curve(t)); }), Grid(1.0, n)));
  for (double h : {0.4, 0.5, 0.7}) lifts.emplace_back("fbm H=" + csv::format_double(h), lift_fbm(h, 2, n, 100));
  double chen = 0.0, sym = 0.0, dd = 0.0;
  for (const auto& [name, lift] : lifts) {
    chen = std::max(chen, chen_defect(lift));
    sym = std::max(sym, symmetry_defect(lift));
    dd = std::max(dd, max_delta_delta(lift.path().subsample(Grid(1.0, 64))));
  }
  o.check(dd <= 1e-12, "max |delta delta|", dd, 1e-12);
  o.check(chen <= 1e-10, "chen", chen, 1e-10);
  o.check(sym <= 1e-10, "symmetry", sym, 1e-10);
  return o;
}

ControlledPath sin_of_driver(const LiftPtr& lift) {
  const SmoothMap s{1, [](double, const Eigen::VectorXd& z) { return Eigen::VectorXd::Constant(1, std::sin(z[0])); },
                    [](double, const Eigen::VectorXd& z) { return Eigen::MatrixXd::Constant(1, 1, std::cos(z[0])); }};
  return compose_smooth(s, identity_path(lift));
}

double sin_integral(const GridPath& fine, std::size_t n) {
  const auto lift = std::make_shared<const RoughLift>(lift_smooth(fine, Grid(1.0, n), lift_exponent_for_hurst(0.45)));
  return rough_integral_with_drift(sin_of_driver(lift), std::nullopt, lift).values()(static_cast<Eigen::Index>(n), 0);
}

// int z2 dz1 - z1 dz2 along the smooth curve with the compensated sum.
double curve_integral(std::size_t n) {
  const auto lift = std::make_shared<const RoughLift>(lift_smooth(sample_path(Grid(1.0, n), 2, [](double t) { return Eigen::VectorXd(curve(t)); }), Grid(1.0, n)));
  Eigen::MatrixXd mu(static_cast<Eigen::Index>(n + 1), 2);
  Eigen::Matrix2d rot;
  rot << 0, 1, -1, 0;
  for (std::size_t i = 0; i <= n; ++i) {
    const Eigen::VectorXd z = lift->path().at(i);
    mu.row(static_cast<Eigen::Index>(i)) << z[1], -z[0];
  }
  const ControlledPath p(lift, mu, std::vector<Eigen::MatrixXd>(n + 1, rot));
  return rough_integral_with_drift(p, std::nullopt, lift).values()(static_cast<Eigen::Index>(n), 0);
}

double curve_integral_exact() {
  auto f = [](double t) {
    const Eigen::Vector2d z = curve(t);
    return z[1] * (-2 * std::sin(2 * t)) - z[0] * 3 * std::cos(3 * t);
  };
  const std::size_t m = 1 << 16;
  const double h = 1.0 / static_cast<double>(m);
  double acc = f(0.0) + f(1.0);
  for (std::size_t i = 1; i < m; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(h * static_cast<double>(i));
  return acc * h / 3.0;
}

Outcome rough_integrals() {
  Outcome o;
  const auto lift = std::make_shared<const RoughLift>(lift_fbm(0.4, 1, 1 << 12, 101));
  const double zt = lift->path().values()(1 << 12, 0);
  const double self = rough_integral_with_drift(identity_path(lift), std::nullopt, lift).values()(1 << 12, 0);
  const double rel = std::abs(self - 0.5 * zt * zt) / (1.0 + zt * zt);
  o.check(rel <= 1e-13, "|int z dz - z_T^2/2| / (1 + z_T^2)", rel, 1e-13);

  const auto fine = sample_fbm(0.45, 1, 1 << 18, 102);
  const double sin_err = std::abs(sin_integral(fine, 1 << 14) - sin_integral(fine, 1 << 18));
  o.check(sin_err <= 1e-3, "sin integrand N=2^14 vs 2^18", sin_err, 1e-3);

  const double exact = curve_integral_exact();
  const double e0 = std::abs(curve_integral(64) - exact), e1 = std::abs(curve_integral(1024) - exact);
  const double order = std::log2(e0 / e1) / 4.0;
  o.check(order >= 1.5, "smooth-driver order", order, 1.5);
  return o;
}

Outcome rde_correctness() {
  Outcome o;
  {
    const auto fine = sample_path(Grid(1.0, 10000), 1, [](double t) { return Eigen::VectorXd::Constant(1, std::sin(t)); });
    const auto lift = std::make_shared<const RoughLift>(lift_smooth(fine, Grid(1.0, 10000)));
    const auto cf = CoefficientField::scalar_families({0.0, -1.0, 1.0, 0.0}, {ScalarFamily::constant(0.0)});
    const auto sol = solve_rde(cf, Eigen::VectorXd::Constant(1, 2.0), lift, MeasurePath::constant(lift->grid(), DiscreteMeasure::dirac(0.5)));
    double worst = 0.0;
    for (std::size_t i = 0; i <= 10000; ++i)
      worst = std::max(worst, std::abs(sol.path.value(i)[0] - (0.5 + 1.5 * std::exp(-lift->grid().time(i)))));
    o.check(worst <= 1e-6, "ODE oracle", worst, 1e-6);
  }
  {
    const auto lift = std::make_shared<const RoughLift>(lift_fbm(0.5, 1, 1 << 14, 103));
    const auto cf = CoefficientField::scalar_families({}, {ScalarFamily::affine(0.0, 1.0)});
    const auto sol = solve_rde(cf, Eigen::VectorXd::Constant(1, 1.0), lift);
    const double exact = std::exp(lift->path().values()(1 << 14, 0));
    const double rel = std::abs(sol.path.value(1 << 14)[0] - exact) / exact;
    o.check(rel <= 1e-2, "geometric x_T relative error", rel, 1e-2);
  }
  {
    const double h = 0.45, alpha = lift_exponent_for_hurst(h);
    const auto fine = sample_fbm(h, 1, 1 << 17, 104);
    const auto cf = CoefficientField::scalar_families({0.1, 0.0, 0.0, 0.0}, {ScalarFamily::trig(0.4, 0.3)});
    std::vector<double> lg, lh;
    Eigen::MatrixXd prev;
    for (std::size_t n = 1 << 6; n <= (1u << 15); n *= 2) {
      const auto lift = std::make_shared<const RoughLift>(lift_smooth(fine, Grid(1.0, n), alpha));
      const Eigen::MatrixXd x = solve_rde(cf, Eigen::VectorXd::Constant(1, 0.2), lift).path.values();
      if (prev.size()) {
        double gap = 0.0;
        for (std::size_t i = 0; i <= n / 2; ++i) gap = std::max(gap, std::abs(prev(static_cast<Eigen::Index>(i), 0) - x(static_cast<Eigen::Index>(2 * i), 0)));
        lg.push_back(std::log(gap));
        lh.push_back(std::log(1.0 / static_cast<double>(n)));
      }
      prev = x;
    }
    const double k = static_cast<double>(lg.size());
    double mx = 0, my = 0, sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < lg.size(); ++i) mx += lh[i] / k, my += lg[i] / k;
    for (std::size_t i = 0; i < lg.size(); ++i) sxy += (lh[i] - mx) * (lg[i] - my), sxx += (lh[i] - mx) * (lh[i] - mx);
    const double bound = std::max(3 * alpha - 1, 0.3);
    o.check(sxy / sxx >= bound, "refinement order", sxy / sxx, bound);
  }
  return o;
}

Outcome flow_identities() {
  Outcome o;
  const std::size_t n = 1 << 12;
  const auto lift = std::make_shared<const RoughLift>(lift_fbm(0.45, 1, n, 105));
  auto ff = solve_flow(CoefficientField::scalar_families({}, {ScalarFamily::trig(0.2, 0.1)}), lift, UniformAxis(-8.0, 8.0, 1 << 9));
  invert_flow(ff);
  const double comp = composition_defect(ff), jac = jacobian_defect(ff);
  o.check(comp <= 1e-4, "sup|chi(phi) - eta|", comp, 1e-4);
  o.check(jac <= 1e-6, "sup|k a - 1|", jac, 1e-6);
  double coef = 0.0;
  for (std::size_t node : {n / 4, n / 2, 3 * n / 4, n}) {
    const auto d = flow_coefficient_defect(ff, node);
    coef = std::max({coef, d.first, d.second});
  }
  const auto tf = build_test_function([](double y) { return std::sin(y); }, [](double t, double y) { return t * y; }, ff);
  coef = std::max(coef, transport_coefficient_defect(ff, n / 2, tf.value.row(static_cast<Eigen::Index>(n / 2)).transpose()).first);
  o.check(coef <= 1e-4, "composite Gubinelli coefficient defect", coef, 1e-4);
  return o;
}

Outcome dp_exactness() {
  Outcome o;
  const auto line = [](std::size_t steps) {
    return lift_smooth(sample_path(Grid(1.0, steps), 1, [](double t) { return Eigen::VectorXd::Constant(1, t); }), Grid(1.0, steps));
  };
  const auto cf = CoefficientField::scalar_families({0.0, 0.0, 1.0, 0.0}, {ScalarFamily::constant(0.0)});
  const ControlSet k({DiscreteMeasure::dirac(-1.0), DiscreteMeasure::dirac(0.0), DiscreteMeasure::dirac(1.0)});
  const RoughLift three = line(3);
  const UniformAxis ax(-3.0, 3.0, 181);  // dx divides dt: every reachable state is a node
  double worst = 0.0;
  for (int inst = 0; inst < 3; ++inst) {
    RewardSpec s;
    s.rate.rx = 0.3 * inst;
    s.rate.ruu = -0.2;
    s.rate.r0 = 0.1 * inst;
    s.terminal.g1 = 0.5 - 0.2 * inst;
    s.terminal.g2 = -1.0;
    s.terminal.gabs = 0.1 * inst;
    const auto v = value_dp(s, k, cf, three, ax, Grid(1.0, 3));
    for (double y : {-0.4, 0.2, 1.0}) worst = std::max(worst, std::abs(v.at(0, y) - value_bruteforce(s, k, cf, three, y, 0, {0, 1, 2}).value));
  }
  o.check(worst <= 1e-9, "|value_dp - value_bruteforce|", worst, 1e-9);

  RewardSpec dz;
  dz.terminal.gabs = -1.0;
  const RoughLift fine = line(256);
  const UniformAxis big(-4.0, 4.0, 801);
  DpOptions opts;
  opts.region = std::make_pair(-2.0, 2.0);
  const ControlSet k5 = ControlSet::dirac_grid(-1.0, 1.0, 5);
  const auto v = value_dp(dz, k5, cf, fine, big, Grid(1.0, 64), opts);
  double dpp = 0.0;
  for (std::size_t s1 : {0u, 10u, 30u, 60u}) dpp = std::max(dpp, dpp_residual(v, dz, k5, cf, fine, s1, s1 + 4));
  o.check(dpp <= 4 * big.spacing(), "DPP residual, 4 steps", dpp, 4 * big.spacing());
  return o;
}

Outcome hjb_agreement() {
  Outcome o;
  for (const char* name : {"drive_to_zero", "constant_sigma_fbm05", "sine_sigma_fbm045"}) {
    const Scenario s = load_scenario(scenario_file(name), {"stages=[\"value\",\"hjb\"]"});
    RunOptions ro;
    ro.out_dir = run_dir(std::string("c6_") + name);
    const auto r = run_scenario(s, ro);
    const double rel = r.metrics.count("dp_hjb_sup_rel") ? r.metrics.at("dp_hjb_sup_rel") : std::numeric_limits<double>::infinity();
    o.check(rel <= 0.05, std::string(name) + " sup-rel", rel, 0.05);
  }
  return o;
}

Outcome smooth_approximation() {
  Outcome o;
  const Scenario s = load_scenario(scenario_file("smooth_approx_fbm045"));
  RunOptions ro;
  ro.out_dir = run_dir("c7");
  const auto r = run_scenario(s, ro);
  const auto t = csv::read(*ro.out_dir + "/study.csv");
  std::vector<StudyRow> rows;
  for (const auto& row : t.rows) rows.push_back({static_cast<std::size_t>(row[0]), row[1], 0.0});
  const bool monotone = nonincreasing_after_first_decrease(rows);
  o.check(monotone, "non-increasing after first decrease", monotone ? 1.0 : 0.0, 1.0);
  // Scheme tolerance is the DP space step.
  const double tol = 2.0 * s.space.axis().spacing();
  o.check(rows.back().sup_error <= tol, "terminal error", rows.back().sup_error, tol);
  o.check(rows.front().n == 16 && rows.back().n == 1024, "n from 2^4 to 2^10", static_cast<double>(rows.size()), 7.0);
  (void)r;
  return o;
}

Outcome measure_layer() {
  Outcome o;
  std::mt19937_64 rng(106);
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
  double sym = 0.0, tri = 0.0, self = 0.0, neg = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Measure a = draw(), b = draw(), c = draw();
    const double ab = wasserstein2(a, b);
    sym = std::max(sym, std::abs(ab - wasserstein2(b, a)));
    tri = std::max(tri, ab - wasserstein2(a, c) - wasserstein2(c, b));
    self = std::max(self, wasserstein2(a, a));
    neg = std::max(neg, -ab);
  }
  o.check(std::max({sym, tri, self, neg}) <= 1e-12, "W2 axiom defect", std::max({sym, tri, self, neg}), 1e-12);

  double ent = 0.0;
  for (double s : {0.3, 0.8, 1.0, 2.0}) {
    ent = std::max(ent, std::abs(entropy(GaussianMeasure{0.1, s, std::nullopt}) - entropy_by_quadrature(GaussianMeasure{0.1, s, std::nullopt})));
    const Measure tr = GaussianMeasure{0.2, s, std::make_pair(-1.0, 1.0)};
    ent = std::max(ent, std::abs(entropy(tr) - entropy_by_quadrature(tr)));
  }
  o.check(ent <= 1e-8, "Gaussian entropy vs quadrature", ent, 1e-8);

  std::uniform_real_distribution<double> sd(0.5, 2.0);
  double ratio = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Measure a = GaussianMeasure{u(rng), sd(rng), std::nullopt}, b = GaussianMeasure{u(rng), sd(rng), std::nullopt};
    const double w = wasserstein2(a, b);
    if (w > 1e-6) ratio = std::max(ratio, std::abs(entropy(a) - entropy(b)) / w);
  }
  // |log s1 - log s2| <= |s1 - s2| / min s <= 2 W2 for stddevs in [0.5, 2].
  o.check(ratio <= 2.0, "max |h(a) - h(b)| / W2", ratio, 2.0);
  return o;
}

Outcome determinism() {
  Outcome o;
  const std::vector<std::pair<std::string, std::vector<std::string>>> cases{
      {"sine_sigma_fbm045", {}},
      {"smooth_approx_fbm045", {"study.samples=1", "study.n=[16,256]"}}};
  std::size_t differing = 0, compared = 0;
  for (const auto& [name, overrides] : cases) {
    const Scenario s = load_scenario(scenario_file(name), overrides);
    std::vector<std::string> dirs;
    for (std::size_t w : {1u, 4u, 8u}) {
      RunOptions ro;
      ro.out_dir = run_dir("c9_" + name + "_w" + std::to_string(w));
      ro.workers = w;
      ro.require_all = false;
      run_scenario(s, ro);
      dirs.push_back(*ro.out_dir);
    }
    for (const auto& e : fs::directory_iterator(dirs[0])) {
      const auto f = e.path().filename().string();
      const std::string ref = read_file(dirs[0] + "/" + f);
      for (std::size_t i = 1; i < dirs.size(); ++i) {
        ++compared;
        if (read_file(dirs[i] + "/" + f) != ref) ++differing;
      }
    }
  }
  o.check(differing == 0 && compared > 0, "files differing across 1/4/8 workers", static_cast<double>(differing), 0.0);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::tuple<int, const char*, double, std::function<Outcome()>>> criteria{
      {1, "structural identities", 10, structural_identities},
      {2, "rough-integral consistency", 30, rough_integrals},
      {3, "RDE correctness", 60, rde_correctness},
      {4, "flow identities", 120, flow_identities},
      {5, "DP exactness", 60, dp_exactness},
      {6, "HJB agreement", 300, hjb_agreement},
      {7, "smooth approximation", 300, smooth_approximation},
      {8, "metric/entropy layer", 10, measure_layer},
      {9, "determinism", 0, determinism},
  };
  int failed = 0;
  for (const auto& [id, name, budget, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = budget <= 0 || secs <= budget;
    const bool pass = out.pass && in_time;
    failed += pass ? 0 : 1;
    std::printf("criterion %d %s: %s [%s] %.1f s%s\n", id, pass ? "PASS" : "FAIL", name, out.detail.c_str(), secs,
                in_time ? "" : " (over budget)");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

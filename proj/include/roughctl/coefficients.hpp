#pragma once

#include "roughctl/measure.hpp"

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace roughctl {

/// Closed-form scalar function of x with derivatives up to order 3.
struct ScalarFamily {
  enum class Kind { constant, affine, trig, logistic };
  Kind kind = Kind::constant;
  double c0 = 0.0;  ///< offset
  double c1 = 0.0;  ///< slope / amplitude
  double w = 1.0;   ///< frequency (trig) or steepness (logistic)

  static ScalarFamily constant(double c) { return {Kind::constant, c, 0.0, 1.0}; }
  static ScalarFamily affine(double c, double lambda) { return {Kind::affine, c, lambda, 1.0}; }
  /// c0 + c1 sin(w x)
  static ScalarFamily trig(double c0, double c1, double w = 1.0) { return {Kind::trig, c0, c1, w}; }
  /// c0 + c1 / (1 + exp(-w x))
  static ScalarFamily logistic(double c0, double c1, double w = 1.0) { return {Kind::logistic, c0, c1, w}; }

  static Kind parse_kind(const std::string& s) {
    if (s == "constant") return Kind::constant;
    if (s == "affine") return Kind::affine;
    if (s == "trig") return Kind::trig;
    if (s == "logistic") return Kind::logistic;
    throw ValidationError("unknown coefficient family '" + s + "'");
  }

  /// d^order/dx^order at x, order in 0..3.
  double eval(double x, int order = 0) const {
    switch (kind) {
      case Kind::constant:
        return order == 0 ? c0 : 0.0;
      case Kind::affine:
        return order == 0 ? c0 + c1 * x : order == 1 ? c1 : 0.0;
      case Kind::trig: {
        const double s = std::sin(w * x), c = std::cos(w * x);
        switch (order) {
          case 0: return c0 + c1 * s;
          case 1: return c1 * w * c;
          case 2: return -c1 * w * w * s;
          default: return -c1 * w * w * w * c;
        }
      }
      case Kind::logistic: {
        const double l = 1.0 / (1.0 + std::exp(-w * x));
        const double q = l * (1.0 - l);
        switch (order) {
          case 0: return c0 + c1 * l;
          case 1: return c1 * w * q;
          case 2: return c1 * w * w * q * (1.0 - 2.0 * l);
          default: return c1 * w * w * w * q * (1.0 - 6.0 * l + 6.0 * l * l);
        }
      }
    }
    return 0.0;
  }
};

/// Scalar drift b(x, a) = c0 + cx x + ca a + ca2 a^2.
struct DriftFamily {
  double c0 = 0.0, cx = 0.0, ca = 0.0, ca2 = 0.0;
  double eval(double x, double a) const { return c0 + cx * x + ca * a + ca2 * a * a; }
  /// Average against a measure with first and second moments m1, m2.
  double averaged(double x, double m1, double m2) const { return c0 + cx * x + ca * m1 + ca2 * m2; }
};

/// Drift b(t, x, a) and diffusion sigma(t, x) (m x d) with spatial derivatives.
///
/// The general callbacks serve any state dimension. Scalar states (m = 1) also carry
/// drift1/sigma1 so inner loops avoid vector allocation; sigma1(t, x, k, order) returns
/// the order-th x-derivative of column k.
struct CoefficientField {
  std::size_t m = 1;
  std::size_t d = 1;
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, double)> drift;
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)> sigma;
  /// Jacobian (m x m) of column k of sigma.
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&, std::size_t)> sigma_jacobian;
  /// Time derivative of sigma; zero when absent.
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)> sigma_time;

  std::function<double(double, double, double)> drift1;
  std::function<double(double, double, std::size_t, int)> sigma1;
  std::optional<DriftFamily> drift_family;
  std::vector<ScalarFamily> sigma_families;

  bool scalar() const { return m == 1 && drift1 && sigma1; }

  /// Scalar state built from closed-form families, one sigma family per driver column.
  static CoefficientField scalar_families(DriftFamily b, std::vector<ScalarFamily> sig) {
    if (sig.empty()) throw ValidationError("need one diffusion family per driver component");
    CoefficientField cf;
    cf.m = 1;
    cf.d = sig.size();
    cf.drift_family = b;
    cf.sigma_families = sig;
    cf.drift1 = [b](double, double x, double a) { return b.eval(x, a); };
    cf.sigma1 = [sig](double, double x, std::size_t k, int order) { return sig[k].eval(x, order); };
    cf.drift = [b](double, const Eigen::VectorXd& x, double a) { return Eigen::VectorXd::Constant(1, b.eval(x[0], a)); };
    cf.sigma = [sig](double, const Eigen::VectorXd& x) {
      Eigen::MatrixXd s(1, static_cast<Eigen::Index>(sig.size()));
      for (std::size_t k = 0; k < sig.size(); ++k) s(0, static_cast<Eigen::Index>(k)) = sig[k].eval(x[0]);
      return s;
    };
    cf.sigma_jacobian = [sig](double, const Eigen::VectorXd& x, std::size_t k) {
      return Eigen::MatrixXd::Constant(1, 1, sig[k].eval(x[0], 1));
    };
    return cf;
  }

  /// Arbitrary state dimension from callbacks. For m = 1 the scalar views are derived,
  /// with second and third derivatives of sigma by centered differences of the Jacobian.
  static CoefficientField general(std::size_t m, std::size_t d,
                                  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, double)> drift,
                                  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)> sigma,
                                  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&, std::size_t)> jac) {
    if (m < 1 || d < 1) throw ValidationError("state and driver dimensions must be positive");
    if (!drift || !sigma || !jac) throw ValidationError("coefficient field needs drift, sigma and its Jacobian");
    CoefficientField cf;
    cf.m = m;
    cf.d = d;
    cf.drift = drift;
    cf.sigma = sigma;
    cf.sigma_jacobian = jac;
    if (m == 1) {
      cf.drift1 = [drift](double t, double x, double a) { return drift(t, Eigen::VectorXd::Constant(1, x), a)[0]; };
      cf.sigma1 = [sigma, jac](double t, double x, std::size_t k, int order) {
        const auto kk = static_cast<Eigen::Index>(k);
        auto j = [&](double y) { return jac(t, Eigen::VectorXd::Constant(1, y), k)(0, 0); };
        const double h = 1e-4;
        switch (order) {
          case 0: return sigma(t, Eigen::VectorXd::Constant(1, x))(0, kk);
          case 1: return j(x);
          case 2: return (j(x + h) - j(x - h)) / (2 * h);
          default: return (j(x + h) - 2 * j(x) + j(x - h)) / (h * h);
        }
      };
    }
    return cf;
  }
};

/// Sup of coefficient values and derivatives sampled on [-box, box]^m (m <= 2 sampled on a lattice).
struct BoundsReport {
  double drift = 0.0;
  double drift_lipschitz = 0.0;
  double sigma = 0.0;
  double sigma_d1 = 0.0;
  double sigma_d2 = 0.0;
  double sigma_d3 = 0.0;
};

/// Checks finiteness of b and sigma (with derivatives, scalar case) on the working box.
inline BoundsReport check_bounds(const CoefficientField& cf, double box, const std::vector<double>& actions,
                                 std::size_t samples = 401) {
  if (!(box > 0.0)) throw ValidationError("working box must be positive");
  BoundsReport r;
  const double h = 2.0 * box / static_cast<double>(samples - 1);
  auto fail = [](const char* what) { throw ValidationError(std::string("coefficient ") + what + " is not finite on the working box"); };
  if (cf.scalar()) {
    for (std::size_t i = 0; i < samples; ++i) {
      const double x = -box + h * static_cast<double>(i);
      for (double a : actions) {
        const double b = cf.drift1(0.0, x, a);
        const double bp = cf.drift1(0.0, std::min(x + h, box), a);
        if (!std::isfinite(b)) fail("drift");
        r.drift = std::max(r.drift, std::abs(b));
        if (x + h <= box) r.drift_lipschitz = std::max(r.drift_lipschitz, std::abs(bp - b) / h);
      }
      for (std::size_t k = 0; k < cf.d; ++k) {
        const double v[4] = {cf.sigma1(0.0, x, k, 0), cf.sigma1(0.0, x, k, 1), cf.sigma1(0.0, x, k, 2),
                             cf.sigma1(0.0, x, k, 3)};
        for (double q : v)
          if (!std::isfinite(q)) fail("sigma");
        r.sigma = std::max(r.sigma, std::abs(v[0]));
        r.sigma_d1 = std::max(r.sigma_d1, std::abs(v[1]));
        r.sigma_d2 = std::max(r.sigma_d2, std::abs(v[2]));
        r.sigma_d3 = std::max(r.sigma_d3, std::abs(v[3]));
      }
    }
    return r;
  }
  const std::size_t per_axis = cf.m <= 2 ? 41 : 5;
  std::vector<std::size_t> idx(cf.m, 0);
  const double hh = 2.0 * box / static_cast<double>(per_axis - 1);
  while (true) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(cf.m));
    for (std::size_t j = 0; j < cf.m; ++j) x[static_cast<Eigen::Index>(j)] = -box + hh * static_cast<double>(idx[j]);
    for (double a : actions) {
      const Eigen::VectorXd b = cf.drift(0.0, x, a);
      if (!b.allFinite()) fail("drift");
      r.drift = std::max(r.drift, b.cwiseAbs().maxCoeff());
    }
    const Eigen::MatrixXd s = cf.sigma(0.0, x);
    if (!s.allFinite()) fail("sigma");
    r.sigma = std::max(r.sigma, s.cwiseAbs().maxCoeff());
    for (std::size_t k = 0; k < cf.d; ++k) {
      const Eigen::MatrixXd j = cf.sigma_jacobian(0.0, x, k);
      if (!j.allFinite()) fail("sigma Jacobian");
      r.sigma_d1 = std::max(r.sigma_d1, j.cwiseAbs().maxCoeff());
    }
    std::size_t c = 0;
    while (c < cf.m && ++idx[c] == per_axis) idx[c++] = 0;
    if (c == cf.m) break;
  }
  return r;
}

/// x -> int b(t, x, a) gamma(da) for one fixed measure.
/// Polynomial drift families use the cached first and second moments; other drifts
/// integrate over the measure's quadrature rule.
class AveragedDrift {
 public:
  AveragedDrift(const CoefficientField& cf, const Measure& gamma, unsigned order = 32)
      : cf_(&cf), rule_(quadrature_rule(gamma, order)) {
    double mass = 0.0;
    for (std::size_t i = 0; i < rule_.nodes.size(); ++i) {
      m1_ += rule_.weights[i] * rule_.nodes[i];
      m2_ += rule_.weights[i] * rule_.nodes[i] * rule_.nodes[i];
      mass += rule_.weights[i];
    }
    if (std::holds_alternative<DiscreteMeasure>(gamma) && std::abs(mass - 1.0) > 1e-12)
      throw ValidationError("control weights must sum to 1");
  }

  double scalar(double t, double x) const {
    if (cf_->drift_family) return cf_->drift_family->averaged(x, m1_, m2_);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule_.nodes.size(); ++i) acc += rule_.weights[i] * cf_->drift1(t, x, rule_.nodes[i]);
    return acc;
  }

  Eigen::VectorXd operator()(double t, const Eigen::VectorXd& x) const {
    if (cf_->scalar()) return Eigen::VectorXd::Constant(1, scalar(t, x[0]));
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cf_->m));
    for (std::size_t i = 0; i < rule_.nodes.size(); ++i) acc += rule_.weights[i] * cf_->drift(t, x, rule_.nodes[i]);
    return acc;
  }

  double first_moment() const { return m1_; }
  double second_moment() const { return m2_; }

 private:
  const CoefficientField* cf_;
  QuadratureRule rule_;
  double m1_ = 0.0, m2_ = 0.0;
};

/// b_hat(t, x) = int b(t, x, a) gamma_t(da).
inline Eigen::VectorXd averaged_drift(const CoefficientField& cf, const Measure& gamma, double t, const Eigen::VectorXd& x,
                                      unsigned order = 32) {
  return AveragedDrift(cf, gamma, order)(t, x);
}

}  // namespace roughctl

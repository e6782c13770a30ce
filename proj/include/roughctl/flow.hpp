#pragma once

#include "roughctl/coefficients.hpp"
#include "roughctl/controlled.hpp"
#include "roughctl/interp.hpp"
#include "roughctl/lift.hpp"
#include "roughctl/parallel.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace roughctl {

/// log_ode: each step solves y' = sum_k sigma^k dzeta^k + Levy-area bracket over unit time by RK4,
///          with k and a carried along as the variational equation and its inverse (k a is conserved).
/// taylor2: the explicit second-order expansion used by solve_rde.
enum class FlowScheme { log_ode, taylor2 };

struct FlowOptions {
  FlowScheme scheme = FlowScheme::log_ode;
  std::size_t substeps = 1;  ///< RK4 substeps per driver step (log_ode)
  double box = 10.0;         ///< flows leaving [-box, box] are an error
  std::size_t workers = 0;
};

/// phi_t(eta), its Jacobian k and inverse Jacobian a at one point.
struct FlowPoint {
  double phi = 0.0, k = 1.0, a = 1.0;
};

namespace detail {

/// Sum over k < l of L^{kl} (sigma^l' sigma^k - sigma^k' sigma^l) and its x-derivative,
/// with L the antisymmetric part of the area.
inline std::pair<double, double> bracket_term(const CoefficientField& cf, double t, const double* area, double y) {
  const std::size_t d = cf.d;
  double v = 0.0, dv = 0.0;
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = k + 1; l < d; ++l) {
      const double lev = 0.5 * (area[k * d + l] - area[l * d + k]);
      if (lev == 0.0) continue;
      const double sk = cf.sigma1(t, y, k, 0), sl = cf.sigma1(t, y, l, 0);
      const double sk1 = cf.sigma1(t, y, k, 1), sl1 = cf.sigma1(t, y, l, 1);
      const double sk2 = cf.sigma1(t, y, k, 2), sl2 = cf.sigma1(t, y, l, 2);
      v += lev * (sl1 * sk - sk1 * sl);
      dv += lev * (sl2 * sk - sk2 * sl);
    }
  return {v, dv};
}

inline FlowPoint flow_step(const CoefficientField& cf, double t, const double* dz, const double* area, FlowPoint p,
                           const FlowOptions& opts) {
  const std::size_t d = cf.d;
  if (opts.scheme == FlowScheme::taylor2) {
    double dphi = 0.0, ck = 0.0, ca = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double sk = cf.sigma1(t, p.phi, k, 0), sk1 = cf.sigma1(t, p.phi, k, 1), sk2 = cf.sigma1(t, p.phi, k, 2);
      dphi += sk * dz[k];
      ck += sk1 * dz[k];
      ca -= sk1 * dz[k];
      for (std::size_t l = 0; l < d; ++l) {
        const double sl = cf.sigma1(t, p.phi, l, 0), sl1 = cf.sigma1(t, p.phi, l, 1);
        const double alk = area[l * d + k];
        dphi += sk1 * sl * alk;
        ck += (sk2 * sl + sk1 * sl1) * alk;
        ca += (sl1 * sk1 - sk2 * sl) * alk;
      }
    }
    return {p.phi + dphi, p.k * (1.0 + ck), p.a * (1.0 + ca)};
  }
  // f(y) and f'(y) of the one-step vector field.
  auto field = [&](double y) {
    double f = 0.0, df = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      f += cf.sigma1(t, y, k, 0) * dz[k];
      df += cf.sigma1(t, y, k, 1) * dz[k];
    }
    if (d > 1) {
      const auto [b, db] = bracket_term(cf, t, area, y);
      f += b;
      df += db;
    }
    return std::make_pair(f, df);
  };
  const double h = 1.0 / static_cast<double>(opts.substeps);
  for (std::size_t s = 0; s < opts.substeps; ++s) {
    const auto [f1, g1] = field(p.phi);
    const auto [f2, g2] = field(p.phi + 0.5 * h * f1);
    const auto [f3, g3] = field(p.phi + 0.5 * h * f2);
    const auto [f4, g4] = field(p.phi + h * f3);
    // k' = f'(y) k and a' = -a f'(y) are linear, so their RK4 stages share the same slopes.
    const double k1 = g1 * p.k, k2 = g2 * (p.k + 0.5 * h * k1), k3 = g3 * (p.k + 0.5 * h * k2), k4 = g4 * (p.k + h * k3);
    const double a1 = -g1 * p.a, a2 = -g2 * (p.a + 0.5 * h * a1), a3 = -g3 * (p.a + 0.5 * h * a2), a4 = -g4 * (p.a + h * a3);
    p.phi += h / 6.0 * (f1 + 2.0 * f2 + 2.0 * f3 + f4);
    p.k += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    p.a += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
  }
  return p;
}

inline void require_scalar_flow(const CoefficientField& cf, const RoughLift& lift) {
  if (!cf.scalar()) throw ValidationError("flows are implemented for scalar states with scalar coefficient views");
  if (lift.dim() != cf.d) throw ValidationError("driver dimension does not match the diffusion");
}

}  // namespace detail

/// phi_{s,t}(eta) with s = node `start` and t = node `stop` of the lift grid.
inline FlowPoint flow_point(const CoefficientField& cf, const RoughLift& lift, double eta, std::size_t start, std::size_t stop,
                            const FlowOptions& opts = {}) {
  detail::require_scalar_flow(cf, lift);
  if (start > stop || stop > lift.grid().steps()) throw ValidationError("flow interval outside the grid");
  const std::size_t d = cf.d;
  const auto& z = lift.path().values();
  const auto& ar = lift.adjacent_areas();
  std::vector<double> dz(d), area(d * d);
  FlowPoint p{eta, 1.0, 1.0};
  for (std::size_t i = start; i < stop; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < d; ++k) dz[k] = z(ii + 1, static_cast<Eigen::Index>(k)) - z(ii, static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < d * d; ++c) area[c] = ar(ii, static_cast<Eigen::Index>(c));
    p = detail::flow_step(cf, lift.grid().time(i), dz.data(), area.data(), p, opts);
  }
  return p;
}

namespace detail {

/// y with hermite(axis, p, slope, y) = x for increasing node values p; x must lie in [p_0, p_{n-1}].
/// Bracket in the node values, then Newton safeguarded by bisection.
template <class Vec>
double invert_hermite(const UniformAxis& axis, const Vec& p, const Vec& slope, double x) {
  const std::size_t n = axis.nodes();
  const double h = axis.spacing();
  std::size_t lo = 0, hi = n - 1;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    (p[static_cast<Eigen::Index>(mid)] <= x ? lo : hi) = mid;
  }
  double a = axis.x(lo), b = a + h;
  double y = a + h * (x - p[static_cast<Eigen::Index>(lo)]) / (p[static_cast<Eigen::Index>(lo + 1)] - p[static_cast<Eigen::Index>(lo)]);
  for (int it = 0; it < 50; ++it) {
    const double r = interp::hermite(axis, p, slope, y) - x;
    if (r > 0) b = y; else a = y;
    double next = y - r / interp::hermite_derivative(axis, p, slope, y);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - y) <= 1e-15 * (1.0 + std::abs(y))) return next;
    y = next;
  }
  return y;
}

}  // namespace detail

/// phi, k, a (and chi after invert_flow) on the lift grid x an eta axis. Rows are time nodes.
/// chi_t lives on the same axis read as x-values; it is NaN where x is outside phi_t(axis).
struct FlowField {
  Grid time;
  UniformAxis axis;
  CoefficientField cf;
  std::shared_ptr<const RoughLift> lift;
  Eigen::MatrixXd phi, k, a, chi;

  std::size_t nodes() const { return axis.nodes(); }
  auto phi_row(std::size_t i) const { return phi.row(static_cast<Eigen::Index>(i)); }
  auto k_row(std::size_t i) const { return k.row(static_cast<Eigen::Index>(i)); }
  auto a_row(std::size_t i) const { return a.row(static_cast<Eigen::Index>(i)); }
  auto chi_row(std::size_t i) const { return chi.row(static_cast<Eigen::Index>(i)); }

  /// phi_t(y) by Hermite interpolation with slopes k.
  double phi_at(std::size_t i, double y) const { return interp::hermite(axis, phi_row(i), k_row(i), y); }
  /// a_t(y) = (grad phi_t(y))^{-1} by four-point interpolation.
  double a_at(std::size_t i, double y) const { return interp::cubic(axis, a_row(i), y); }
  bool inverted() const { return chi.rows() == phi.rows(); }
  /// chi_t(x) from the Hermite interpolant of phi_t; NaN outside phi_t(axis).
  double chi_at(std::size_t i, double x) const {
    const auto p = phi_row(i);
    if (!(x >= p[0] && x <= p[static_cast<Eigen::Index>(nodes() - 1)])) return std::numeric_limits<double>::quiet_NaN();
    return detail::invert_hermite(axis, p, k_row(i), x);
  }
};

/// Solves phi, k, a from every axis node over the whole lift grid; eta nodes run in parallel.
inline FlowField solve_flow(const CoefficientField& cf, std::shared_ptr<const RoughLift> lift, const UniformAxis& axis,
                            const FlowOptions& opts = {}) {
  if (!lift) throw ValidationError("flow needs a lift");
  detail::require_scalar_flow(cf, *lift);
  if (opts.substeps < 1) throw ValidationError("flow substeps must be at least 1");
  const Grid& g = lift->grid();
  const auto rows = static_cast<Eigen::Index>(g.nodes()), cols = static_cast<Eigen::Index>(axis.nodes());
  FlowField ff{g, axis, cf, lift, Eigen::MatrixXd(rows, cols), Eigen::MatrixXd(rows, cols), Eigen::MatrixXd(rows, cols), {}};
  const std::size_t d = cf.d;
  std::vector<double> dz(g.steps() * d), area(g.steps() * d * d);
  const auto& z = lift->path().values();
  const auto& ar = lift->adjacent_areas();
  for (std::size_t i = 0; i < g.steps(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t k = 0; k < d; ++k) dz[i * d + k] = z(ii + 1, static_cast<Eigen::Index>(k)) - z(ii, static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < d * d; ++c) area[i * d * d + c] = ar(ii, static_cast<Eigen::Index>(c));
  }
  parallel_for(
      axis.nodes(),
      [&](std::size_t j) {
        const auto jj = static_cast<Eigen::Index>(j);
        FlowPoint p{axis.x(j), 1.0, 1.0};
        ff.phi(0, jj) = p.phi;
        ff.k(0, jj) = 1.0;
        ff.a(0, jj) = 1.0;
        for (std::size_t i = 0; i < g.steps(); ++i) {
          p = detail::flow_step(cf, g.time(i), dz.data() + i * d, area.data() + i * d * d, p, opts);
          if (!std::isfinite(p.phi) || std::abs(p.phi) > opts.box)
            throw NumericalError("flow from eta = " + csv::format_double(axis.x(j)) + " left the working box at step " +
                                 std::to_string(i + 1));
          const auto r = static_cast<Eigen::Index>(i + 1);
          ff.phi(r, jj) = p.phi;
          ff.k(r, jj) = p.k;
          ff.a(r, jj) = p.a;
        }
      },
      opts.workers);
  return ff;
}

/// Fills chi_t = phi_t^{-1} on the axis nodes by inverting the Hermite interpolant of phi_t.
inline void invert_flow(FlowField& ff, std::size_t workers = 0) {
  const std::size_t n = ff.nodes();
  ff.chi.resize(ff.phi.rows(), ff.phi.cols());
  parallel_for(
      static_cast<std::size_t>(ff.phi.rows()),
      [&](std::size_t i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const auto p = ff.phi_row(i);
        const auto kk = ff.k_row(i);
        for (std::size_t j = 0; j + 1 < n; ++j)
          if (!(p[static_cast<Eigen::Index>(j + 1)] > p[static_cast<Eigen::Index>(j)]))
            throw NumericalError("flow slice " + std::to_string(i) + " is not increasing near eta = " +
                                 csv::format_double(ff.axis.x(j)));
        for (std::size_t j = 0; j < n; ++j) {
          const double x = ff.axis.x(j);
          const bool inside = x >= p[0] && x <= p[static_cast<Eigen::Index>(n - 1)];
          ff.chi(ii, static_cast<Eigen::Index>(j)) =
              inside ? detail::invert_hermite(ff.axis, p, kk, x) : std::numeric_limits<double>::quiet_NaN();
        }
      },
      workers);
}

/// sup |chi_t(phi_t(eta)) - eta| over time nodes and the eta nodes at least `margin` nodes away from
/// the ends whose image stays `margin` nodes inside the valid part of chi_t.
inline double composition_defect(const FlowField& ff, std::size_t margin = 4) {
  if (!ff.inverted()) throw ValidationError("composition defect needs an inverted flow");
  const std::size_t n = ff.nodes();
  double worst = 0.0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(ff.phi.rows()); ++i) {
    const auto c = ff.chi_row(i);
    std::size_t first = 0, last = n - 1;
    while (first < n && !std::isfinite(c[static_cast<Eigen::Index>(first)])) ++first;
    while (last > first && !std::isfinite(c[static_cast<Eigen::Index>(last)])) --last;
    if (last < first + 2 * margin + 4) continue;
    const double lo = ff.axis.x(first + margin), hi = ff.axis.x(last - margin);
    const UniformAxis sub(ff.axis.x(first), ff.axis.x(last), last - first + 1);
    const Eigen::VectorXd cv = c.segment(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(last - first + 1)).transpose();
    for (std::size_t j = margin; j + margin < n; ++j) {
      const double y = ff.phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      if (y < lo || y > hi) continue;
      worst = std::max(worst, std::abs(interp::cubic(sub, cv, y) - ff.axis.x(j)));
    }
  }
  return worst;
}

/// sup |k a - 1| over all nodes.
inline double jacobian_defect(const FlowField& ff) { return (ff.k.cwiseProduct(ff.a).array() - 1.0).abs().maxCoeff(); }

/// Field g_t(x) on the axis whose strong coefficients are those of the transport structure:
///   g^{zeta; i1} = -g' sigma^{i1},  g^{zeta2; i1 i2} = (g'' sigma^{i2} + g' sigma^{i2}') sigma^{i1}.
/// Composed with phi_t both composite coefficients must vanish. Returns the sup magnitudes over
/// eta nodes whose image stays `margin` nodes inside the finite part of g.
struct CoefficientDefect {
  double first = 0.0;
  double second = 0.0;
};

inline CoefficientDefect transport_coefficient_defect(const FlowField& ff, std::size_t node, const Eigen::VectorXd& g,
                                                      std::size_t margin = 4) {
  const std::size_t n = ff.nodes(), d = ff.cf.d;
  const auto dd = static_cast<Eigen::Index>(d);
  const double t = ff.time.time(node);
  std::size_t first = 0, last = n - 1;
  while (first < n && !std::isfinite(g[static_cast<Eigen::Index>(first)])) ++first;
  while (last > first && !std::isfinite(g[static_cast<Eigen::Index>(last)])) --last;
  if (last < first + 2 * margin + 4) throw ValidationError("too few valid nodes for a coefficient defect");
  const std::size_t m = last - first + 1;
  const UniformAxis sub(ff.axis.x(first), ff.axis.x(last), m);
  const Eigen::VectorXd gv = g.segment(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(m));
  const Eigen::VectorXd g1 = interp::derivative(sub, gv), g2 = interp::second_derivative(sub, gv);
  const auto mm = static_cast<Eigen::Index>(m);
  StrongField1D mu{sub, gv, Eigen::MatrixXd(mm, dd), Eigen::MatrixXd(mm, dd * dd), {}, {}, {}};
  for (Eigen::Index j = 0; j < mm; ++j) {
    const double x = sub.x(static_cast<std::size_t>(j));
    for (std::size_t i1 = 0; i1 < d; ++i1) {
      const double s1 = ff.cf.sigma1(t, x, i1, 0);
      mu.first(j, static_cast<Eigen::Index>(i1)) = -g1[j] * s1;
      for (std::size_t i2 = 0; i2 < d; ++i2)
        mu.second(j, static_cast<Eigen::Index>(i1 * d + i2)) =
            (g2[j] * ff.cf.sigma1(t, x, i2, 0) + g1[j] * ff.cf.sigma1(t, x, i2, 1)) * s1;
    }
  }
  // phi_t restricted to eta nodes landing well inside mu's axis.
  const double lo = sub.x(margin), hi = sub.x(m - 1 - margin);
  std::vector<Eigen::Index> keep;
  for (std::size_t j = 0; j < n; ++j) {
    const double y = ff.phi(static_cast<Eigen::Index>(node), static_cast<Eigen::Index>(j));
    if (y >= lo && y <= hi) keep.push_back(static_cast<Eigen::Index>(j));
  }
  if (keep.empty()) throw ValidationError("no flow node lands inside the field's domain");
  const auto kn = static_cast<Eigen::Index>(keep.size());
  StrongField1D nu{ff.axis, Eigen::VectorXd(kn), Eigen::MatrixXd(kn, dd), Eigen::MatrixXd(kn, dd * dd), {}, {}, {}};
  for (Eigen::Index r = 0; r < kn; ++r) {
    const double y = ff.phi(static_cast<Eigen::Index>(node), keep[static_cast<std::size_t>(r)]);
    nu.value[r] = y;
    for (std::size_t i1 = 0; i1 < d; ++i1) {
      nu.first(r, static_cast<Eigen::Index>(i1)) = ff.cf.sigma1(t, y, i1, 0);
      for (std::size_t i2 = 0; i2 < d; ++i2)
        nu.second(r, static_cast<Eigen::Index>(i1 * d + i2)) = ff.cf.sigma1(t, y, i1, 1) * ff.cf.sigma1(t, y, i2, 0);
    }
  }
  const auto c = compose_strong(mu, nu);
  return {c.first.cwiseAbs().maxCoeff(), c.second.cwiseAbs().maxCoeff()};
}

/// (chi o phi) coefficient defect at one time node.
inline CoefficientDefect flow_coefficient_defect(const FlowField& ff, std::size_t node, std::size_t margin = 4) {
  if (!ff.inverted()) throw ValidationError("coefficient defect needs an inverted flow");
  return transport_coefficient_defect(ff, node, ff.chi_row(node).transpose(), margin);
}

/// psi_t = psi_hat_t o chi_t with psi_hat_t(y) = psi_hat_0(y) + int_0^t drift(r, y) dr, and its
/// time drift psi^t_t(x) = drift(t, chi_t(x)). NaN where chi is.
struct TestFunction {
  Grid time;
  UniformAxis axis;
  Eigen::MatrixXd value;  ///< time nodes x axis nodes
  Eigen::MatrixXd drift;
};

inline TestFunction build_test_function(const std::function<double(double)>& psi0,
                                        const std::function<double(double, double)>& drift, const FlowField& ff,
                                        std::size_t workers = 0) {
  if (!psi0) throw ValidationError("test function needs an initial profile");
  if (!ff.inverted()) throw ValidationError("test function needs an inverted flow");
  const Grid& g = ff.time;
  const Eigen::Index rows = ff.chi.rows(), cols = ff.chi.cols();
  TestFunction tf{g, ff.axis, Eigen::MatrixXd(rows, cols), Eigen::MatrixXd(rows, cols)};
  // int_0^t drift(r, y) dr on the axis nodes by the trapezoid rule; read off at chi_t(x) by cubic interpolation.
  Eigen::MatrixXd acc;
  if (drift) {
    acc.resize(rows, cols);
    parallel_for(
        ff.nodes(),
        [&](std::size_t j) {
          const auto jj = static_cast<Eigen::Index>(j);
          const double y = ff.axis.x(j);
          acc(0, jj) = 0.0;
          double prev = drift(g.time(0), y);
          for (Eigen::Index i = 1; i < rows; ++i) {
            const double cur = drift(g.time(static_cast<std::size_t>(i)), y);
            acc(i, jj) = acc(i - 1, jj) + 0.5 * g.dt() * (prev + cur);
            prev = cur;
          }
        },
        workers);
  }
  parallel_for(
      static_cast<std::size_t>(rows),
      [&](std::size_t i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double t = g.time(i);
        for (Eigen::Index j = 0; j < cols; ++j) {
          const double y = ff.chi(ii, j);
          if (!std::isfinite(y)) {
            tf.value(ii, j) = tf.drift(ii, j) = std::numeric_limits<double>::quiet_NaN();
            continue;
          }
          tf.value(ii, j) = psi0(y) + (drift ? interp::cubic(ff.axis, acc.row(ii), y) : 0.0);
          tf.drift(ii, j) = drift ? drift(t, y) : 0.0;
        }
      },
      workers);
  return tf;
}

/// sup over steps and interior nodes of |delta psi + psi' sigma dzeta - psi^t dt|, psi' by centered differences.
inline double test_function_residual(const TestFunction& tf, const FlowField& ff, std::size_t margin = 4) {
  const std::size_t n = tf.axis.nodes(), d = ff.cf.d;
  const auto& z = ff.lift->path().values();
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < tf.time.nodes(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double t = tf.time.time(i);
    for (std::size_t j = margin; j + margin < n; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      bool ok = true;
      for (std::size_t q = j - 1; q <= j + 1; ++q)
        ok = ok && std::isfinite(tf.value(ii, static_cast<Eigen::Index>(q))) && std::isfinite(tf.value(ii + 1, static_cast<Eigen::Index>(q)));
      if (!ok || !std::isfinite(tf.value(ii, jj - static_cast<Eigen::Index>(margin))) ||
          !std::isfinite(tf.value(ii, jj + static_cast<Eigen::Index>(margin))))
        continue;
      const double x = tf.axis.x(j);
      const double dpsi = (tf.value(ii, jj + 1) - tf.value(ii, jj - 1)) / (2.0 * tf.axis.spacing());
      double r = tf.value(ii + 1, jj) - tf.value(ii, jj) - tf.drift(ii, jj) * tf.time.dt();
      for (std::size_t k = 0; k < d; ++k) r += dpsi * ff.cf.sigma1(t, x, k, 0) * (z(ii + 1, static_cast<Eigen::Index>(k)) - z(ii, static_cast<Eigen::Index>(k)));
      worst = std::max(worst, std::abs(r));
    }
  }
  return worst;
}

/// CSV `t, eta, phi, k, a, chi` every `stride` time nodes (plus the last).
inline void write_flow_csv(const FlowField& ff, const std::string& file, std::size_t stride = 1) {
  csv::Writer w(file, {"t", "eta", "phi", "k", "a", "chi"});
  const std::size_t rows = static_cast<std::size_t>(ff.phi.rows());
  for (std::size_t i = 0; i < rows; ++i) {
    if (i % std::max<std::size_t>(stride, 1) != 0 && i + 1 != rows) continue;
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < ff.nodes(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      w.row({ff.time.time(i), ff.axis.x(j), ff.phi(ii, jj), ff.k(ii, jj), ff.a(ii, jj),
             ff.inverted() ? ff.chi(ii, jj) : std::numeric_limits<double>::quiet_NaN()});
    }
  }
}

}  // namespace roughctl

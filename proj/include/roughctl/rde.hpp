#pragma once

#include "roughctl/coefficients.hpp"
#include "roughctl/controlled.hpp"
#include "roughctl/csv.hpp"
#include "roughctl/integrate.hpp"

#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace roughctl {

struct RdeOptions {
  Evaluation eval = Evaluation::left;
  double box = 10.0;             ///< solutions must stay in [-box, box]^m
  unsigned quadrature_order = 32;
  std::size_t start = 0;         ///< first node (state y0 sits here)
  std::optional<std::size_t> stop;  ///< last node; the end of the grid when empty
};

struct RdeSolution {
  ControlledPath path;  ///< x with x^zeta = sigma(t, x)
  std::size_t steps = 0;
  Evaluation eval = Evaluation::left;
  std::vector<std::string> warnings;
};

namespace detail {

/// Rough part of one step: sigma dzeta + sum_{k,l} (grad sigma^k sigma^l) comp^{lk}.
inline Eigen::VectorXd rough_part(const CoefficientField& cf, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& dz,
                                  const Eigen::MatrixXd& comp) {
  const Eigen::MatrixXd s = cf.sigma(t, x);
  Eigen::VectorXd out = s * dz;
  for (std::size_t k = 0; k < cf.d; ++k) {
    const Eigen::MatrixXd jk = cf.sigma_jacobian(t, x, k);
    for (std::size_t l = 0; l < cf.d; ++l) {
      const double c = comp(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(k));
      if (c != 0.0) out += c * (jk * s.col(static_cast<Eigen::Index>(l)));
    }
  }
  return out;
}

}  // namespace detail

/// Control-free part of a scalar step: sum_k sigma^k dzeta^k + sum_{k,l} sigma^k' sigma^l area^{lk}.
inline double scalar_rough(const CoefficientField& cf, double t, const double* dz, const double* area, double x) {
  const std::size_t d = cf.d;
  double rough = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double sk = cf.sigma1(t, x, k, 0);
    rough += sk * dz[k];
    const double dsk = cf.sigma1(t, x, k, 1);
    if (dsk == 0.0) continue;
    for (std::size_t l = 0; l < d; ++l) rough += dsk * cf.sigma1(t, x, l, 0) * area[l * d + k];
  }
  return rough;
}

/// Heun drift on top of a precomputed rough part.
template <class Drift>
double heun_step(Drift&& bhat, double t, double dt, double rough, double x) {
  const double b0 = bhat(t, x);
  const double pred = x + b0 * dt + rough;
  return x + 0.5 * (b0 + bhat(t + dt, pred)) * dt + rough;
}

/// One step of the scheme for a scalar state:
///   x + 1/2 (b(t, x) + b(t + dt, x_pred)) dt + sum_k sigma^k dzeta^k + sum_{k,l} sigma^k' sigma^l area^{lk}.
/// The drift uses a Heun predictor (x_pred is the Euler step) so smooth drifts are second order.
template <class Drift>
double scalar_step(const CoefficientField& cf, Drift&& bhat, double t, double dt, const double* dz, const double* area,
                   double x) {
  return heun_step(bhat, t, dt, scalar_rough(cf, t, dz, area, x), x);
}

/// One step of the scheme for a general state; the right-point variant is solved by fixed-point iteration.
template <class Drift>
Eigen::VectorXd vector_step(const CoefficientField& cf, Drift&& bhat, double t, double dt, const Eigen::VectorXd& dz,
                            const Eigen::MatrixXd& area, const Eigen::VectorXd& x, Evaluation eval) {
  const Eigen::VectorXd b0 = bhat(t, x);
  Eigen::VectorXd rough = detail::rough_part(cf, t, x, dz, area);
  Eigen::VectorXd next = x + 0.5 * (b0 + bhat(t + dt, Eigen::VectorXd(x + b0 * dt + rough))) * dt + rough;
  if (eval == Evaluation::left) return next;
  const Eigen::MatrixXd comp = area - dz * dz.transpose();
  for (int it = 0; it < 100; ++it) {
    rough = detail::rough_part(cf, t + dt, next, dz, comp);
    const Eigen::VectorXd upd = x + 0.5 * (b0 + bhat(t + dt, next)) * dt + rough;
    const double change = (upd - next).cwiseAbs().maxCoeff();
    next = upd;
    if (change <= 1e-15 * (1.0 + next.cwiseAbs().maxCoeff())) break;
  }
  return next;
}

/// Drift averaged against the control in force on each interval of the lift grid.
class ControlledDrift {
 public:
  ControlledDrift(const CoefficientField& cf, const Grid& lift_grid, const std::optional<MeasurePath>& gamma, unsigned order)
      : cf_(&cf) {
    if (!gamma) return;
    if (!lift_grid.refines(gamma->grid)) throw ValidationError("control grid is not compatible with the lift grid");
    factor_ = lift_grid.refinement_factor(gamma->grid);
    for (const auto& m : gamma->measures) per_node_.emplace_back(cf, m, order);
  }

  /// Averaged drift object in force on lift interval i, or null when there is no control.
  const AveragedDrift* at(std::size_t i) const {
    if (per_node_.empty()) return nullptr;
    return &per_node_[std::min(i / factor_, per_node_.size() - 1)];
  }

  Eigen::VectorXd operator()(std::size_t i, double t, const Eigen::VectorXd& x) const {
    if (const auto* a = at(i)) return (*a)(t, x);
    return cf_->drift(t, x, 0.0);
  }

  double scalar(std::size_t i, double t, double x) const {
    if (const auto* a = at(i)) return a->scalar(t, x);
    return cf_->drift1(t, x, 0.0);
  }

 private:
  const CoefficientField* cf_;
  std::size_t factor_ = 1;
  std::vector<AveragedDrift> per_node_;
};

/// Trajectory from node opts.start to opts.stop (default: the end of the lift grid); row r is node start + r.
inline Eigen::MatrixXd simulate_rde(const CoefficientField& cf, const Eigen::VectorXd& y0, const RoughLift& lift,
                                    const std::optional<MeasurePath>& gamma, const RdeOptions& opts = {}) {
  if (lift.dim() != cf.d) throw ValidationError("driver dimension does not match the diffusion");
  if (static_cast<std::size_t>(y0.size()) != cf.m) throw ValidationError("initial condition has the wrong dimension");
  const Grid& g = lift.grid();
  if (opts.start >= g.nodes()) throw ValidationError("start node outside the grid");
  const std::size_t stop = opts.stop.value_or(g.steps());
  if (stop < opts.start || stop > g.steps()) throw ValidationError("stop node outside [start, N]");
  const ControlledDrift drift(cf, g, gamma, opts.quadrature_order);
  const std::size_t rows = stop + 1 - opts.start;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cf.m));
  x.row(0) = y0.transpose();
  const double dt = g.dt();
  const bool fast = cf.scalar() && opts.eval == Evaluation::left;
  const auto d = static_cast<Eigen::Index>(cf.d);
  const auto& zeta = lift.path().values();
  const auto& areas = lift.adjacent_areas();
  std::vector<double> dz(cf.d), area(cf.d * cf.d);
  for (std::size_t r = 0; r + 1 < rows; ++r) {
    const std::size_t i = opts.start + r;
    const double t = g.time(i);
    const auto ri = static_cast<Eigen::Index>(r);
    if (fast) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (Eigen::Index k = 0; k < d; ++k) dz[static_cast<std::size_t>(k)] = zeta(ii + 1, k) - zeta(ii, k);
      for (Eigen::Index c = 0; c < d * d; ++c) area[static_cast<std::size_t>(c)] = areas(ii, c);
      const auto* avg = drift.at(i);
      auto bhat = [&](double tt, double xx) { return avg ? avg->scalar(tt, xx) : cf.drift1(tt, xx, 0.0); };
      x(ri + 1, 0) = scalar_step(cf, bhat, t, dt, dz.data(), area.data(), x(ri, 0));
    } else {
      auto bhat = [&](double tt, const Eigen::VectorXd& xx) { return drift(i, tt, xx); };
      x.row(ri + 1) = vector_step(cf, bhat, t, dt, lift.increment(i, i + 1), lift.adjacent_area(i),
                                  Eigen::VectorXd(x.row(ri).transpose()), opts.eval)
                          .transpose();
    }
    if (!x.row(ri + 1).allFinite())
      throw NumericalError("RDE solution is not finite at step " + std::to_string(i + 1));
    if (x.row(ri + 1).cwiseAbs().maxCoeff() > opts.box)
      throw NumericalError("RDE solution left the working box at step " + std::to_string(i + 1));
  }
  return x;
}

/// Solves dx = b_hat dt + sigma(x) dzeta from y0 at time 0 on the lift grid.
inline RdeSolution solve_rde(const CoefficientField& cf, const Eigen::VectorXd& y0, std::shared_ptr<const RoughLift> lift,
                             const std::optional<MeasurePath>& gamma = std::nullopt, RdeOptions opts = {}) {
  if (!lift) throw ValidationError("RDE needs a lift");
  opts.start = 0;
  opts.stop.reset();
  RdeSolution sol{ControlledPath(lift, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(lift->grid().nodes()), static_cast<Eigen::Index>(cf.m)),
                                 std::vector<Eigen::MatrixXd>(lift->grid().nodes(), Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(cf.m), static_cast<Eigen::Index>(cf.d)))),
                  lift->grid().steps(), opts.eval, {}};
  if (lift->alpha() < 0.36 && lift->grid().steps() < 256)
    sol.warnings.push_back("lift exponent is close to 1/3 and the grid has fewer than 2^8 steps");
  Eigen::MatrixXd x = simulate_rde(cf, y0, *lift, gamma, opts);
  std::vector<Eigen::MatrixXd> gz(lift->grid().nodes());
  for (std::size_t i = 0; i < gz.size(); ++i)
    gz[i] = cf.sigma(lift->grid().time(i), x.row(static_cast<Eigen::Index>(i)).transpose());
  sol.path = ControlledPath(lift, std::move(x), std::move(gz));
  return sol;
}

struct ContinuityReport {
  double sup_distance = 0.0;
  double seminorm_distance = 0.0;
  double denominator = 0.0;
  double sup_ratio = 0.0;
  double seminorm_ratio = 0.0;
};

/// Sup-norm and controlled-seminorm distance of two solutions on the same lift.
inline std::pair<double, double> solution_distance(const RdeSolution& a, const RdeSolution& b) {
  return {(a.path.values() - b.path.values()).cwiseAbs().maxCoeff(), remainder_norms(a.path - b.path).total()};
}

namespace detail {

inline ContinuityReport continuity_report(const RdeSolution& a, const RdeSolution& b, double denom) {
  if (!(denom > 0.0)) throw ValidationError("continuity probe has a zero denominator");
  ContinuityReport r;
  r.denominator = denom;
  std::tie(r.sup_distance, r.seminorm_distance) = solution_distance(a, b);
  r.sup_ratio = r.sup_distance / denom;
  r.seminorm_ratio = r.seminorm_distance / denom;
  return r;
}

}  // namespace detail

/// Distance of two solutions started at y1 and y2, divided by |y2 - y1|.
inline ContinuityReport continuity_probe(const CoefficientField& cf, std::shared_ptr<const RoughLift> lift,
                                         const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                                         const std::optional<MeasurePath>& gamma = std::nullopt) {
  const auto a = solve_rde(cf, y1, lift, gamma);
  const auto b = solve_rde(cf, y2, lift, gamma);
  return detail::continuity_report(a, b, (y2 - y1).norm());
}

/// Distance of two solutions driven by controls gamma1 and gamma2, divided by dhat(gamma1, gamma2).
inline ContinuityReport continuity_probe(const CoefficientField& cf, std::shared_ptr<const RoughLift> lift,
                                         const Eigen::VectorXd& y, const MeasurePath& gamma1, const MeasurePath& gamma2) {
  const auto a = solve_rde(cf, y, lift, gamma1);
  const auto b = solve_rde(cf, y, lift, gamma2);
  return detail::continuity_report(a, b, dhat(gamma1, gamma2));
}

/// CSV `t, x_1..x_m`.
inline void write_trajectory_csv(const RdeSolution& sol, const std::string& file) {
  std::vector<std::string> header{"t"};
  for (std::size_t j = 1; j <= sol.path.dim(); ++j) header.push_back("x_" + std::to_string(j));
  csv::Writer w(file, header);
  for (std::size_t i = 0; i < sol.path.grid().nodes(); ++i) {
    std::vector<double> row{sol.path.grid().time(i)};
    for (std::size_t j = 0; j < sol.path.dim(); ++j)
      row.push_back(sol.path.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    w.row(row);
  }
}

}  // namespace roughctl

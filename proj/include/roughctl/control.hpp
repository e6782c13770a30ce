#pragma once

#include "roughctl/interp.hpp"
#include "roughctl/parallel.hpp"
#include "roughctl/rde.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace roughctl {

/// Running rate r(t, x, u) = r0 + rx x + rxx x^2 + ru u + ruu u^2, unless `general` is set.
struct RewardRate {
  double r0 = 0.0, rx = 0.0, rxx = 0.0, ru = 0.0, ruu = 0.0;
  std::function<double(double, double, double)> general;  ///< (t, x, u)
};

/// G(x) = g0 + g1 x + g2 x^2 + gabs |x|, unless `general` is set.
struct TerminalReward {
  double g0 = 0.0, g1 = 0.0, g2 = 0.0, gabs = 0.0;
  std::function<double(double)> general;

  double operator()(double x) const {
    if (general) return general(x);
    return g0 + g1 * x + g2 * x * x + gabs * std::abs(x);
  }
};

/// F(t, x, m) = e^{-rho t} (int r(t, x, u) m(du) - lambda h(m)) and terminal G.
struct RewardSpec {
  RewardRate rate;
  double lambda = 0.0;
  double rho = 0.0;
  TerminalReward terminal;
};

inline void validate(const RewardSpec& s) {
  if (!(s.lambda >= 0.0) || !std::isfinite(s.lambda)) throw ValidationError("reward temperature lambda must be >= 0");
  if (!(s.rho >= 0.0) || !std::isfinite(s.rho)) throw ValidationError("discount rho must be >= 0");
}

/// F(t, x, m) for one fixed measure; moments, quadrature nodes and entropy are computed once.
class RewardTerm {
 public:
  RewardTerm(const RewardSpec& spec, const Measure& m, unsigned order = 32)
      : rate_(spec.rate), lambda_(spec.lambda), rho_(spec.rho), rule_(quadrature_rule(m, order)) {
    validate(spec);
    for (std::size_t i = 0; i < rule_.nodes.size(); ++i) {
      m1_ += rule_.weights[i] * rule_.nodes[i];
      m2_ += rule_.weights[i] * rule_.nodes[i] * rule_.nodes[i];
    }
    if (lambda_ > 0.0) entropy_ = entropy(m);  // throws for discrete measures
  }

  double operator()(double t, double x) const {
    double avg;
    if (rate_.general) {
      avg = 0.0;
      for (std::size_t i = 0; i < rule_.nodes.size(); ++i) avg += rule_.weights[i] * rate_.general(t, x, rule_.nodes[i]);
    } else {
      avg = rate_.r0 + rate_.rx * x + rate_.rxx * x * x + rate_.ru * m1_ + rate_.ruu * m2_;
    }
    const double v = avg - lambda_ * entropy_;
    return rho_ == 0.0 ? v : std::exp(-rho_ * t) * v;
  }

 private:
  RewardRate rate_;
  double lambda_, rho_;
  QuadratureRule rule_;
  double m1_ = 0.0, m2_ = 0.0, entropy_ = 0.0;
};

inline double reward_F(const RewardSpec& spec, double t, double x, const Measure& m) { return RewardTerm(spec, m)(t, x); }

struct RewardBounds {
  double sup_F = 0.0, lipschitz_F = 0.0, sup_G = 0.0, lipschitz_G = 0.0;
};

/// Samples F over the control set and G on [-box, box]; both must be finite there.
inline RewardBounds check_reward(const RewardSpec& spec, const ControlSet& k, double box, std::size_t samples = 401) {
  RewardBounds r;
  const double h = 2.0 * box / static_cast<double>(samples - 1);
  std::vector<RewardTerm> terms;
  for (const auto& m : k.members) terms.emplace_back(spec, m);
  for (std::size_t i = 0; i < samples; ++i) {
    const double x = -box + h * static_cast<double>(i);
    const double g = spec.terminal(x);
    if (!std::isfinite(g)) throw ValidationError("terminal reward is not finite on the working box");
    r.sup_G = std::max(r.sup_G, std::abs(g));
    if (i + 1 < samples) r.lipschitz_G = std::max(r.lipschitz_G, std::abs(spec.terminal(x + h) - g) / h);
    for (const auto& f : terms) {
      const double v = f(0.0, x);
      if (!std::isfinite(v)) throw ValidationError("running reward is not finite on the working box");
      r.sup_F = std::max(r.sup_F, std::abs(v));
      if (i + 1 < samples) r.lipschitz_F = std::max(r.lipschitz_F, std::abs(f(0.0, x + h) - v) / h);
    }
  }
  return r;
}

/// J(gamma, y) = sum_i F(t_i, x_i, gamma_i) dt + G(x_N) from node `start` (left-point rule on the lift grid).
inline double objective_J(const RewardSpec& spec, const MeasurePath& gamma, double y, const CoefficientField& cf,
                          const RoughLift& lift, std::size_t start = 0) {
  if (cf.m != 1) throw ValidationError("objectives are implemented for scalar states");
  const Grid& g = lift.grid();
  if (!g.refines(gamma.grid)) throw ValidationError("control grid is not compatible with the lift grid");
  RdeOptions opts;
  opts.start = start;
  const Eigen::MatrixXd x = simulate_rde(cf, Eigen::VectorXd::Constant(1, y), lift, gamma, opts);
  const std::size_t f = g.refinement_factor(gamma.grid);
  std::vector<std::optional<RewardTerm>> terms(gamma.measures.size());
  double acc = 0.0;
  for (std::size_t i = start; i < g.steps(); ++i) {
    const std::size_t node = std::min(i / f, gamma.measures.size() - 1);
    if (!terms[node]) terms[node].emplace(spec, gamma.measures[node]);
    acc += (*terms[node])(g.time(i), x(static_cast<Eigen::Index>(i - start), 0)) * g.dt();
  }
  return acc + spec.terminal(x(x.rows() - 1, 0));
}

struct BruteForceResult {
  double value = -std::numeric_limits<double>::infinity();
  std::vector<std::size_t> argmax;  ///< control index per segment
};

/// Exhaustive maximum of objective_J over controls that are constant between switch nodes.
/// `switch_nodes` are lift-grid nodes, increasing, the first equal to `start`.
inline BruteForceResult value_bruteforce(const RewardSpec& spec, const ControlSet& k, const CoefficientField& cf,
                                         const RoughLift& lift, double y, std::size_t start,
                                         const std::vector<std::size_t>& switch_nodes) {
  const Grid& g = lift.grid();
  if (switch_nodes.empty() || switch_nodes.front() != start) throw ValidationError("switch nodes must begin at the start node");
  for (std::size_t i = 1; i < switch_nodes.size(); ++i)
    if (switch_nodes[i] <= switch_nodes[i - 1]) throw ValidationError("switch nodes must increase");
  if (switch_nodes.back() >= g.steps()) throw ValidationError("switch node beyond the last interval");
  const std::size_t segments = switch_nodes.size();
  double count = 1.0;
  for (std::size_t s = 0; s < segments; ++s) count *= static_cast<double>(k.size());
  if (count > 1e6) throw ValidationError("brute force needs |K|^segments <= 10^6");

  BruteForceResult best;
  std::vector<std::size_t> idx(segments, 0);
  while (true) {
    std::vector<Measure> ms(g.nodes(), k[idx[0]]);
    std::size_t seg = 0;
    for (std::size_t i = start; i < g.nodes(); ++i) {
      while (seg + 1 < segments && switch_nodes[seg + 1] <= i) ++seg;
      ms[i] = k[idx[seg]];
    }
    const double v = objective_J(spec, MeasurePath(g, std::move(ms)), y, cf, lift, start);
    if (v > best.value) {
      best.value = v;
      best.argmax = idx;
    }
    std::size_t c = 0;
    while (c < segments && ++idx[c] == k.size()) idx[c++] = 0;
    if (c == segments) break;
  }
  return best;
}

/// Value function on a time x space grid.
struct ValueGrid {
  Grid time;
  UniformAxis axis;
  std::vector<std::size_t> stored;  ///< time nodes kept, increasing; always contains 0 and N
  Eigen::MatrixXd values;           ///< stored.size() x axis.nodes()
  Eigen::MatrixXi argmax;           ///< control index per stored node; -1 on the terminal slice
  std::string provenance;           ///< dp | hjb | hjb-backmapped | smooth-<n>
  std::string boundary = "clamped";
  double valid_lo = 0.0, valid_hi = 0.0;   ///< initial states whose reachable set stays on the axis
  std::vector<double> reach_lo, reach_hi;  ///< reachable envelope per time node from [valid_lo, valid_hi]

  std::size_t row(std::size_t node) const {
    const auto it = std::lower_bound(stored.begin(), stored.end(), node);
    if (it == stored.end() || *it != node) throw ValidationError("time node " + std::to_string(node) + " is not stored");
    return static_cast<std::size_t>(it - stored.begin());
  }
  bool has(std::size_t node) const { return std::binary_search(stored.begin(), stored.end(), node); }
  Eigen::VectorXd slice(std::size_t node) const { return values.row(static_cast<Eigen::Index>(row(node))).transpose(); }
  double at(std::size_t node, double x) const {
    return interp::linear(axis, values.row(static_cast<Eigen::Index>(row(node))), x);
  }
};

/// CSV `t, x, value, argmax_index` over the stored slices.
inline void write_value_csv(const ValueGrid& v, const std::string& file) {
  csv::Writer w(file, {"t", "x", "value", "argmax_index"});
  for (std::size_t r = 0; r < v.stored.size(); ++r)
    for (std::size_t j = 0; j < v.axis.nodes(); ++j) {
      const auto rr = static_cast<Eigen::Index>(r), jj = static_cast<Eigen::Index>(j);
      w.row({v.time.time(v.stored[r]), v.axis.x(j), v.values(rr, jj), static_cast<double>(v.argmax(rr, jj))});
    }
}

struct DpOptions {
  std::size_t stride = 1;  ///< keep every stride-th slice (plus 0 and N)
  std::size_t workers = 0;
  std::optional<std::pair<double, double>> region;  ///< initial states that must be covered
  unsigned quadrature_order = 32;
};

namespace detail {

/// Per-step driver increments and areas copied out of the lift (row-major per step).
struct StepData {
  std::size_t d = 1;
  std::vector<double> dz, area;

  explicit StepData(const RoughLift& lift) : d(lift.dim()) {
    const std::size_t n = lift.grid().steps();
    const auto& z = lift.path().values();
    const auto& a = lift.adjacent_areas();
    dz.resize(n * d);
    area.resize(n * d * d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t k = 0; k < d; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        dz[i * d + k] = z(ii + 1, kk) - z(ii, kk);
      }
      for (std::size_t c = 0; c < d * d; ++c) area[i * d * d + c] = a(ii, static_cast<Eigen::Index>(c));
    }
  }
  const double* dz_at(std::size_t i) const { return dz.data() + i * d; }
  const double* area_at(std::size_t i) const { return area.data() + i * d * d; }
};

/// Averaged drifts and rewards for every member of the control set.
struct PreparedControls {
  std::vector<AveragedDrift> drift;
  std::vector<RewardTerm> reward;

  PreparedControls(const RewardSpec& spec, const ControlSet& k, const CoefficientField& cf, unsigned order) {
    for (const auto& m : k.members) {
      drift.emplace_back(cf, m, order);
      reward.emplace_back(spec, m, order);
    }
  }
  std::size_t size() const { return drift.size(); }
};

inline double step_with(const AveragedDrift& b, const Grid& g, std::size_t i, double rough, double x) {
  return heun_step([&](double t, double y) { return b.scalar(t, y); }, g.time(i), g.dt(), rough, x);
}

/// Extreme trajectories over the control set from lo and hi; first = lower envelope, second = upper.
inline std::pair<std::vector<double>, std::vector<double>> envelope(const CoefficientField& cf, const PreparedControls& pc,
                                                                   const Grid& g, const StepData& sd, double lo, double hi) {
  std::vector<double> elo(g.nodes()), ehi(g.nodes());
  elo[0] = lo;
  ehi[0] = hi;
  for (std::size_t i = 0; i < g.steps(); ++i) {
    const double rl = scalar_rough(cf, g.time(i), sd.dz_at(i), sd.area_at(i), elo[i]);
    const double rh = scalar_rough(cf, g.time(i), sd.dz_at(i), sd.area_at(i), ehi[i]);
    double a = std::numeric_limits<double>::infinity(), b = -a;
    for (std::size_t c = 0; c < pc.size(); ++c) {
      a = std::min(a, step_with(pc.drift[c], g, i, rl, elo[i]));
      b = std::max(b, step_with(pc.drift[c], g, i, rh, ehi[i]));
    }
    elo[i + 1] = a;
    ehi[i + 1] = b;
  }
  return {elo, ehi};
}

}  // namespace detail

/// Backward dynamic programming V_k(x) = max_{gamma in K} [F(t_k, x, gamma) dt + V_{k+1}(step(x, gamma))]
/// on `time_grid` (the lift is restricted to it) with clamped linear interpolation on `axis`.
inline ValueGrid value_dp(const RewardSpec& spec, const ControlSet& k, const CoefficientField& cf, const RoughLift& lift,
                          const UniformAxis& axis, const Grid& time_grid, const DpOptions& opts = {}) {
  if (!cf.scalar()) throw ValidationError("value_dp needs a scalar state with scalar coefficient views");
  if (opts.stride < 1) throw ValidationError("slice stride must be at least 1");
  validate(spec);
  const RoughLift dp_lift = lift.grid() == time_grid ? lift : lift.restrict_to(time_grid);
  const Grid& g = time_grid;
  const detail::StepData sd(dp_lift);
  const detail::PreparedControls pc(spec, k, cf, opts.quadrature_order);

  // Largest interval of initial states whose envelope stays on the axis.
  auto upper_ok = [&](double y) {
    const auto e = detail::envelope(cf, pc, g, sd, y, y);
    return *std::max_element(e.second.begin(), e.second.end()) <= axis.hi();
  };
  auto lower_ok = [&](double y) {
    const auto e = detail::envelope(cf, pc, g, sd, y, y);
    return *std::min_element(e.first.begin(), e.first.end()) >= axis.lo();
  };
  auto bisect = [](double good, double bad, auto ok) {
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (good + bad);
      (ok(mid) ? good : bad) = mid;
    }
    return good;
  };
  ValueGrid v{g, axis, {}, {}, {}, "dp", "clamped", 0.0, 0.0, {}, {}};
  const double mid = 0.5 * (axis.lo() + axis.hi());
  if (!upper_ok(mid) || !lower_ok(mid)) throw ValidationError("reachable set from the axis centre escapes the state grid");
  v.valid_hi = upper_ok(axis.hi()) ? axis.hi() : bisect(mid, axis.hi(), upper_ok);
  v.valid_lo = lower_ok(axis.lo()) ? axis.lo() : bisect(mid, axis.lo(), lower_ok);
  double lo = v.valid_lo, hi = v.valid_hi;
  if (opts.region) {
    lo = opts.region->first;
    hi = opts.region->second;
    if (lo < v.valid_lo || hi > v.valid_hi) {
      const auto e = detail::envelope(cf, pc, g, sd, lo, hi);
      const double out = std::max(*std::max_element(e.second.begin(), e.second.end()) - axis.hi(),
                                  axis.lo() - *std::min_element(e.first.begin(), e.first.end()));
      throw ValidationError("reachable set escapes the state grid: max excursion " + csv::format_double(out) +
                            " beyond the axis");
    }
  }
  std::tie(v.reach_lo, v.reach_hi) = detail::envelope(cf, pc, g, sd, lo, hi);

  const std::size_t n = axis.nodes(), steps = g.steps();
  for (std::size_t i = 0; i <= steps; ++i)
    if (i == 0 || i == steps || i % opts.stride == 0) v.stored.push_back(i);
  v.values.resize(static_cast<Eigen::Index>(v.stored.size()), static_cast<Eigen::Index>(n));
  v.argmax.resize(static_cast<Eigen::Index>(v.stored.size()), static_cast<Eigen::Index>(n));

  Eigen::VectorXd next(static_cast<Eigen::Index>(n)), cur(static_cast<Eigen::Index>(n));
  Eigen::VectorXi arg(static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) next[static_cast<Eigen::Index>(j)] = spec.terminal(axis.x(j));
  std::size_t r = v.stored.size() - 1;
  v.values.row(static_cast<Eigen::Index>(r)) = next.transpose();
  v.argmax.row(static_cast<Eigen::Index>(r)).setConstant(-1);
  const double dt = g.dt();
  for (std::size_t i = steps; i-- > 0;) {
    const double t = g.time(i);
    parallel_for(
        n,
        [&](std::size_t j) {
          const double x = axis.x(j);
          const double rough = scalar_rough(cf, t, sd.dz_at(i), sd.area_at(i), x);
          double best = -std::numeric_limits<double>::infinity();
          int best_c = 0;
          for (std::size_t c = 0; c < pc.size(); ++c) {
            const double y = detail::step_with(pc.drift[c], g, i, rough, x);
            const double val = pc.reward[c](t, x) * dt + interp::linear(axis, next, y);
            if (val > best) {
              best = val;
              best_c = static_cast<int>(c);
            }
          }
          cur[static_cast<Eigen::Index>(j)] = best;
          arg[static_cast<Eigen::Index>(j)] = best_c;
        },
        opts.workers);
    std::swap(cur, next);
    if (r > 0 && v.stored[r - 1] == i) {
      --r;
      v.values.row(static_cast<Eigen::Index>(r)) = next.transpose();
      v.argmax.row(static_cast<Eigen::Index>(r)) = arg.transpose();
    }
  }
  return v;
}

/// max over covered state nodes of |V(s1, x) - max_{gamma in K} [int_{s1}^{s2} F + V(s2, x_{s2})]|, the control held
/// constant on [s1, s2] and the state simulated on the (finer) lift grid. s1 < s2 are stored nodes of V.
inline double dpp_residual(const ValueGrid& v, const RewardSpec& spec, const ControlSet& k, const CoefficientField& cf,
                           const RoughLift& lift, std::size_t s1, std::size_t s2, std::size_t workers = 0) {
  if (!(s1 < s2)) throw ValidationError("dpp_residual needs s1 < s2");
  const Grid& fine = lift.grid();
  const std::size_t f = fine.refinement_factor(v.time);
  const detail::StepData sd(lift);
  const detail::PreparedControls pc(spec, k, cf, 32);
  const Eigen::VectorXd v1 = v.slice(s1), v2 = v.slice(s2);
  const double lo = v.reach_lo.empty() ? v.axis.lo() : v.reach_lo[s1];
  const double hi = v.reach_hi.empty() ? v.axis.hi() : v.reach_hi[s1];
  std::vector<double> res(v.axis.nodes(), 0.0);
  parallel_for(
      v.axis.nodes(),
      [&](std::size_t j) {
        const double x0 = v.axis.x(j);
        if (x0 < lo || x0 > hi) return;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < pc.size(); ++c) {
          double x = x0, acc = 0.0;
          for (std::size_t i = s1 * f; i < s2 * f; ++i) {
            acc += pc.reward[c](fine.time(i), x) * fine.dt();
            x = detail::step_with(pc.drift[c], fine, i, scalar_rough(cf, fine.time(i), sd.dz_at(i), sd.area_at(i), x), x);
          }
          best = std::max(best, acc + interp::linear(v.axis, v2, x));
        }
        res[j] = std::abs(v1[static_cast<Eigen::Index>(j)] - best);
      },
      workers);
  return *std::max_element(res.begin(), res.end());
}

}  // namespace roughctl

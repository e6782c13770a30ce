#pragma once

#include "roughctl/control.hpp"
#include "roughctl/flow.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace roughctl {

/// H(t, y, gamma, p) = p int b(t, y, a) gamma(da) + F(t, y, gamma) over the members of a control set.
/// Averaged drifts and reward terms are cached per member; copies share the cache.
class HamiltonianSpec {
 public:
  HamiltonianSpec(RewardSpec reward, ControlSet controls, CoefficientField cf, unsigned order = 32)
      : reward_(std::move(reward)),
        controls_(std::move(controls)),
        cf_(std::make_shared<const CoefficientField>(std::move(cf))),
        order_(order) {
    if (!cf_->scalar()) throw ValidationError("Hamiltonians are implemented for scalar states");
    validate(reward_);
    pc_ = std::make_shared<const detail::PreparedControls>(reward_, controls_, *cf_, order_);
  }

  const RewardSpec& reward() const { return reward_; }
  const ControlSet& controls() const { return controls_; }
  const CoefficientField& cf() const { return *cf_; }
  unsigned order() const { return order_; }
  std::size_t size() const { return controls_.size(); }

  double drift(std::size_t c, double t, double y) const { return pc_->drift[c].scalar(t, y); }
  double rate(std::size_t c, double t, double y) const { return pc_->reward[c](t, y); }
  double operator()(std::size_t c, double t, double y, double p) const { return p * drift(c, t, y) + rate(c, t, y); }

  /// max over the control set and the first maximizing member.
  std::pair<double, std::size_t> sup(double t, double y, double p) const {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < size(); ++c) {
      const double v = (*this)(c, t, y, p);
      if (v > best) best = v, arg = c;
    }
    return {best, arg};
  }

 private:
  RewardSpec reward_;
  ControlSet controls_;
  std::shared_ptr<const CoefficientField> cf_;
  unsigned order_;
  std::shared_ptr<const detail::PreparedControls> pc_;
};

inline double hamiltonian(const HamiltonianSpec& hs, double t, double y, std::size_t c, double p) {
  if (c >= hs.size()) throw ValidationError("control index outside the control set");
  return hs(c, t, y, p);
}

/// Same for a measure outside the control set.
inline double hamiltonian(const HamiltonianSpec& hs, double t, double y, const Measure& gamma, double p) {
  return p * AveragedDrift(hs.cf(), gamma, hs.order()).scalar(t, y) + RewardTerm(hs.reward(), gamma, hs.order())(t, y);
}

/// H(t_i, phi_{t_i}(y), gamma, p a_{t_i}(y)) at time node i of the flow.
inline double hamiltonian_hat(const HamiltonianSpec& hs, const FlowField& ff, std::size_t i, double y, std::size_t c, double p) {
  if (!ff.axis.contains(y)) throw ValidationError("point " + csv::format_double(y) + " is outside the flow grid");
  if (i >= ff.time.nodes()) throw ValidationError("time node outside the flow grid");
  return hamiltonian(hs, ff.time.time(i), ff.phi_at(i, y), c, p * ff.a_at(i, y));
}

/// sup over the control set of hamiltonian_hat.
inline double hamiltonian_tilde(const HamiltonianSpec& hs, const FlowField& ff, std::size_t i, double y, double p) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < hs.size(); ++c) best = std::max(best, hamiltonian_hat(hs, ff, i, y, c, p));
  return best;
}

struct LipschitzReport {
  double p_ratio = 0.0;  ///< max |H~(t,x,p) - H~(t,x,q)| / |p - q|
  double x_ratio = 0.0;  ///< max |H~(t,x,p) - H~(t,y,p)| / ((1 + |p|) |x - y|)
  std::size_t samples = 0;
};

/// Random probe of both Lipschitz bounds of H~ over time nodes, the flow axis less `margin` nodes at
/// each end, and momenta in [-pmax, pmax].
inline LipschitzReport lipschitz_probe(const HamiltonianSpec& hs, const FlowField& ff, std::size_t samples = 10000,
                                       std::uint64_t seed = 1, double pmax = 10.0, std::size_t margin = 4) {
  if (ff.axis.nodes() <= 2 * margin + 1) throw ValidationError("flow axis too short for the probe margin");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> node(0, ff.time.steps());
  std::uniform_real_distribution<double> pos(ff.axis.x(margin), ff.axis.x(ff.axis.nodes() - 1 - margin)), mom(-pmax, pmax);
  LipschitzReport r;
  r.samples = samples;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::size_t i = node(rng);
    const double x = pos(rng), y = pos(rng), p = mom(rng), q = mom(rng);
    const double hxp = hamiltonian_tilde(hs, ff, i, x, p);
    if (p != q) r.p_ratio = std::max(r.p_ratio, std::abs(hxp - hamiltonian_tilde(hs, ff, i, x, q)) / std::abs(p - q));
    if (x != y)
      r.x_ratio = std::max(r.x_ratio, std::abs(hxp - hamiltonian_tilde(hs, ff, i, y, p)) / ((1.0 + std::abs(p)) * std::abs(x - y)));
  }
  return r;
}

/// Refusal of a time step that violates dt <= cfl dx / (2 theta).
class CflError : public ValidationError {
 public:
  CflError(const std::string& what, double suggested_dt, std::size_t suggested_substeps)
      : ValidationError(what), suggested_dt(suggested_dt), suggested_substeps(suggested_substeps) {}
  double suggested_dt;
  std::size_t suggested_substeps;
};

struct HjbOptions {
  std::optional<double> theta;  ///< global dissipation; when empty, theta_factor * max |dH^/dp| per node
  double theta_factor = 1.1;
  double cfl = 1.0;            ///< requires dt <= cfl dx / (2 theta)
  std::size_t substeps = 1;    ///< HJB steps per flow step
  std::size_t pad = 8;         ///< boundary band in nodes, excluded from valid_lo/valid_hi
  std::size_t stride = 1;      ///< keep every stride-th flow node (plus 0 and N)
  std::size_t workers = 0;
};

namespace detail {

/// Transported drifts a_i(y_j) b_c(t, phi_i(y_j)) and rates F_c(t, phi_i(y_j)), node-major.
struct HatSlice {
  std::vector<double> drift, rate, theta;
};

inline void fill_hat_slice(HatSlice& s, const HamiltonianSpec& hs, const FlowField& ff, std::size_t i, double t,
                           const UniformAxis& axis, const HjbOptions& opts) {
  const std::size_t n = axis.nodes(), nc = hs.size();
  s.drift.resize(n * nc);
  s.rate.resize(n * nc);
  s.theta.resize(n);
  parallel_for(
      n,
      [&](std::size_t j) {
        const double y = axis.x(j), x = ff.phi_at(i, y), a = ff.a_at(i, y);
        double widest = 0.0;
        for (std::size_t c = 0; c < nc; ++c) {
          s.drift[j * nc + c] = a * hs.drift(c, t, x);
          s.rate[j * nc + c] = hs.rate(c, t, x);
          widest = std::max(widest, std::abs(s.drift[j * nc + c]));
        }
        s.theta[j] = opts.theta ? *opts.theta : opts.theta_factor * widest;
      },
      opts.workers);
}

}  // namespace detail

/// Backward local Lax-Friedrichs sweep for d_t v^ + sup_gamma H^(t, y, gamma, d_y v^) = 0 with v^(T, y) = G(phi_T(y)),
/// on the flow's time grid (refined by `substeps`) and `axis`, which must lie inside the flow axis.
/// Flow data are frozen at the left flow node of each step. The two end nodes are linearly extrapolated.
inline ValueGrid solve_hjb_transformed(const HamiltonianSpec& hs, const FlowField& ff, const UniformAxis& axis,
                                       const HjbOptions& opts = {}) {
  if (axis.lo() < ff.axis.lo() || axis.hi() > ff.axis.hi()) throw ValidationError("HJB axis must lie inside the flow axis");
  if (opts.substeps < 1 || opts.stride < 1) throw ValidationError("substeps and stride must be at least 1");
  if (!(opts.cfl > 0.0)) throw ValidationError("CFL factor must be positive");
  if (opts.theta && !(*opts.theta >= 0.0)) throw ValidationError("dissipation theta must be >= 0");
  if (2 * opts.pad + 3 > axis.nodes()) throw ValidationError("boundary band leaves no interior");
  const Grid& g = ff.time;
  const std::size_t n = axis.nodes(), nc = hs.size(), steps = g.steps();
  const double h = axis.spacing(), dt = g.dt() / static_cast<double>(opts.substeps);

  detail::HatSlice slice;
  double theta_max = 0.0;
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t s = 0; s < opts.substeps; ++s) {
      detail::fill_hat_slice(slice, hs, ff, i, g.time(i) + dt * static_cast<double>(s), axis, opts);
      theta_max = std::max(theta_max, *std::max_element(slice.theta.begin(), slice.theta.end()));
    }
  if (theta_max > 0.0 && dt > opts.cfl * h / (2.0 * theta_max)) {
    const double suggested = opts.cfl * h / (2.0 * theta_max);
    const auto sub = static_cast<std::size_t>(std::ceil(g.dt() / suggested));
    throw CflError("CFL violated: dt = " + csv::format_double(dt) + " exceeds " + csv::format_double(suggested) +
                       " (dx = " + csv::format_double(h) + ", theta = " + csv::format_double(theta_max) +
                       "); use dt <= " + csv::format_double(suggested) + ", i.e. substeps >= " + std::to_string(sub),
                   suggested, sub);
  }

  ValueGrid v{g, axis, {}, {}, {}, "hjb", "linear-extrapolation", axis.x(opts.pad), axis.x(n - 1 - opts.pad), {}, {}};
  for (std::size_t i = 0; i <= steps; ++i)
    if (i == 0 || i == steps || i % opts.stride == 0) v.stored.push_back(i);
  v.values.resize(static_cast<Eigen::Index>(v.stored.size()), static_cast<Eigen::Index>(n));
  v.argmax.resize(static_cast<Eigen::Index>(v.stored.size()), static_cast<Eigen::Index>(n));

  Eigen::VectorXd next(static_cast<Eigen::Index>(n)), cur(static_cast<Eigen::Index>(n));
  Eigen::VectorXi arg = Eigen::VectorXi::Constant(static_cast<Eigen::Index>(n), -1);
  for (std::size_t j = 0; j < n; ++j) next[static_cast<Eigen::Index>(j)] = hs.reward().terminal(ff.phi_at(steps, axis.x(j)));
  std::size_t r = v.stored.size() - 1;
  v.values.row(static_cast<Eigen::Index>(r)) = next.transpose();
  v.argmax.row(static_cast<Eigen::Index>(r)) = arg.transpose();

  for (std::size_t i = steps; i-- > 0;) {
    for (std::size_t s = opts.substeps; s-- > 0;) {
      const double t = g.time(i) + dt * static_cast<double>(s);
      detail::fill_hat_slice(slice, hs, ff, i, t, axis, opts);
      parallel_for(
          n - 2,
          [&](std::size_t q) {
            const std::size_t j = q + 1;
            const auto jj = static_cast<Eigen::Index>(j);
            const double pm = (next[jj] - next[jj - 1]) / h, pp = (next[jj + 1] - next[jj]) / h, pc = 0.5 * (pm + pp);
            double best = -std::numeric_limits<double>::infinity();
            std::size_t bc = 0;
            for (std::size_t c = 0; c < nc; ++c) {
              const double val = slice.drift[j * nc + c] * pc + slice.rate[j * nc + c];
              if (val > best) best = val, bc = c;
            }
            // The update is monotone in (v_{j-1}, v_j, v_{j+1}) iff theta >= |dH/dp| and dt theta <= dx.
            const double th = slice.theta[j], speed = std::abs(slice.drift[j * nc + bc]);
            if (speed > th * (1.0 + 1e-12) || dt * th > h * (1.0 + 1e-12))
              throw NumericalError("monotonicity audit failed at t = " + csv::format_double(t) + ", y = " +
                                   csv::format_double(axis.x(j)) + ": dissipation " + csv::format_double(th) +
                                   " below |dH/dp| = " + csv::format_double(speed));
            cur[jj] = next[jj] + dt * (best + 0.5 * th * (pp - pm));
            arg[jj] = static_cast<int>(bc);
          },
          opts.workers);
      const auto last = static_cast<Eigen::Index>(n - 1);
      cur[0] = 2.0 * cur[1] - cur[2];
      cur[last] = 2.0 * cur[last - 1] - cur[last - 2];
      arg[0] = arg[1];
      arg[last] = arg[last - 1];
      std::swap(cur, next);
    }
    if (r > 0 && v.stored[r - 1] == i) {
      --r;
      v.values.row(static_cast<Eigen::Index>(r)) = next.transpose();
      v.argmax.row(static_cast<Eigen::Index>(r)) = arg.transpose();
    }
  }
  return v;
}

/// v(t, x) = v^(t, chi_t(x)) on `axis` at the stored nodes of v^. NaN where chi_t(x) is undefined
/// or falls outside the axis of v^.
inline ValueGrid backmap_value(const ValueGrid& vhat, const FlowField& ff, const UniformAxis& axis, std::size_t workers = 0) {
  if (!(vhat.time == ff.time)) throw ValidationError("value and flow time grids differ");
  ValueGrid v{vhat.time, axis, vhat.stored, {}, {}, "hjb-backmapped", vhat.boundary, vhat.valid_lo, vhat.valid_hi, {}, {}};
  const auto rows = static_cast<Eigen::Index>(vhat.stored.size()), cols = static_cast<Eigen::Index>(axis.nodes());
  v.values.resize(rows, cols);
  v.argmax.resize(rows, cols);
  parallel_for(
      vhat.stored.size(),
      [&](std::size_t r) {
        const auto rr = static_cast<Eigen::Index>(r);
        const auto row = vhat.values.row(rr);
        for (std::size_t j = 0; j < axis.nodes(); ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          const double y = ff.chi_at(vhat.stored[r], axis.x(j));
          if (!std::isfinite(y) || !vhat.axis.contains(y)) {
            v.values(rr, jj) = std::numeric_limits<double>::quiet_NaN();
            v.argmax(rr, jj) = -1;
            continue;
          }
          v.values(rr, jj) = interp::linear(vhat.axis, row, y);
          const auto [cell, w] = vhat.axis.locate(y);
          v.argmax(rr, jj) = vhat.argmax(rr, static_cast<Eigen::Index>(w < 0.5 ? cell : cell + 1));
        }
      },
      workers);
  return v;
}

struct ValueAgreement {
  double sup_abs = 0.0;  ///< sup |v - ref| over the region
  double sup_ref = 0.0;  ///< sup |ref| over the region
  double sup_rel = 0.0;  ///< sup_abs / sup_ref (sup_abs when ref vanishes)
};

/// Compares `other` to `ref` at time t on the nodes of ref's axis inside [lo, hi]; other is read by linear
/// interpolation and must be defined on the whole region.
inline ValueAgreement value_agreement(const ValueGrid& ref, const ValueGrid& other, double t, double lo, double hi) {
  auto node_of = [t](const ValueGrid& v) {
    const double u = t / v.time.dt();
    const auto i = static_cast<std::size_t>(std::llround(u));
    if (std::abs(u - static_cast<double>(i)) > 1e-9 || !v.has(i))
      throw ValidationError("time " + csv::format_double(t) + " is not a stored node of the " + v.provenance + " grid");
    return i;
  };
  const Eigen::VectorXd a = ref.slice(node_of(ref)), b = other.slice(node_of(other));
  ValueAgreement out;
  bool any = false;
  for (std::size_t j = 0; j < ref.axis.nodes(); ++j) {
    const double x = ref.axis.x(j);
    if (x < lo || x > hi) continue;
    if (!other.axis.contains(x)) throw ValidationError("comparison region is not covered by the " + other.provenance + " grid");
    const double u = a[static_cast<Eigen::Index>(j)];
    const double w = other.axis == ref.axis ? b[static_cast<Eigen::Index>(j)] : interp::linear(other.axis, b, x);
    if (!std::isfinite(w) || !std::isfinite(u))
      throw ValidationError("comparison region is not covered at x = " + csv::format_double(x));
    out.sup_abs = std::max(out.sup_abs, std::abs(w - u));
    out.sup_ref = std::max(out.sup_ref, std::abs(u));
    any = true;
  }
  if (!any) throw ValidationError("comparison region contains no grid nodes");
  out.sup_rel = out.sup_ref > 0.0 ? out.sup_abs / out.sup_ref : out.sup_abs;
  return out;
}

/// sup over nodes x in [lo, hi] of |(V(t_{i+1}, x) - V(t_i, x)) / dt + sup_gamma H(t_i, x, gamma, D_x V(t_i, x))|
/// with centered differences; stored nodes i and i + 1 are used.
inline double hjb_residual(const ValueGrid& v, const HamiltonianSpec& hs, std::size_t i, double lo, double hi) {
  const Eigen::VectorXd a = v.slice(i), b = v.slice(i + 1);
  const double h = v.axis.spacing(), dt = v.time.dt(), t = v.time.time(i);
  double worst = 0.0;
  for (std::size_t j = 1; j + 1 < v.axis.nodes(); ++j) {
    const double x = v.axis.x(j);
    if (x < lo || x > hi) continue;
    const auto jj = static_cast<Eigen::Index>(j);
    const double p = (a[jj + 1] - a[jj - 1]) / (2.0 * h);
    worst = std::max(worst, std::abs((b[jj] - a[jj]) / dt + hs.sup(t, x, p).first));
  }
  return worst;
}

struct StudyRow {
  std::size_t n = 0;
  double sup_error = 0.0;
  double runtime_ms = 0.0;  ///< 0 unless timings were requested
};

/// Lift of the piecewise-linear interpolation of the lift's path through the nodes of Grid(T, n),
/// read off on `target`. The lift grid must refine Grid(T, n) and `target`.
inline RoughLift piecewise_linear_lift(const RoughLift& lift, std::size_t n, const Grid& target) {
  const Grid& g = lift.grid();
  const Grid coarse(g.horizon(), n);
  const std::size_t f = g.refinement_factor(coarse);
  const Eigen::MatrixXd& z = lift.path().values();
  Eigen::MatrixXd pl(z.rows(), z.cols());
  for (std::size_t i = 0; i <= g.steps(); ++i) {
    const std::size_t k = std::min(i / f, n - 1);
    const double w = static_cast<double>(i - k * f) / static_cast<double>(f);
    pl.row(static_cast<Eigen::Index>(i)) =
        (1.0 - w) * z.row(static_cast<Eigen::Index>(k * f)) + w * z.row(static_cast<Eigen::Index>((k + 1) * f));
  }
  return lift_smooth(GridPath(g, std::move(pl)), target, lift.alpha());
}

/// For each n, V^n = value_dp driven by the piecewise-linear interpolation of the lift on n intervals, and
/// sup |V^n - V| over `slices` + 1 equally spaced time nodes and the axis nodes in [lo, hi]; V is driven by the lift.
inline std::vector<StudyRow> smooth_approx_study(const RewardSpec& spec, const ControlSet& k, const CoefficientField& cf,
                                                 const RoughLift& lift, const UniformAxis& axis, const Grid& time_grid,
                                                 const std::vector<std::size_t>& n_list, double lo, double hi,
                                                 const DpOptions& opts = {}, std::size_t slices = 16, bool timings = false) {
  if (slices < 1 || time_grid.steps() % slices != 0) throw ValidationError("slice count must divide the DP time steps");
  DpOptions o = opts;
  o.stride = time_grid.steps() / slices;
  const ValueGrid ref = value_dp(spec, k, cf, lift, axis, time_grid, o);
  std::vector<StudyRow> rows;
  for (std::size_t n : n_list) {
    const auto start = std::chrono::steady_clock::now();
    const ValueGrid vn = value_dp(spec, k, cf, piecewise_linear_lift(lift, n, time_grid), axis, time_grid, o);
    const auto stop = std::chrono::steady_clock::now();
    StudyRow row{n, 0.0, 0.0};
    for (std::size_t node : ref.stored) row.sup_error = std::max(row.sup_error, value_agreement(ref, vn, time_grid.time(node), lo, hi).sup_abs);
    if (timings) row.runtime_ms = std::chrono::duration<double, std::milli>(stop - start).count();
    rows.push_back(row);
  }
  return rows;
}

/// Mean of the study tables over several driver samples (runtimes are summed).
inline std::vector<StudyRow> smooth_approx_study(const RewardSpec& spec, const ControlSet& k, const CoefficientField& cf,
                                                 const std::vector<RoughLift>& lifts, const UniformAxis& axis,
                                                 const Grid& time_grid, const std::vector<std::size_t>& n_list, double lo,
                                                 double hi, const DpOptions& opts = {}, std::size_t slices = 16,
                                                 bool timings = false) {
  if (lifts.empty()) throw ValidationError("study needs at least one driver sample");
  std::vector<StudyRow> mean;
  for (const auto& lift : lifts) {
    const auto rows = smooth_approx_study(spec, k, cf, lift, axis, time_grid, n_list, lo, hi, opts, slices, timings);
    if (mean.empty()) {
      mean = rows;
      for (auto& r : mean) r.sup_error = 0.0;
    } else {
      for (std::size_t i = 0; i < rows.size(); ++i) mean[i].runtime_ms += rows[i].runtime_ms;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) mean[i].sup_error += rows[i].sup_error / static_cast<double>(lifts.size());
  }
  return mean;
}

/// True when the errors never increase once they have decreased for the first time.
inline bool nonincreasing_after_first_decrease(const std::vector<StudyRow>& rows) {
  std::size_t i = 1;
  while (i < rows.size() && rows[i].sup_error >= rows[i - 1].sup_error) ++i;
  for (++i; i < rows.size(); ++i)
    if (rows[i].sup_error > rows[i - 1].sup_error) return false;
  return true;
}

inline void write_study_csv(const std::vector<StudyRow>& rows, const std::string& file) {
  csv::Writer w(file, {"n", "sup_error", "runtime_ms"});
  for (const auto& r : rows) w.row({static_cast<double>(r.n), r.sup_error, r.runtime_ms});
}

}  // namespace roughctl

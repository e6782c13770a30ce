#pragma once

#include "roughctl/grid.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/legendre.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace roughctl {

/// Finite mixture of Dirac masses on the control interval.
struct DiscreteMeasure {
  std::vector<double> atoms;
  std::vector<double> weights;

  static DiscreteMeasure dirac(double a) { return {{a}, {1.0}}; }

  static DiscreteMeasure uniform(std::vector<double> atoms) {
    std::vector<double> w(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
    return {std::move(atoms), std::move(w)};
  }
};

/// Normal law N(mean, stddev^2), optionally conditioned to [lo, hi].
struct GaussianMeasure {
  double mean = 0.0;
  double stddev = 1.0;
  std::optional<std::pair<double, double>> truncation;
};

/// Absolutely continuous law given by a density on [lo, hi].
struct DensityMeasure {
  std::function<double(double)> pdf;
  double lo = 0.0;
  double hi = 1.0;

  static DensityMeasure uniform(double lo, double hi) {
    const double h = 1.0 / (hi - lo);
    return {[h](double) { return h; }, lo, hi};
  }
};

using Measure = std::variant<DiscreteMeasure, GaussianMeasure, DensityMeasure>;

/// Compact control interval U.
struct ControlInterval {
  double lo = -1.0;
  double hi = 1.0;
  bool contains(double a) const { return a >= lo - 1e-12 && a <= hi + 1e-12; }
};

inline void validate(const Measure& m, std::optional<ControlInterval> u = std::nullopt) {
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DiscreteMeasure>) {
          if (v.atoms.empty() || v.atoms.size() != v.weights.size())
            throw ValidationError("discrete measure needs matching atoms and weights");
          double total = 0.0;
          for (std::size_t i = 0; i < v.atoms.size(); ++i) {
            if (!(v.weights[i] >= 0.0) || !std::isfinite(v.atoms[i])) throw ValidationError("invalid atom or weight");
            if (u && !u->contains(v.atoms[i])) throw ValidationError("atom outside the control interval");
            total += v.weights[i];
          }
          if (std::abs(total - 1.0) > 1e-12) throw ValidationError("weights must sum to 1");
        } else if constexpr (std::is_same_v<T, GaussianMeasure>) {
          if (!(v.stddev > 0.0)) throw ValidationError("Gaussian stddev must be positive");
          if (v.truncation && !(v.truncation->second > v.truncation->first))
            throw ValidationError("empty truncation interval");
          if (u && !v.truncation) throw ValidationError("Gaussian control must be truncated to U");
        } else {
          if (!v.pdf || !(v.hi > v.lo)) throw ValidationError("density measure needs a pdf on a nonempty interval");
          if (u && (!u->contains(v.lo) || !u->contains(v.hi))) throw ValidationError("density support outside U");
        }
      },
      m);
}

namespace detail {

struct LegendreRule {
  std::vector<double> nodes, weights;
};

/// Gauss-Legendre rule on [-1, 1] with `order` points.
inline const LegendreRule& legendre_rule(unsigned order) {
  static std::mutex mu;
  static std::map<unsigned, LegendreRule> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(order);
  if (it != cache.end()) return it->second;
  LegendreRule rule;
  for (double z : boost::math::legendre_p_zeros<double>(static_cast<int>(order))) {
    const double dp = boost::math::legendre_p_prime<double>(static_cast<int>(order), z);
    const double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.nodes.push_back(z);
    rule.weights.push_back(w);
    if (z != 0.0) {
      rule.nodes.push_back(-z);
      rule.weights.push_back(w);
    }
  }
  return cache.emplace(order, std::move(rule)).first->second;
}

inline double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }
inline double big_phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Support interval used for quadrature of a Gaussian.
inline std::pair<double, double> gaussian_support(const GaussianMeasure& g) {
  if (g.truncation) return *g.truncation;
  return {g.mean - 12.0 * g.stddev, g.mean + 12.0 * g.stddev};
}

inline double gaussian_mass(const GaussianMeasure& g) {
  if (!g.truncation) return 1.0;
  return big_phi((g.truncation->second - g.mean) / g.stddev) - big_phi((g.truncation->first - g.mean) / g.stddev);
}

inline double gaussian_pdf(const GaussianMeasure& g, double x) {
  if (g.truncation && (x < g.truncation->first || x > g.truncation->second)) return 0.0;
  return phi((x - g.mean) / g.stddev) / (g.stddev * gaussian_mass(g));
}

}  // namespace detail

/// Nodes and weights realizing int f dm: the atoms for discrete measures,
/// Gauss-Legendre with `order` points on the support (weights times density) otherwise.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline QuadratureRule quadrature_rule(const Measure& m, unsigned order = 32) {
  return std::visit(
      [&](const auto& v) -> QuadratureRule {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DiscreteMeasure>) {
          validate(m);
          return {v.atoms, v.weights};
        } else {
          double lo, hi;
          std::function<double(double)> pdf;
          if constexpr (std::is_same_v<T, GaussianMeasure>) {
            std::tie(lo, hi) = detail::gaussian_support(v);
            pdf = [&v](double x) { return detail::gaussian_pdf(v, x); };
          } else {
            lo = v.lo;
            hi = v.hi;
            pdf = v.pdf;
          }
          const auto& rule = detail::legendre_rule(order);
          const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
          QuadratureRule out;
          for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double x = mid + half * rule.nodes[i];
            out.nodes.push_back(x);
            out.weights.push_back(half * rule.weights[i] * pdf(x));
          }
          return out;
        }
      },
      m);
}

/// int f dm through quadrature_rule.
template <class F>
double expectation(const Measure& m, F&& f, unsigned order = 32) {
  const QuadratureRule rule = quadrature_rule(m, order);
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * f(rule.nodes[i]);
  return acc;
}

/// Quantile function u -> F^{-1}(u) on (0, 1).
inline std::function<double(double)> quantile_function(const Measure& m) {
  return std::visit(
      [](const auto& v) -> std::function<double(double)> {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DiscreteMeasure>) {
          std::vector<std::size_t> idx(v.atoms.size());
          std::iota(idx.begin(), idx.end(), 0);
          std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v.atoms[a] < v.atoms[b]; });
          std::vector<double> atoms, cum;
          double c = 0.0;
          for (auto i : idx) {
            c += v.weights[i];
            atoms.push_back(v.atoms[i]);
            cum.push_back(c);
          }
          return [atoms, cum](double u) {
            const auto it = std::lower_bound(cum.begin(), cum.end(), u);
            return atoms[std::min<std::size_t>(static_cast<std::size_t>(it - cum.begin()), atoms.size() - 1)];
          };
        } else if constexpr (std::is_same_v<T, GaussianMeasure>) {
          const boost::math::normal_distribution<double> nd(v.mean, v.stddev);
          if (!v.truncation) return [nd](double u) { return boost::math::quantile(nd, u); };
          const double a = boost::math::cdf(nd, v.truncation->first);
          const double b = boost::math::cdf(nd, v.truncation->second);
          return [nd, a, b](double u) { return boost::math::quantile(nd, a + u * (b - a)); };
        } else {
          // Tabulated CDF on a fine uniform grid, inverted by linear interpolation.
          constexpr std::size_t n = 4096;
          std::vector<double> xs(n + 1), cdf(n + 1, 0.0);
          const double h = (v.hi - v.lo) / n;
          for (std::size_t i = 0; i <= n; ++i) xs[i] = v.lo + h * static_cast<double>(i);
          for (std::size_t i = 1; i <= n; ++i)
            cdf[i] = cdf[i - 1] + boost::math::quadrature::gauss_kronrod<double, 15>::integrate(v.pdf, xs[i - 1], xs[i]);
          for (auto& c : cdf) c /= cdf.back();
          return [xs, cdf](double u) {
            const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
            const std::size_t j = std::clamp<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), 1, xs.size() - 1);
            const double w = (u - cdf[j - 1]) / std::max(cdf[j] - cdf[j - 1], 1e-300);
            return xs[j - 1] + w * (xs[j] - xs[j - 1]);
          };
        }
      },
      m);
}

namespace detail {

/// Sorted atoms and cumulative weights.
inline std::pair<std::vector<double>, std::vector<double>> sorted_cdf(const DiscreteMeasure& v) {
  std::vector<std::size_t> idx(v.atoms.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v.atoms[a] < v.atoms[b]; });
  std::vector<double> atoms, cum;
  double c = 0.0;
  for (auto i : idx) {
    c += v.weights[i];
    atoms.push_back(v.atoms[i]);
    cum.push_back(c);
  }
  cum.back() = 1.0;
  return {atoms, cum};
}

inline std::vector<double> breakpoints(const Measure& m) {
  if (const auto* d = std::get_if<DiscreteMeasure>(&m)) return sorted_cdf(*d).second;
  return {};
}

}  // namespace detail

/// Exact 1-D W2 through the quantile coupling.
/// Discrete pairs use sorted transport; anything else integrates (Q1 - Q2)^2 over (0, 1)
/// piece by piece between the discrete breakpoints with tanh-sinh quadrature.
inline double wasserstein2(const Measure& m1, const Measure& m2) {
  const auto* d1 = std::get_if<DiscreteMeasure>(&m1);
  const auto* d2 = std::get_if<DiscreteMeasure>(&m2);
  if (d1 && d2) {
    const auto [a1, c1] = detail::sorted_cdf(*d1);
    const auto [a2, c2] = detail::sorted_cdf(*d2);
    std::size_t i = 0, j = 0;
    double prev = 0.0, acc = 0.0;
    while (i < a1.size() && j < a2.size()) {
      const double next = std::min(c1[i], c2[j]);
      const double diff = a1[i] - a2[j];
      acc += (next - prev) * diff * diff;
      prev = next;
      if (c1[i] == next) ++i;
      if (j < c2.size() && c2[j] == next) ++j;
    }
    return std::sqrt(std::max(acc, 0.0));
  }
  const auto q1 = quantile_function(m1);
  const auto q2 = quantile_function(m2);
  std::vector<double> cuts{0.0, 1.0};
  for (double b : detail::breakpoints(m1)) cuts.push_back(b);
  for (double b : detail::breakpoints(m2)) cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  boost::math::quadrature::tanh_sinh<double> integrator;
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    if (cuts[k + 1] - cuts[k] < 1e-15) continue;
    const double lo = cuts[k], hi = cuts[k + 1];
    auto f = [&](double u) {
      const double diff = q1(u) - q2(u);
      return diff * diff;
    };
    acc += integrator.integrate(f, lo, hi);
  }
  return std::sqrt(std::max(acc, 0.0));
}

/// Differential entropy -int m log m. Discrete measures have none and are rejected.
inline double entropy(const Measure& m) {
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DiscreteMeasure>) {
          throw ValidationError("differential entropy is undefined for a discrete measure");
        } else if constexpr (std::is_same_v<T, GaussianMeasure>) {
          const double base = 0.5 * std::log(2.0 * M_PI * M_E * v.stddev * v.stddev);
          if (!v.truncation) return base;
          const double a = (v.truncation->first - v.mean) / v.stddev;
          const double b = (v.truncation->second - v.mean) / v.stddev;
          const double z = detail::big_phi(b) - detail::big_phi(a);
          return base + std::log(z) + (a * detail::phi(a) - b * detail::phi(b)) / (2.0 * z);
        } else {
          auto integrand = [&v](double x) {
            const double p = v.pdf(x);
            return p > 0.0 ? -p * std::log(p) : 0.0;
          };
          return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, v.lo, v.hi, 15, 1e-13);
        }
      },
      m);
}

/// Differential entropy by adaptive quadrature of -p log p, whatever the representation.
inline double entropy_by_quadrature(const Measure& m) {
  if (const auto* g = std::get_if<GaussianMeasure>(&m)) {
    const auto [lo, hi] = detail::gaussian_support(*g);
    auto integrand = [g](double x) {
      const double p = detail::gaussian_pdf(*g, x);
      return p > 0.0 ? -p * std::log(p) : 0.0;
    };
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, lo, hi, 20, 1e-14);
  }
  return entropy(m);
}

inline double mean(const Measure& m) {
  return expectation(m, [](double a) { return a; });
}
inline double second_moment(const Measure& m) {
  return expectation(m, [](double a) { return a * a; });
}

/// Time-indexed measures, piecewise constant: gamma(t) = measures[i] on [t_i, t_{i+1}).
struct MeasurePath {
  Grid grid;
  std::vector<Measure> measures;  ///< one per node
  std::optional<std::pair<double, double>> holder;  ///< (eps, L) when constrained

  MeasurePath(Grid g, std::vector<Measure> m, std::optional<std::pair<double, double>> h = std::nullopt)
      : grid(g), measures(std::move(m)), holder(h) {
    if (measures.size() != grid.nodes()) throw ValidationError("measure path needs one measure per node");
  }

  static MeasurePath constant(const Grid& g, const Measure& m) { return MeasurePath(g, std::vector<Measure>(g.nodes(), m)); }

  const Measure& at(std::size_t i) const { return measures[i]; }

  /// Measure in force on fine interval [t_i, t_{i+1}) of a grid refining this one.
  const Measure& on_fine(const Grid& fine, std::size_t i) const {
    return measures[i / fine.refinement_factor(grid)];
  }

  /// Largest W2(gamma_s, gamma_t) / (L |t - s|^eps) over grid pairs; > 1 means the constraint is violated.
  double holder_violation() const {
    if (!holder) return 0.0;
    double worst = 0.0;
    for (std::size_t s = 0; s < grid.nodes(); ++s)
      for (std::size_t t = s + 1; t < grid.nodes(); ++t) {
        const double w = wasserstein2(measures[s], measures[t]);
        if (w == 0.0) continue;
        worst = std::max(worst, w / (holder->second * std::pow(grid.time(t) - grid.time(s), holder->first)));
      }
    return worst;
  }
};

/// sup over nodes of W2(gamma1_t, gamma2_t).
inline double dhat(const MeasurePath& g1, const MeasurePath& g2) {
  if (!(g1.grid == g2.grid)) throw ValidationError("measure paths live on different grids");
  double out = 0.0;
  for (std::size_t i = 0; i < g1.grid.nodes(); ++i) out = std::max(out, wasserstein2(g1.at(i), g2.at(i)));
  return out;
}

/// Finite family of admissible measures.
struct ControlSet {
  std::vector<Measure> members;
  std::vector<std::string> labels;

  ControlSet(std::vector<Measure> m, std::optional<ControlInterval> u = std::nullopt) : members(std::move(m)) {
    if (members.empty()) throw ValidationError("control set must be nonempty");
    for (const auto& x : members) validate(x, u);
  }

  /// Diracs at `count` equally spaced points of [lo, hi].
  static ControlSet dirac_grid(double lo, double hi, std::size_t count) {
    if (count < 1 || !(hi >= lo)) throw ValidationError("invalid Dirac grid");
    std::vector<Measure> m;
    for (std::size_t i = 0; i < count; ++i)
      m.push_back(DiscreteMeasure::dirac(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1)));
    return ControlSet(std::move(m), ControlInterval{lo, hi});
  }

  std::size_t size() const { return members.size(); }
  const Measure& operator[](std::size_t i) const { return members[i]; }
};

}  // namespace roughctl

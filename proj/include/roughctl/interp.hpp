#pragma once

#include "roughctl/grid.hpp"

#include <algorithm>
#include <cmath>

namespace roughctl {

/// Uniform 1-D spatial axis x_j = lo + j h, j = 0..nodes-1.
class UniformAxis {
 public:
  UniformAxis(double lo, double hi, std::size_t nodes) : lo_(lo), hi_(hi), nodes_(nodes) {
    if (!(hi > lo)) throw ValidationError("axis needs lo < hi");
    if (nodes < 4) throw ValidationError("axis needs at least 4 nodes");
    h_ = (hi - lo) / static_cast<double>(nodes - 1);
  }

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  std::size_t nodes() const { return nodes_; }
  double spacing() const { return h_; }
  double x(std::size_t j) const { return j + 1 == nodes_ ? hi_ : lo_ + h_ * static_cast<double>(j); }
  bool contains(double x) const { return x >= lo_ - 1e-12 * h_ && x <= hi_ + 1e-12 * h_; }

  /// Cell index j with x in [x_j, x_{j+1}] (clamped) and the offset (x - x_j)/h, unclamped.
  std::pair<std::size_t, double> locate(double x) const {
    const double u = (x - lo_) / h_;
    const double cell = std::clamp(std::floor(u), 0.0, static_cast<double>(nodes_ - 2));
    return {static_cast<std::size_t>(cell), u - cell};
  }

  bool operator==(const UniformAxis& o) const { return lo_ == o.lo_ && hi_ == o.hi_ && nodes_ == o.nodes_; }

 private:
  double lo_, hi_;
  std::size_t nodes_;
  double h_;
};

namespace interp {

/// Piecewise-linear interpolation; constant beyond the ends (monotone).
template <class Vec>
double linear(const UniformAxis& ax, const Vec& v, double x) {
  if (x <= ax.lo()) return v[0];
  if (x >= ax.hi()) return v[static_cast<Eigen::Index>(ax.nodes() - 1)];
  const auto [j, w] = ax.locate(x);
  const auto i = static_cast<Eigen::Index>(j);
  return (1.0 - w) * v[i] + w * v[i + 1];
}

/// Piecewise-linear interpolation with linear extrapolation from the end cells.
template <class Vec>
double linear_extrapolated(const UniformAxis& ax, const Vec& v, double x) {
  const auto [j, w] = ax.locate(x);
  const auto i = static_cast<Eigen::Index>(j);
  return (1.0 - w) * v[i] + w * v[i + 1];
}

/// Four-point Lagrange interpolation (exact for cubics); stencil shifted inward at the ends.
template <class Vec>
double cubic(const UniformAxis& ax, const Vec& v, double x) {
  const auto n = static_cast<std::ptrdiff_t>(ax.nodes());
  const double u = (x - ax.lo()) / ax.spacing();
  const auto base = static_cast<std::ptrdiff_t>(std::clamp(std::floor(u) - 1.0, 0.0, static_cast<double>(n - 4)));
  const double s = u - static_cast<double>(base);
  const double f0 = v[base], f1 = v[base + 1], f2 = v[base + 2], f3 = v[base + 3];
  return -f0 * (s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0 + f1 * s * (s - 2.0) * (s - 3.0) / 2.0 -
         f2 * s * (s - 1.0) * (s - 3.0) / 2.0 + f3 * s * (s - 1.0) * (s - 2.0) / 6.0;
}

/// Cubic Hermite interpolation from node values and node slopes.
template <class Vec>
double hermite(const UniformAxis& ax, const Vec& v, const Vec& slope, double x) {
  const auto [j, w] = ax.locate(x);
  const auto i = static_cast<Eigen::Index>(j);
  const double h = ax.spacing();
  const double w2 = w * w, w3 = w2 * w;
  return (2 * w3 - 3 * w2 + 1) * v[i] + (w3 - 2 * w2 + w) * h * slope[i] + (-2 * w3 + 3 * w2) * v[i + 1] +
         (w3 - w2) * h * slope[i + 1];
}

/// Derivative of the cubic Hermite interpolant.
template <class Vec>
double hermite_derivative(const UniformAxis& ax, const Vec& v, const Vec& slope, double x) {
  const auto [j, w] = ax.locate(x);
  const auto i = static_cast<Eigen::Index>(j);
  const double h = ax.spacing();
  const double w2 = w * w;
  return ((6 * w2 - 6 * w) * v[i] + (-6 * w2 + 6 * w) * v[i + 1]) / h + (3 * w2 - 4 * w + 1) * slope[i] +
         (3 * w2 - 2 * w) * slope[i + 1];
}

/// Centered first differences; second-order one-sided stencils at the two ends.
inline Eigen::VectorXd derivative(const UniformAxis& ax, const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  const double h = ax.spacing();
  Eigen::VectorXd d(n);
  for (Eigen::Index j = 1; j + 1 < n; ++j) d[j] = (v[j + 1] - v[j - 1]) / (2 * h);
  d[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h);
  d[n - 1] = (3 * v[n - 1] - 4 * v[n - 2] + v[n - 3]) / (2 * h);
  return d;
}

/// Centered second differences; ends copy their neighbours.
inline Eigen::VectorXd second_derivative(const UniformAxis& ax, const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  const double h2 = ax.spacing() * ax.spacing();
  Eigen::VectorXd d(n);
  for (Eigen::Index j = 1; j + 1 < n; ++j) d[j] = (v[j + 1] - 2 * v[j] + v[j - 1]) / h2;
  d[0] = d[1];
  d[n - 1] = d[n - 2];
  return d;
}

}  // namespace interp
}  // namespace roughctl

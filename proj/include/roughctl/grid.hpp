#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace roughctl {

/// Raised when inputs violate a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN/overflow or leaves its domain.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Uniform time grid t_i = i T / N on [0, T].
class Grid {
 public:
  Grid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw ValidationError("grid horizon must be positive and finite");
    if (steps < 2) throw ValidationError("grid needs at least 2 steps");
  }

  double horizon() const { return horizon_; }
  std::size_t steps() const { return steps_; }
  std::size_t nodes() const { return steps_ + 1; }
  double dt() const { return horizon_ / static_cast<double>(steps_); }
  double time(std::size_t i) const {
    return i == steps_ ? horizon_ : horizon_ * static_cast<double>(i) / static_cast<double>(steps_);
  }

  /// True when every node of `coarse` is a node of this grid.
  bool refines(const Grid& coarse) const {
    return std::abs(horizon_ - coarse.horizon_) <= 1e-12 * horizon_ && steps_ % coarse.steps_ == 0;
  }
  std::size_t refinement_factor(const Grid& coarse) const {
    if (!refines(coarse)) throw ValidationError("grids are not nested");
    return steps_ / coarse.steps_;
  }

  bool operator==(const Grid& o) const {
    return steps_ == o.steps_ && std::abs(horizon_ - o.horizon_) <= 1e-12 * horizon_;
  }

 private:
  double horizon_;
  std::size_t steps_;
};

/// Vector-valued path sampled at every node of a Grid; row i holds the value at t_i.
class GridPath {
 public:
  GridPath(Grid grid, Eigen::MatrixXd values) : grid_(grid), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.rows()) != grid_.nodes())
      throw ValidationError("path needs one value per grid node");
    if (values_.cols() < 1) throw ValidationError("path dimension must be at least 1");
    if (!values_.allFinite()) throw ValidationError("path values must be finite");
  }

  const Grid& grid() const { return grid_; }
  std::size_t dim() const { return static_cast<std::size_t>(values_.cols()); }
  const Eigen::MatrixXd& values() const { return values_; }
  Eigen::VectorXd at(std::size_t i) const { return values_.row(static_cast<Eigen::Index>(i)).transpose(); }
  Eigen::VectorXd increment(std::size_t s, std::size_t t) const { return at(t) - at(s); }

  /// Samples every `factor`-th node onto the coarser grid.
  GridPath subsample(const Grid& coarse) const {
    const std::size_t f = grid_.refinement_factor(coarse);
    Eigen::MatrixXd v(coarse.nodes(), values_.cols());
    for (std::size_t i = 0; i < coarse.nodes(); ++i)
      v.row(static_cast<Eigen::Index>(i)) = values_.row(static_cast<Eigen::Index>(i * f));
    return GridPath(coarse, std::move(v));
  }

 private:
  Grid grid_;
  Eigen::MatrixXd values_;
};

template <class F>
GridPath sample_path(const Grid& grid, std::size_t dim, F&& f) {
  Eigen::MatrixXd v(grid.nodes(), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < grid.nodes(); ++i)
    v.row(static_cast<Eigen::Index>(i)) = f(grid.time(i)).transpose();
  return GridPath(grid, std::move(v));
}

}  // namespace roughctl

#pragma once

#include "roughctl/csv.hpp"
#include "roughctl/increments.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace roughctl {

/// A geometric level-2 rough path on a uniform grid.
///
/// Areas follow the convention area(s,t)^{ij} = int_s^t (zeta^i_r - zeta^i_s) dzeta^j_r,
/// so Chen's relation reads area(s,t) = area(s,u) + area(u,t) + dzeta_su (x) dzeta_ut.
/// Only adjacent-interval areas are stored; other pairs are rebuilt with Chen.
class RoughLift {
 public:
  /// `areas` holds one flattened d x d matrix per interval (row-major, N rows).
  RoughLift(GridPath path, Eigen::MatrixXd areas, double alpha)
      : path_(std::move(path)), areas_(std::move(areas)), alpha_(alpha) {
    const auto d = static_cast<Eigen::Index>(path_.dim());
    if (!(alpha > 1.0 / 3.0) || alpha > 1.0) throw ValidationError("lift exponent must lie in (1/3, 1]");
    if (path_.at(0).cwiseAbs().maxCoeff() > 1e-14) throw ValidationError("lift must start at zero");
    if (areas_.rows() != static_cast<Eigen::Index>(path_.grid().steps()) || areas_.cols() != d * d)
      throw ValidationError("lift needs one d x d area per interval");
    if (!areas_.allFinite()) throw ValidationError("lift areas must be finite");
    norm_ = compute_norm();
  }

  const Grid& grid() const { return path_.grid(); }
  std::size_t dim() const { return path_.dim(); }
  double alpha() const { return alpha_; }
  const GridPath& path() const { return path_; }
  const Eigen::MatrixXd& adjacent_areas() const { return areas_; }

  Eigen::VectorXd increment(std::size_t s, std::size_t t) const { return path_.increment(s, t); }

  /// Scalar increment of component k over [s, t].
  double increment(std::size_t s, std::size_t t, std::size_t k) const {
    const auto& v = path_.values();
    return v(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) -
           v(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
  }

  Eigen::MatrixXd adjacent_area(std::size_t i) const {
    const auto d = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd a(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) a(r, c) = areas_(static_cast<Eigen::Index>(i), r * d + c);
    return a;
  }

  /// Cached ||zeta||_alpha + ||zeta^2||_{2 alpha} on dyadic pairs.
  double norm() const { return norm_; }

  /// Same rough path seen on a coarser nested grid.
  RoughLift restrict_to(const Grid& coarse) const;

 private:
  double compute_norm() const;

  GridPath path_;
  Eigen::MatrixXd areas_;
  double alpha_;
  double norm_ = 0.0;
};

/// area(t_i, t_j), assembled left to right with Chen's relation.
inline Eigen::MatrixXd area_between(const RoughLift& lift, std::size_t i, std::size_t j) {
  if (i >= j) throw ValidationError("area_between needs i < j");
  if (j > lift.grid().steps()) throw ValidationError("area_between index out of range");
  Eigen::MatrixXd a = lift.adjacent_area(i);
  for (std::size_t u = i + 1; u < j; ++u)
    a += lift.adjacent_area(u) + lift.increment(i, u) * lift.increment(u, u + 1).transpose();
  return a;
}

/// The area as a flattened (row-major) 1-increment of dimension d*d.
inline Increment2 area_increment(std::shared_ptr<const RoughLift> lift) {
  const std::size_t d = lift->dim();
  return Increment2(lift->grid(), d * d, [lift, d](std::size_t s, std::size_t t) {
    const Eigen::MatrixXd a = area_between(*lift, s, t);
    Eigen::VectorXd flat(static_cast<Eigen::Index>(d * d));
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c)
        flat(static_cast<Eigen::Index>(r * d + c)) = a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    return flat;
  });
}

inline RoughLift RoughLift::restrict_to(const Grid& coarse) const {
  const std::size_t f = grid().refinement_factor(coarse);
  const auto d = static_cast<Eigen::Index>(dim());
  Eigen::MatrixXd areas(static_cast<Eigen::Index>(coarse.steps()), d * d);
  for (std::size_t i = 0; i < coarse.steps(); ++i) {
    const Eigen::MatrixXd a = area_between(*this, i * f, (i + 1) * f);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) areas(static_cast<Eigen::Index>(i), r * d + c) = a(r, c);
  }
  return RoughLift(path_.subsample(coarse), std::move(areas), alpha_);
}

inline double RoughLift::compute_norm() const {
  const Grid& g = grid();
  const std::size_t n = g.steps();
  const auto d = static_cast<Eigen::Index>(dim());
  const double path_part = holder_norm(path_, alpha_);
  // Level-by-level Chen merge over pairs (i, i + 2^k).
  Eigen::MatrixXd level = areas_;
  double area_part = 0.0;
  for (std::size_t len = 1;; len *= 2) {
    const double scale = std::pow(static_cast<double>(len) * g.dt(), 2.0 * alpha_);
    for (Eigen::Index i = 0; i < level.rows(); ++i) area_part = std::max(area_part, level.row(i).norm() / scale);
    if (2 * len > n) break;
    const std::size_t count = n - 2 * len + 1;
    Eigen::MatrixXd next(static_cast<Eigen::Index>(count), d * d);
    for (std::size_t i = 0; i < count; ++i) {
      const Eigen::VectorXd a = increment(i, i + len);
      const Eigen::VectorXd b = increment(i + len, i + 2 * len);
      for (Eigen::Index r = 0; r < d; ++r)
        for (Eigen::Index c = 0; c < d; ++c)
          next(static_cast<Eigen::Index>(i), r * d + c) = level(static_cast<Eigen::Index>(i), r * d + c) +
                                                          level(static_cast<Eigen::Index>(i + len), r * d + c) +
                                                          a(r) * b(c);
    }
    level = std::move(next);
  }
  return path_part + area_part;
}

/// Canonical lift of the piecewise-linear interpolant of `fine`, read off on `coarse`.
/// Each linear fine segment contributes area 1/2 dzeta (x) dzeta; segments are chained with Chen.
/// A path that does not start at zero is shifted first.
inline RoughLift lift_smooth(const GridPath& fine, const Grid& coarse, double alpha = 1.0) {
  const std::size_t f = fine.grid().refinement_factor(coarse);
  const auto d = static_cast<Eigen::Index>(fine.dim());
  Eigen::MatrixXd shifted = fine.values().rowwise() - fine.values().row(0);
  Eigen::MatrixXd areas = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(coarse.steps()), d * d);
  Eigen::MatrixXd acc(d, d);
  for (std::size_t i = 0; i < coarse.steps(); ++i) {
    acc.setZero();
    const Eigen::VectorXd start = shifted.row(static_cast<Eigen::Index>(i * f)).transpose();
    for (std::size_t q = i * f; q < (i + 1) * f; ++q) {
      const Eigen::VectorXd u = shifted.row(static_cast<Eigen::Index>(q)).transpose();
      const Eigen::VectorXd step = shifted.row(static_cast<Eigen::Index>(q + 1)).transpose() - u;
      acc += (u - start) * step.transpose() + 0.5 * step * step.transpose();
    }
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < d; ++c) areas(static_cast<Eigen::Index>(i), r * d + c) = acc(r, c);
  }
  GridPath shifted_path(fine.grid(), std::move(shifted));
  return RoughLift(shifted_path.subsample(coarse), std::move(areas), alpha);
}

/// Writes `t,zeta_1..zeta_d` and `s,t,area_11..area_dd` (one row per adjacent interval).
inline void write_lift_csv(const RoughLift& lift, const std::string& path_file, const std::string& area_file) {
  const std::size_t d = lift.dim();
  std::vector<std::string> header{"t"};
  for (std::size_t k = 1; k <= d; ++k) header.push_back("zeta_" + std::to_string(k));
  csv::Writer pw(path_file, header);
  for (std::size_t i = 0; i < lift.grid().nodes(); ++i) {
    std::vector<double> row{lift.grid().time(i)};
    for (std::size_t k = 0; k < d; ++k)
      row.push_back(lift.path().values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    pw.row(row);
  }
  std::vector<std::string> aheader{"s", "t"};
  for (std::size_t r = 1; r <= d; ++r)
    for (std::size_t c = 1; c <= d; ++c) aheader.push_back("area_" + std::to_string(r) + std::to_string(c));
  csv::Writer aw(area_file, aheader);
  for (std::size_t i = 0; i < lift.grid().steps(); ++i) {
    std::vector<double> row{lift.grid().time(i), lift.grid().time(i + 1)};
    for (Eigen::Index c = 0; c < lift.adjacent_areas().cols(); ++c)
      row.push_back(lift.adjacent_areas()(static_cast<Eigen::Index>(i), c));
    aw.row(row);
  }
}

inline RoughLift read_lift_csv(const std::string& path_file, const std::string& area_file, double alpha) {
  const csv::Table pt = csv::read(path_file);
  const csv::Table at = csv::read(area_file);
  if (pt.rows.size() < 3) throw ValidationError("lift file needs at least 3 nodes");
  const std::size_t d = pt.header.size() - 1;
  const Grid grid(pt.rows.back()[0], pt.rows.size() - 1);
  if (at.rows.size() != grid.steps() || at.header.size() != 2 + d * d)
    throw ValidationError("area file does not match path file");
  Eigen::MatrixXd v(static_cast<Eigen::Index>(grid.nodes()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < grid.nodes(); ++i)
    for (std::size_t k = 0; k < d; ++k) v(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = pt.rows[i][k + 1];
  Eigen::MatrixXd a(static_cast<Eigen::Index>(grid.steps()), static_cast<Eigen::Index>(d * d));
  for (std::size_t i = 0; i < grid.steps(); ++i)
    for (std::size_t c = 0; c < d * d; ++c) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = at.rows[i][c + 2];
  return RoughLift(GridPath(grid, std::move(v)), std::move(a), alpha);
}

/// Largest |area(s,t) - area(s,u) - area(u,t) - dzeta_su (x) dzeta_ut| over dyadic triples.
inline double chen_defect(const RoughLift& lift) {
  const std::size_t n = lift.grid().nodes();
  double worst = 0.0;
  detail::for_each_pair(n, HolderMode::dyadic, [&](std::size_t s, std::size_t t) {
    if (t - s < 2 || t - s > 64) return;
    const Eigen::MatrixXd full = area_between(lift, s, t);
    for (std::size_t u = s + 1; u < t; u += std::max<std::size_t>(1, (t - s) / 4)) {
      const Eigen::MatrixXd defect = full - area_between(lift, s, u) - area_between(lift, u, t) -
                                     lift.increment(s, u) * lift.increment(u, t).transpose();
      worst = std::max(worst, defect.cwiseAbs().maxCoeff());
    }
  });
  return worst;
}

/// Largest |area + area^T - dzeta (x) dzeta| over dyadic pairs up to length 64.
inline double symmetry_defect(const RoughLift& lift) {
  double worst = 0.0;
  detail::for_each_pair(lift.grid().nodes(), HolderMode::dyadic, [&](std::size_t s, std::size_t t) {
    if (t - s > 64) return;
    const Eigen::MatrixXd a = area_between(lift, s, t);
    const Eigen::VectorXd inc = lift.increment(s, t);
    worst = std::max(worst, (a + a.transpose() - inc * inc.transpose()).cwiseAbs().maxCoeff());
  });
  return worst;
}

}  // namespace roughctl

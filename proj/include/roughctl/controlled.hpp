#pragma once

#include "roughctl/interp.hpp"
#include "roughctl/lift.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace roughctl {

/// Default controlled-path exponent 0.9 alpha, checked against kappa < alpha and 2 kappa + alpha > 1.
inline double resolve_kappa(double alpha, std::optional<double> kappa) {
  const double k = kappa.value_or(0.9 * alpha);
  if (!(k > 0.0) || !(k < alpha)) throw ValidationError("kappa must lie in (0, alpha)");
  if (!(2.0 * k + alpha > 1.0)) throw ValidationError("kappa must satisfy 2 kappa + alpha > 1");
  return k;
}

/// Path z with Gubinelli derivative z^zeta: dz_st = z^zeta_s dzeta_st + rho_st.
/// The remainder is never stored; it is recomputed from (z, z^zeta, lift).
class ControlledPath {
 public:
  /// `values` is (N+1) x n; `gubinelli[i]` is the n x d derivative at node i.
  ControlledPath(std::shared_ptr<const RoughLift> lift, Eigen::MatrixXd values, std::vector<Eigen::MatrixXd> gubinelli,
                 std::optional<double> kappa = std::nullopt)
      : lift_(std::move(lift)), values_(std::move(values)), gubinelli_(std::move(gubinelli)) {
    if (!lift_) throw ValidationError("controlled path needs a lift");
    kappa_ = resolve_kappa(lift_->alpha(), kappa);
    const auto nodes = static_cast<Eigen::Index>(lift_->grid().nodes());
    if (values_.rows() != nodes) throw ValidationError("controlled path needs one value per node");
    if (gubinelli_.size() != lift_->grid().nodes()) throw ValidationError("controlled path needs one derivative per node");
    for (const auto& g : gubinelli_)
      if (g.rows() != values_.cols() || g.cols() != static_cast<Eigen::Index>(lift_->dim()))
        throw ValidationError("Gubinelli derivative must be n x d");
  }

  const std::shared_ptr<const RoughLift>& lift() const { return lift_; }
  const Grid& grid() const { return lift_->grid(); }
  std::size_t dim() const { return static_cast<std::size_t>(values_.cols()); }
  double kappa() const { return kappa_; }
  const Eigen::MatrixXd& values() const { return values_; }
  Eigen::VectorXd value(std::size_t i) const { return values_.row(static_cast<Eigen::Index>(i)).transpose(); }
  const Eigen::MatrixXd& gubinelli(std::size_t i) const { return gubinelli_[i]; }
  const std::vector<Eigen::MatrixXd>& gubinelli() const { return gubinelli_; }

  GridPath path() const { return GridPath(grid(), values_); }

  /// Gubinelli derivative flattened row-major (n*d columns) as a path.
  GridPath gubinelli_path() const {
    const auto n = values_.cols();
    const auto d = static_cast<Eigen::Index>(lift_->dim());
    Eigen::MatrixXd flat(values_.rows(), n * d);
    for (Eigen::Index i = 0; i < values_.rows(); ++i)
      for (Eigen::Index r = 0; r < n; ++r)
        for (Eigen::Index c = 0; c < d; ++c) flat(i, r * d + c) = gubinelli_[static_cast<std::size_t>(i)](r, c);
    return GridPath(grid(), std::move(flat));
  }

  /// rho_st = dz_st - z^zeta_s dzeta_st.
  Increment2 remainder() const {
    auto self = std::make_shared<const ControlledPath>(*this);
    return Increment2(grid(), dim(), [self](std::size_t s, std::size_t t) {
      return Eigen::VectorXd(self->value(t) - self->value(s) - self->gubinelli(s) * self->lift_->increment(s, t));
    });
  }

  ControlledPath operator-(const ControlledPath& o) const {
    if (o.lift_ != lift_ && !(o.grid() == grid())) throw ValidationError("controlled paths live on different lifts");
    std::vector<Eigen::MatrixXd> g(gubinelli_.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = gubinelli_[i] - o.gubinelli_[i];
    return ControlledPath(lift_, values_ - o.values_, std::move(g), kappa_);
  }

  ControlledPath operator+(const ControlledPath& o) const {
    if (o.lift_ != lift_ && !(o.grid() == grid())) throw ValidationError("controlled paths live on different lifts");
    std::vector<Eigen::MatrixXd> g(gubinelli_.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = gubinelli_[i] + o.gubinelli_[i];
    return ControlledPath(lift_, values_ + o.values_, std::move(g), kappa_);
  }

 private:
  std::shared_ptr<const RoughLift> lift_;
  Eigen::MatrixXd values_;
  std::vector<Eigen::MatrixXd> gubinelli_;
  double kappa_ = 0.0;
};

/// Controlled path with a second-level coefficient:
///   dnu_st = nu^zeta_s dzeta_st + sum nu^{zeta2; j i1 i2}_s area^{i2 i1}_st + rho_st.
/// `second[i]` is n x (d*d), column i1*d + i2.
class StrongControlledPath {
 public:
  StrongControlledPath(ControlledPath weak, std::vector<Eigen::MatrixXd> second)
      : weak_(std::move(weak)), second_(std::move(second)) {
    const auto d = static_cast<Eigen::Index>(weak_.lift()->dim());
    if (second_.size() != weak_.grid().nodes()) throw ValidationError("strong path needs one coefficient per node");
    for (const auto& s : second_)
      if (s.rows() != static_cast<Eigen::Index>(weak_.dim()) || s.cols() != d * d)
        throw ValidationError("second-level coefficient must be n x d*d");
  }

  const ControlledPath& weak() const { return weak_; }
  const std::vector<Eigen::MatrixXd>& second() const { return second_; }
  const Eigen::MatrixXd& second(std::size_t i) const { return second_[i]; }
  const Grid& grid() const { return weak_.grid(); }
  std::size_t dim() const { return weak_.dim(); }

  /// sum_{i1,i2} nu^{zeta2; j i1 i2}_s area^{i2 i1} for one row j.
  static Eigen::VectorXd second_term(const Eigen::MatrixXd& coeff, const Eigen::MatrixXd& area) {
    const auto d = area.rows();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(coeff.rows());
    for (Eigen::Index i1 = 0; i1 < d; ++i1)
      for (Eigen::Index i2 = 0; i2 < d; ++i2) out += coeff.col(i1 * d + i2) * area(i2, i1);
    return out;
  }

  /// Third-order remainder of the strong expansion.
  Increment2 remainder() const {
    auto self = std::make_shared<const StrongControlledPath>(*this);
    return Increment2(grid(), dim(), [self](std::size_t s, std::size_t t) {
      const auto& w = self->weak_;
      const Eigen::MatrixXd area = area_between(*w.lift(), s, t);
      return Eigen::VectorXd(w.value(t) - w.value(s) - w.gubinelli(s) * w.lift()->increment(s, t) -
                             second_term(self->second_[s], area));
    });
  }

  /// Remainder of nu^zeta seen as controlled with derivative nu^{zeta2} (flattened n*d).
  Increment2 derivative_remainder() const {
    auto self = std::make_shared<const StrongControlledPath>(*this);
    const std::size_t d = weak_.lift()->dim();
    return Increment2(grid(), dim() * d, [self, d](std::size_t s, std::size_t t) {
      const auto& w = self->weak_;
      const auto n = static_cast<Eigen::Index>(w.dim());
      const auto dd = static_cast<Eigen::Index>(d);
      const Eigen::VectorXd inc = w.lift()->increment(s, t);
      Eigen::VectorXd out(n * dd);
      for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i1 = 0; i1 < dd; ++i1) {
          double pred = 0.0;
          for (Eigen::Index i2 = 0; i2 < dd; ++i2) pred += self->second_[s](j, i1 * dd + i2) * inc(i2);
          out(j * dd + i1) = w.gubinelli(t)(j, i1) - w.gubinelli(s)(j, i1) - pred;
        }
      return out;
    });
  }

 private:
  ControlledPath weak_;
  std::vector<Eigen::MatrixXd> second_;
};

struct WeakSeminorm {
  double value_kappa = 0.0;       ///< ||z||_kappa
  double gubinelli_sup = 0.0;     ///< ||z^zeta||_inf
  double gubinelli_kappa = 0.0;   ///< ||z^zeta||_kappa
  double remainder_2kappa = 0.0;  ///< ||rho||_{2 kappa}
  double total() const { return value_kappa + gubinelli_sup + gubinelli_kappa + remainder_2kappa; }
};

struct StrongSeminorm {
  double value_kappa = 0.0;
  double gubinelli_sup = 0.0;
  double second_sup = 0.0;                   ///< ||nu^{zeta2}||_inf
  double gubinelli_remainder_2kappa = 0.0;   ///< remainder of nu^zeta against nu^{zeta2}
  double remainder_3kappa = 0.0;
  double total() const {
    return value_kappa + gubinelli_sup + second_sup + gubinelli_remainder_2kappa + remainder_3kappa;
  }
};

inline WeakSeminorm remainder_norms(const ControlledPath& p, HolderMode mode = HolderMode::dyadic) {
  WeakSeminorm r;
  r.value_kappa = holder_norm(p.path(), p.kappa(), mode);
  const GridPath g = p.gubinelli_path();
  r.gubinelli_sup = g.values().rowwise().norm().maxCoeff();
  r.gubinelli_kappa = holder_norm(g, p.kappa(), mode);
  r.remainder_2kappa = holder_norm(p.remainder(), 2.0 * p.kappa(), mode);
  return r;
}

/// The inner remainder of nu^{zeta2} would need a third coefficient; it is not reported.
inline StrongSeminorm remainder_norms(const StrongControlledPath& p, HolderMode mode = HolderMode::dyadic) {
  StrongSeminorm r;
  const ControlledPath& w = p.weak();
  r.value_kappa = holder_norm(w.path(), w.kappa(), mode);
  r.gubinelli_sup = w.gubinelli_path().values().rowwise().norm().maxCoeff();
  for (const auto& s : p.second()) r.second_sup = std::max(r.second_sup, s.norm());
  r.gubinelli_remainder_2kappa = holder_norm(p.derivative_remainder(), 2.0 * w.kappa(), mode);
  r.remainder_3kappa = holder_norm(p.remainder(), 3.0 * w.kappa(), mode);
  return r;
}

/// A map L(t, z) with its spatial Jacobian.
struct SmoothMap {
  std::size_t out_dim = 1;
  std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)> value;
  std::function<Eigen::MatrixXd(double, const Eigen::VectorXd&)> jacobian;
};

/// L(t, z_t) with Gubinelli derivative grad L(t, z_t) z^zeta_t.
inline ControlledPath compose_smooth(const SmoothMap& map, const ControlledPath& p) {
  if (!map.value || !map.jacobian) throw ValidationError("composition needs the map and its Jacobian");
  const Grid& g = p.grid();
  Eigen::MatrixXd values(static_cast<Eigen::Index>(g.nodes()), static_cast<Eigen::Index>(map.out_dim));
  std::vector<Eigen::MatrixXd> gz(g.nodes());
  for (std::size_t i = 0; i < g.nodes(); ++i) {
    const Eigen::VectorXd z = p.value(i);
    const Eigen::VectorXd v = map.value(g.time(i), z);
    if (static_cast<std::size_t>(v.size()) != map.out_dim) throw ValidationError("map output has the wrong size");
    values.row(static_cast<Eigen::Index>(i)) = v.transpose();
    gz[i] = map.jacobian(g.time(i), z) * p.gubinelli(i);
  }
  return ControlledPath(p.lift(), std::move(values), std::move(gz), p.kappa());
}

/// One time slice of a strongly controlled field theta -> nu(theta) with scalar state.
/// Spatial derivatives come from the analytic callbacks when given, otherwise from
/// centered differences interpolated with four-point stencils.
struct StrongField1D {
  UniformAxis axis;
  Eigen::VectorXd value;  ///< nu(theta_j)
  Eigen::MatrixXd first;  ///< nodes x d: nu^{zeta; i1}
  Eigen::MatrixXd second; ///< nodes x d*d: nu^{zeta2; i1 i2} at column i1*d + i2
  std::function<double(double)> d_value;
  std::function<double(double)> d2_value;
  std::function<Eigen::RowVectorXd(double)> d_first;

  std::size_t drivers() const { return static_cast<std::size_t>(first.cols()); }

  /// Nodes [begin, end) as a field on the corresponding sub-axis.
  StrongField1D slice(std::size_t begin, std::size_t end) const {
    const auto b = static_cast<Eigen::Index>(begin), n = static_cast<Eigen::Index>(end - begin);
    return StrongField1D{UniformAxis(axis.x(begin), axis.x(end - 1), end - begin), value.segment(b, n),
                         first.middleRows(b, n), second.middleRows(b, n), d_value, d2_value, d_first};
  }
};

/// Composite first- and second-level coefficients of mu o nu at the nodes of nu.
struct CompositeCoefficients {
  Eigen::MatrixXd first;   ///< nodes x d
  Eigen::MatrixXd second;  ///< nodes x d*d
};

inline CompositeCoefficients compose_strong(const StrongField1D& mu, const StrongField1D& nu) {
  const std::size_t d = mu.drivers();
  if (nu.drivers() != d) throw ValidationError("fields are driven by different dimensions");
  const auto dd = static_cast<Eigen::Index>(d);
  const UniformAxis& ax = mu.axis;

  const Eigen::VectorXd dmu = interp::derivative(ax, mu.value);
  const Eigen::VectorXd d2mu = interp::second_derivative(ax, mu.value);
  Eigen::MatrixXd dfirst(mu.first.rows(), dd);
  for (Eigen::Index c = 0; c < dd; ++c) dfirst.col(c) = interp::derivative(ax, mu.first.col(c));

  const auto n = static_cast<Eigen::Index>(nu.value.size());
  CompositeCoefficients out{Eigen::MatrixXd(n, dd), Eigen::MatrixXd(n, dd * dd)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const double y = nu.value[j];
    if (!ax.contains(y)) throw ValidationError("composition point lies outside the interpolation domain");
    const double g1 = mu.d_value ? mu.d_value(y) : interp::cubic(ax, dmu, y);
    const double g2 = mu.d2_value ? mu.d2_value(y) : interp::cubic(ax, d2mu, y);
    Eigen::RowVectorXd mfirst(dd), dmfirst(dd);
    for (Eigen::Index c = 0; c < dd; ++c) mfirst(c) = interp::cubic(ax, mu.first.col(c), y);
    if (mu.d_first) {
      dmfirst = mu.d_first(y);
    } else {
      for (Eigen::Index c = 0; c < dd; ++c) dmfirst(c) = interp::cubic(ax, dfirst.col(c), y);
    }
    for (Eigen::Index i1 = 0; i1 < dd; ++i1) {
      out.first(j, i1) = mfirst(i1) + g1 * nu.first(j, i1);
      for (Eigen::Index i2 = 0; i2 < dd; ++i2) {
        const Eigen::Index c = i1 * dd + i2;
        out.second(j, c) = interp::cubic(ax, mu.second.col(c), y) + g1 * nu.second(j, c) +
                           dmfirst(i2) * nu.first(j, i1) + dmfirst(i1) * nu.first(j, i2) +
                           g2 * nu.first(j, i1) * nu.first(j, i2);
      }
    }
  }
  return out;
}

/// Debug dump `t, z_1..z_n, gz_11..gz_nd`.
inline void write_controlled_csv(const ControlledPath& p, const std::string& file) {
  const std::size_t n = p.dim(), d = p.lift()->dim();
  std::vector<std::string> header{"t"};
  for (std::size_t j = 1; j <= n; ++j) header.push_back("z_" + std::to_string(j));
  for (std::size_t j = 1; j <= n; ++j)
    for (std::size_t k = 1; k <= d; ++k) header.push_back("gz_" + std::to_string(j) + std::to_string(k));
  csv::Writer w(file, header);
  for (std::size_t i = 0; i < p.grid().nodes(); ++i) {
    std::vector<double> row{p.grid().time(i)};
    for (std::size_t j = 0; j < n; ++j) row.push_back(p.values()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < d; ++k)
        row.push_back(p.gubinelli(i)(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
    w.row(row);
  }
}

}  // namespace roughctl

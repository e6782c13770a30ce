#pragma once

#include "roughctl/controlled.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace roughctl {

/// Which end of each interval the compensated sums freeze their coefficients at.
enum class Evaluation { left, right };

namespace detail {

inline void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!(a == b)) throw ValidationError(std::string("grid mismatch: ") + what);
}

}  // namespace detail

/// z_t = z_0 + int_0^t mu dzeta + int_0^t eta dr by compensated Riemann sums.
///
/// mu has m*d components read as an m x d matrix (row-major); eta has m components.
/// One step: mu_s dzeta + sum_{i,i1} mu^{zeta; (j,i) i1}_s area^{i1 i} + eta_s dt.
/// The right-point variant freezes at t instead and compensates with area - dzeta (x) dzeta.
/// The result has Gubinelli derivative mu.
inline ControlledPath rough_integral_with_drift(const ControlledPath& mu, const std::optional<GridPath>& eta,
                                                std::shared_ptr<const RoughLift> lift,
                                                Eigen::VectorXd z0 = Eigen::VectorXd(),
                                                Evaluation eval = Evaluation::left) {
  if (!lift) throw ValidationError("integral needs a lift");
  const Grid& g = lift->grid();
  detail::require_same_grid(mu.grid(), g, "integrand and lift");
  const auto d = static_cast<Eigen::Index>(lift->dim());
  if (mu.dim() % lift->dim() != 0) throw ValidationError("integrand dimension must be a multiple of the driver dimension");
  const auto m = static_cast<Eigen::Index>(mu.dim()) / d;
  if (eta) {
    detail::require_same_grid(eta->grid(), g, "drift and lift");
    if (static_cast<Eigen::Index>(eta->dim()) != m) throw ValidationError("drift dimension must match the output");
  }
  if (z0.size() == 0) z0 = Eigen::VectorXd::Zero(m);
  if (z0.size() != m) throw ValidationError("initial value has the wrong dimension");

  const std::size_t nodes = g.nodes();
  Eigen::MatrixXd z(static_cast<Eigen::Index>(nodes), m);
  z.row(0) = z0.transpose();
  std::vector<Eigen::MatrixXd> gz(nodes, Eigen::MatrixXd(m, d));
  for (std::size_t i = 0; i < nodes; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      for (Eigen::Index k = 0; k < d; ++k) gz[i](j, k) = mu.values()(static_cast<Eigen::Index>(i), j * d + k);

  const double dt = g.dt();
  for (std::size_t i = 0; i + 1 < nodes; ++i) {
    const std::size_t at = eval == Evaluation::left ? i : i + 1;
    const Eigen::VectorXd dz = lift->increment(i, i + 1);
    Eigen::MatrixXd comp = lift->adjacent_area(i);
    if (eval == Evaluation::right) comp -= dz * dz.transpose();
    const Eigen::MatrixXd& dmu = mu.gubinelli(at);  // (m*d) x d
    for (Eigen::Index j = 0; j < m; ++j) {
      double step = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        step += gz[at](j, k) * dz[k];
        for (Eigen::Index k1 = 0; k1 < d; ++k1) step += dmu(j * d + k, k1) * comp(k1, k);
      }
      if (eta) step += eta->values()(static_cast<Eigen::Index>(at), j) * dt;
      z(static_cast<Eigen::Index>(i + 1), j) = z(static_cast<Eigen::Index>(i), j) + step;
    }
  }
  return ControlledPath(std::move(lift), std::move(z), std::move(gz), mu.kappa());
}

/// The driver itself as a strongly controlled path: nu = zeta, nu^zeta = I, nu^{zeta2} = 0.
inline StrongControlledPath identity_strong_path(std::shared_ptr<const RoughLift> lift) {
  const auto d = static_cast<Eigen::Index>(lift->dim());
  const std::size_t nodes = lift->grid().nodes();
  std::vector<Eigen::MatrixXd> gz(nodes, Eigen::MatrixXd::Identity(d, d));
  std::vector<Eigen::MatrixXd> second(nodes, Eigen::MatrixXd::Zero(d, d * d));
  Eigen::MatrixXd values = lift->path().values();
  ControlledPath weak(std::move(lift), std::move(values), std::move(gz));
  return StrongControlledPath(std::move(weak), std::move(second));
}

/// Componentwise z^j = int mu^j dnu^j + int eta^j dr for a weak mu against a strong nu.
///
/// One step: mu^j nu^{zeta; j i1} dzeta^{i1}
///         + sum (mu^j nu^{zeta2; j i1 i2} + mu^{zeta; j i2} nu^{zeta; j i1}) area^{i2 i1} + eta^j dt.
/// With nu = zeta this reduces to rough_integral_with_drift.
inline ControlledPath integral_controlled_pair(const ControlledPath& mu, const StrongControlledPath& nu,
                                               const std::optional<GridPath>& eta, std::shared_ptr<const RoughLift> lift,
                                               Eigen::VectorXd z0 = Eigen::VectorXd()) {
  if (!lift) throw ValidationError("integral needs a lift");
  const Grid& g = lift->grid();
  detail::require_same_grid(mu.grid(), g, "integrand and lift");
  detail::require_same_grid(nu.grid(), g, "integrator and lift");
  if (mu.dim() != nu.dim()) throw ValidationError("integrand and integrator dimensions differ");
  const auto n = static_cast<Eigen::Index>(mu.dim());
  const auto d = static_cast<Eigen::Index>(lift->dim());
  if (eta) {
    detail::require_same_grid(eta->grid(), g, "drift and lift");
    if (static_cast<Eigen::Index>(eta->dim()) != n) throw ValidationError("drift dimension must match the output");
  }
  if (z0.size() == 0) z0 = Eigen::VectorXd::Zero(n);
  if (z0.size() != n) throw ValidationError("initial value has the wrong dimension");

  const std::size_t nodes = g.nodes();
  Eigen::MatrixXd z(static_cast<Eigen::Index>(nodes), n);
  z.row(0) = z0.transpose();
  std::vector<Eigen::MatrixXd> gz(nodes, Eigen::MatrixXd(n, d));
  for (std::size_t i = 0; i < nodes; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (Eigen::Index j = 0; j < n; ++j) gz[i].row(j) = mu.values()(ii, j) * nu.weak().gubinelli(i).row(j);
  }
  const double dt = g.dt();
  for (std::size_t i = 0; i + 1 < nodes; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd dz = lift->increment(i, i + 1);
    const Eigen::MatrixXd area = lift->adjacent_area(i);
    const Eigen::MatrixXd& nz = nu.weak().gubinelli(i);
    const Eigen::MatrixXd& nz2 = nu.second(i);
    const Eigen::MatrixXd& mz = mu.gubinelli(i);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double mj = mu.values()(ii, j);
      double step = mj * nz.row(j).dot(dz);
      for (Eigen::Index i1 = 0; i1 < d; ++i1)
        for (Eigen::Index i2 = 0; i2 < d; ++i2)
          step += (mj * nz2(j, i1 * d + i2) + mz(j, i2) * nz(j, i1)) * area(i2, i1);
      if (eta) step += eta->values()(ii, j) * dt;
      z(ii + 1, j) = z(ii, j) + step;
    }
  }
  return ControlledPath(std::move(lift), std::move(z), std::move(gz), mu.kappa());
}

/// The driver itself as a weak controlled path (z = zeta, z^zeta = I).
inline ControlledPath identity_path(std::shared_ptr<const RoughLift> lift) {
  return identity_strong_path(std::move(lift)).weak();
}

/// Constant path c with zero Gubinelli derivative.
inline ControlledPath constant_path(std::shared_ptr<const RoughLift> lift, const Eigen::VectorXd& c) {
  const std::size_t nodes = lift->grid().nodes();
  Eigen::MatrixXd v = c.transpose().replicate(static_cast<Eigen::Index>(nodes), 1);
  std::vector<Eigen::MatrixXd> gz(nodes, Eigen::MatrixXd::Zero(c.size(), static_cast<Eigen::Index>(lift->dim())));
  return ControlledPath(std::move(lift), std::move(v), std::move(gz));
}

}  // namespace roughctl

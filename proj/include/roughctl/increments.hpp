#pragma once

#include "roughctl/grid.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>

namespace roughctl {

/// Which grid tuples a discrete Hölder norm visits.
enum class HolderMode {
  /// Pairs (i, i + 2^k); triples add the dyadic interior points. O(N log N).
  dyadic,
  /// Every tuple of the simplex. O(N^2) for pairs, O(N^3) for triples.
  exhaustive,
};

/// A 1-increment (s, t) -> R^n evaluated on grid index pairs.
/// Vanishes on the diagonal by construction.
class Increment2 {
 public:
  using Evaluator = std::function<Eigen::VectorXd(std::size_t, std::size_t)>;

  Increment2(Grid grid, std::size_t dim, Evaluator eval)
      : grid_(grid), dim_(dim), eval_(std::make_shared<Evaluator>(std::move(eval))) {}

  const Grid& grid() const { return grid_; }
  std::size_t dim() const { return dim_; }

  Eigen::VectorXd operator()(std::size_t s, std::size_t t) const {
    if (s == t) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    return (*eval_)(s, t);
  }

  /// Dense storage of every pair; use for generic remainders on small grids.
  Increment2 materialized() const {
    const std::size_t n = grid_.nodes();
    auto table = std::make_shared<std::vector<Eigen::VectorXd>>(n * n);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t t = s; t < n; ++t) (*table)[s * n + t] = (*this)(s, t);
    return Increment2(grid_, dim_, [table, n](std::size_t s, std::size_t t) { return (*table)[s * n + t]; });
  }

 private:
  Grid grid_;
  std::size_t dim_;
  std::shared_ptr<const Evaluator> eval_;
};

/// A 2-increment (s, u, t) -> R^n. Vanishes when consecutive arguments coincide.
class Increment3 {
 public:
  using Evaluator = std::function<Eigen::VectorXd(std::size_t, std::size_t, std::size_t)>;

  Increment3(Grid grid, std::size_t dim, Evaluator eval)
      : grid_(grid), dim_(dim), eval_(std::make_shared<Evaluator>(std::move(eval))) {}

  const Grid& grid() const { return grid_; }
  std::size_t dim() const { return dim_; }

  Eigen::VectorXd operator()(std::size_t s, std::size_t u, std::size_t t) const {
    if (s == u || u == t) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    return (*eval_)(s, u, t);
  }

 private:
  Grid grid_;
  std::size_t dim_;
  std::shared_ptr<const Evaluator> eval_;
};

/// (s, t) -> f_t - f_s.
inline Increment2 delta1(const GridPath& f) {
  auto path = std::make_shared<GridPath>(f);
  return Increment2(f.grid(), f.dim(), [path](std::size_t s, std::size_t t) { return path->increment(s, t); });
}

/// (s, u, t) -> h_st - h_su - h_ut.
inline Increment3 delta2(const Increment2& h) {
  return Increment3(h.grid(), h.dim(),
                    [h](std::size_t s, std::size_t u, std::size_t t) { return Eigen::VectorXd(h(s, t) - h(s, u) - h(u, t)); });
}

inline Increment2 operator+(const Increment2& a, const Increment2& b) {
  if (!(a.grid() == b.grid()) || a.dim() != b.dim()) throw ValidationError("increment shapes differ");
  return Increment2(a.grid(), a.dim(), [a, b](std::size_t s, std::size_t t) { return Eigen::VectorXd(a(s, t) + b(s, t)); });
}

inline Increment2 operator-(const Increment2& a, const Increment2& b) {
  if (!(a.grid() == b.grid()) || a.dim() != b.dim()) throw ValidationError("increment shapes differ");
  return Increment2(a.grid(), a.dim(), [a, b](std::size_t s, std::size_t t) { return Eigen::VectorXd(a(s, t) - b(s, t)); });
}

inline Increment2 operator*(double c, const Increment2& a) {
  return Increment2(a.grid(), a.dim(), [a, c](std::size_t s, std::size_t t) { return Eigen::VectorXd(c * a(s, t)); });
}

inline Increment3 operator+(const Increment3& a, const Increment3& b) {
  if (!(a.grid() == b.grid()) || a.dim() != b.dim()) throw ValidationError("increment shapes differ");
  return Increment3(a.grid(), a.dim(), [a, b](std::size_t s, std::size_t u, std::size_t t) {
    return Eigen::VectorXd(a(s, u, t) + b(s, u, t));
  });
}

inline Increment3 operator*(double c, const Increment3& a) {
  return Increment3(a.grid(), a.dim(),
                    [a, c](std::size_t s, std::size_t u, std::size_t t) { return Eigen::VectorXd(c * a(s, u, t)); });
}

/// (g h)_st = g_s h_st for a scalar path g.
inline Increment2 product(const GridPath& g, const Increment2& h) {
  if (g.dim() != 1) throw ValidationError("product expects a scalar path");
  auto path = std::make_shared<GridPath>(g);
  return Increment2(h.grid(), h.dim(), [path, h](std::size_t s, std::size_t t) {
    return Eigen::VectorXd(path->values()(static_cast<Eigen::Index>(s), 0) * h(s, t));
  });
}

/// (g h)_sut = g_s h_sut for a scalar path g.
inline Increment3 product(const GridPath& g, const Increment3& h) {
  if (g.dim() != 1) throw ValidationError("product expects a scalar path");
  auto path = std::make_shared<GridPath>(g);
  return Increment3(h.grid(), h.dim(), [path, h](std::size_t s, std::size_t u, std::size_t t) {
    return Eigen::VectorXd(path->values()(static_cast<Eigen::Index>(s), 0) * h(s, u, t));
  });
}

/// (g h)_sut = g_su h_ut for a scalar 1-increment g.
inline Increment3 product(const Increment2& g, const Increment2& h) {
  if (g.dim() != 1) throw ValidationError("product expects a scalar first factor");
  return Increment3(h.grid(), h.dim(),
                    [g, h](std::size_t s, std::size_t u, std::size_t t) { return Eigen::VectorXd(g(s, u)(0) * h(u, t)); });
}

namespace detail {

template <class Visit>
void for_each_pair(std::size_t nodes, HolderMode mode, Visit&& visit) {
  if (mode == HolderMode::exhaustive) {
    for (std::size_t s = 0; s < nodes; ++s)
      for (std::size_t t = s + 1; t < nodes; ++t) visit(s, t);
    return;
  }
  for (std::size_t len = 1; len < nodes; len *= 2)
    for (std::size_t s = 0; s + len < nodes; ++s) visit(s, s + len);
}

}  // namespace detail

/// sup |f_st| / |t - s|^mu over the pairs selected by `mode`.
inline double holder_norm(const Increment2& f, double mu, HolderMode mode = HolderMode::dyadic) {
  if (!(mu > 0.0)) throw ValidationError("Hölder exponent must be positive");
  const Grid& g = f.grid();
  double best = 0.0;
  detail::for_each_pair(g.nodes(), mode, [&](std::size_t s, std::size_t t) {
    const double r = f(s, t).norm() / std::pow(g.time(t) - g.time(s), mu);
    best = std::max(best, r);
  });
  return best;
}

/// sup |h_sut| / |t - s|^mu. Dyadic mode takes (s, t) dyadic and u in {s + 2^j, t - 2^j}.
inline double holder_norm(const Increment3& h, double mu, HolderMode mode = HolderMode::dyadic) {
  if (!(mu > 0.0)) throw ValidationError("Hölder exponent must be positive");
  const Grid& g = h.grid();
  double best = 0.0;
  auto visit = [&](std::size_t s, std::size_t u, std::size_t t) {
    const double r = h(s, u, t).norm() / std::pow(g.time(t) - g.time(s), mu);
    best = std::max(best, r);
  };
  if (mode == HolderMode::exhaustive) {
    for (std::size_t s = 0; s < g.nodes(); ++s)
      for (std::size_t t = s + 2; t < g.nodes(); ++t)
        for (std::size_t u = s + 1; u < t; ++u) visit(s, u, t);
    return best;
  }
  detail::for_each_pair(g.nodes(), HolderMode::dyadic, [&](std::size_t s, std::size_t t) {
    for (std::size_t j = 1; j < t - s; j *= 2) {
      visit(s, s + j, t);
      visit(s, t - j, t);
    }
  });
  return best;
}

/// Hölder seminorm of a path: the norm of its delta1 image.
inline double holder_norm(const GridPath& f, double mu, HolderMode mode = HolderMode::dyadic) {
  return holder_norm(delta1(f), mu, mode);
}

}  // namespace roughctl

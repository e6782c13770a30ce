#pragma once

#include "roughctl/lift.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstdint>
#include <mutex>
#include <random>
#include <vector>

namespace roughctl {

/// Largest fine grid the exact sampler accepts (circulant of twice this size).
inline constexpr std::size_t kMaxFbmSteps = std::size_t{1} << 22;

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// In-place forward DFT of `data`.
inline void fft_forward(std::vector<std::complex<double>>& data) {
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_1d(static_cast<int>(data.size()), buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
}

}  // namespace detail

/// Autocovariance of unit-spacing fractional Gaussian noise at lag k.
inline double fgn_autocovariance(double hurst, std::size_t k) {
  const double h2 = 2.0 * hurst;
  const double kk = static_cast<double>(k);
  return 0.5 * (std::pow(kk + 1.0, h2) - 2.0 * std::pow(kk, h2) + std::pow(std::abs(kk - 1.0), h2));
}

/// Exact fBM sampler by circulant embedding of the increment covariance (Davies-Harte).
///
/// Returns `dim` independent components on a grid of `steps` intervals over [0, horizon],
/// starting at zero. Each FFT yields two independent components (real and imaginary parts).
/// Identical arguments give bit-identical output.
inline GridPath sample_fbm(double hurst, std::size_t dim, std::size_t steps, std::uint64_t seed, double horizon = 1.0) {
  if (!(hurst > 1.0 / 3.0) || !(hurst < 1.0)) throw ValidationError("Hurst index must lie in (1/3, 1)");
  if (dim < 1) throw ValidationError("fBM dimension must be at least 1");
  if (steps > kMaxFbmSteps) throw ValidationError("fBM grid exceeds the exact-sampler cap of 2^22 steps");
  const Grid grid(horizon, steps);
  const std::size_t m = 2 * steps;

  std::vector<std::complex<double>> eig(m);
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t lag = j <= steps ? j : m - j;
    eig[j] = fgn_autocovariance(hurst, lag);
  }
  detail::fft_forward(eig);
  std::vector<double> root(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double lambda = eig[j].real();
    if (lambda < -1e-10) throw NumericalError("circulant embedding is not positive semidefinite");
    root[j] = std::sqrt(std::max(lambda, 0.0) / static_cast<double>(m));
  }

  const double scale = std::pow(grid.dt(), hurst);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.nodes()), static_cast<Eigen::Index>(dim));
  std::vector<std::complex<double>> w(m);
  for (std::size_t comp = 0; comp < dim; comp += 2) {
    for (std::size_t j = 0; j < m; ++j) {
      const double re = normal(rng);
      const double im = normal(rng);
      w[j] = root[j] * std::complex<double>(re, im);
    }
    detail::fft_forward(w);
    for (std::size_t part = 0; part < 2 && comp + part < dim; ++part) {
      double acc = 0.0;
      for (std::size_t i = 0; i < steps; ++i) {
        acc += scale * (part == 0 ? w[i].real() : w[i].imag());
        values(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(comp + part)) = acc;
      }
    }
  }
  return GridPath(grid, std::move(values));
}

/// Hölder exponent assigned to an fBM lift: slightly below H and above 1/3.
inline double lift_exponent_for_hurst(double hurst) {
  return hurst - std::min(0.05, 0.5 * (hurst - 1.0 / 3.0));
}

/// Samples fBM on `steps * oversample` fine intervals and lifts its piecewise-linear interpolant.
inline RoughLift lift_fbm(double hurst, std::size_t dim, std::size_t steps, std::uint64_t seed, std::size_t oversample = 8,
                          double horizon = 1.0) {
  if (oversample < 1) throw ValidationError("oversampling factor must be at least 1");
  const GridPath fine = sample_fbm(hurst, dim, steps * oversample, seed, horizon);
  return lift_smooth(fine, Grid(horizon, steps), lift_exponent_for_hurst(hurst));
}

}  // namespace roughctl

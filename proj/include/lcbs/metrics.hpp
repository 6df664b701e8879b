#pragma once

#include "lcbs/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <vector>

namespace lcbs {

/// Inverse CDF of a 1-D distribution on (0, 1).
struct Quantile1D {
  std::function<double(double)> inverse_cdf;

  double operator()(double q) const { return inverse_cdf(q); }

  /// Checks monotonicity on a probe grid of n interior points.
  bool is_monotone(int n = 1000) const {
    double prev = -kInf;
    for (int k = 0; k < n; ++k) {
      const double x = inverse_cdf((k + 0.5) / n);
      if (!(x >= prev)) {
        return false;
      }
      prev = x;
    }
    return true;
  }
};

inline std::vector<double> to_std(const Eigen::Ref<const Vector> &v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Quantile1D tent_quantile() {
  return {[](double q) {
    if (!(q > 0.0 && q < 1.0)) {
      throw UsageError("quantile level must lie in (0, 1)");
    }
    return q <= 0.5 ? -1.0 + std::sqrt(2.0 * q) : 1.0 - std::sqrt(2.0 * (1.0 - q));
  }};
}

/// Quantile function of a density tabulated on an increasing grid,
/// piecewise linear in the cumulative trapezoid mass.
inline Quantile1D tabulated_quantile(const std::vector<double> &grid,
                                     const std::vector<double> &density) {
  if (grid.size() < 2 || grid.size() != density.size()) {
    throw UsageError("tabulated quantile needs matching grids of size >= 2");
  }
  std::vector<double> cdf(grid.size(), 0.0);
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1]) || density[k] < 0.0 || density[k - 1] < 0.0) {
      throw UsageError("tabulated quantile needs an increasing grid and density >= 0");
    }
    cdf[k] = cdf[k - 1] + 0.5 * (density[k] + density[k - 1]) * (grid[k] - grid[k - 1]);
  }
  const double total = cdf.back();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw UsageError("tabulated density has no mass");
  }
  for (double &c : cdf) {
    c /= total;
  }
  return {[grid, cdf](double q) {
    if (!(q > 0.0 && q < 1.0)) {
      throw UsageError("quantile level must lie in (0, 1)");
    }
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
    const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - cdf.begin(), 1));
    const double lo = cdf[k - 1];
    const double hi = cdf[k];
    const double t = hi > lo ? (q - lo) / (hi - lo) : 0.0;
    return grid[k - 1] + t * (grid[k] - grid[k - 1]);
  }};
}

/// W2 between the empirical measure of samples and a distribution given by
/// its quantile function, matching sorted samples to midpoint levels.
inline double wasserstein2_1d(std::vector<double> samples, const Quantile1D &ref) {
  if (samples.empty()) {
    throw UsageError("wasserstein2_1d: empty sample list");
  }
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double diff = samples[i] - ref((static_cast<double>(i) + 0.5) / n);
    acc += diff * diff;
  }
  return std::sqrt(acc / n);
}

/// W2 between two empirical measures. For equal sizes this is the root
/// mean squared difference of the sorted lists; unequal sizes integrate the
/// piecewise-constant quantile functions exactly.
inline double wasserstein2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) {
    throw UsageError("wasserstein2_1d: empty sample list");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
  }
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double level = 0.0;
  double acc = 0.0;
  while (i < a.size() && j < b.size()) {
    const double next_a = static_cast<double>(i + 1) / na;
    const double next_b = static_cast<double>(j + 1) / nb;
    const double next = std::min(next_a, next_b);
    acc += (next - level) * (a[i] - b[j]) * (a[i] - b[j]);
    level = next;
    if (next_a <= next) {
      ++i;
    }
    if (next_b <= next) {
      ++j;
    }
  }
  return std::sqrt(acc);
}

inline double sample_std(const std::vector<double> &x) {
  const double n = static_cast<double>(x.size());
  double m = 0.0;
  for (double v : x) {
    m += v;
  }
  m /= n;
  double s = 0.0;
  for (double v : x) {
    s += (v - m) * (v - m);
  }
  return std::sqrt(s / (n - 1.0));
}

/// Silverman's rule 1.06 sigma n^{-1/5}.
inline double silverman_bandwidth(const std::vector<double> &samples) {
  if (samples.size() < 2) {
    throw UsageError("bandwidth needs at least two samples");
  }
  const double s = sample_std(samples);
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw DegenerateEnsemble("samples have zero spread; bandwidth undefined");
  }
  return 1.06 * s * std::pow(static_cast<double>(samples.size()), -0.2);
}

/// Gaussian-kernel density estimate evaluated on a grid.
inline std::vector<double> kde_1d(const std::vector<double> &samples,
                                  const std::vector<double> &grid,
                                  std::optional<double> bandwidth = std::nullopt) {
  if (samples.size() < 2) {
    throw UsageError("kde_1d needs at least two samples");
  }
  const double h = bandwidth ? *bandwidth : silverman_bandwidth(samples);
  if (!(h > 0.0)) {
    throw UsageError("bandwidth must be positive");
  }
  // Sorted samples let each grid point visit only kernels within 8 h.
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const double norm =
      1.0 / (static_cast<double>(sorted.size()) * h * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double x = grid[g];
    auto it = std::lower_bound(sorted.begin(), sorted.end(), x - 8.0 * h);
    double acc = 0.0;
    for (; it != sorted.end() && *it <= x + 8.0 * h; ++it) {
      const double z = (x - *it) / h;
      acc += std::exp(-0.5 * z * z);
    }
    out[g] = acc * norm;
  }
  return out;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n < 2) {
    throw UsageError("linspace needs at least two points");
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
  }
  return out;
}

inline double trapezoid(const std::vector<double> &x, const std::vector<double> &y) {
  double acc = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    acc += 0.5 * (y[k] + y[k - 1]) * (x[k] - x[k - 1]);
  }
  return acc;
}

/// Strict local maxima (plateaus of equal values are not maxima), merged
/// within min_separation keeping the higher one, sorted by height.
inline std::vector<double> find_modes(const std::vector<double> &grid,
                                      const std::vector<double> &density,
                                      double min_separation) {
  if (grid.size() != density.size()) {
    throw UsageError("find_modes: grid and densities differ in size");
  }
  struct Peak {
    double x;
    double h;
  };
  std::vector<Peak> peaks;
  const std::size_t n = grid.size();
  for (std::size_t k = 0; n > 1 && k < n; ++k) {
    const bool left = k == 0 || density[k] > density[k - 1];
    const bool right = k + 1 == n || density[k] > density[k + 1];
    if (left && right) {
      peaks.push_back({grid[k], density[k]});
    }
  }
  std::sort(peaks.begin(), peaks.end(),
            [](const Peak &a, const Peak &b) { return a.h > b.h; });
  std::vector<double> kept;
  for (const Peak &p : peaks) {
    bool close = false;
    for (double x : kept) {
      close = close || std::abs(x - p.x) < min_separation;
    }
    if (!close) {
      kept.push_back(p.x);
    }
  }
  return kept;
}

/// Outcome of the symmetric two-mode check around +-target.
struct ModeReport {
  std::vector<double> modes;
  double bandwidth = 0.0;
  double mass_negative = 0.0;
  double mass_positive = 0.0;
  bool found_negative = false;
  bool found_positive = false;
  bool pass = false;
};

inline constexpr std::size_t kModeGridPoints = 512;
inline constexpr double kModeMinSeparation = 0.5;
inline constexpr double kModeTolerance = 0.15;
inline constexpr double kModeMinMass = 0.2;

/// KDE on 512 points spanning the sample range padded by 3 bandwidths;
/// passes when the two highest modes lie within 0.15 of -target and +target
/// and each half-line holds at least 20% of the KDE mass.
inline ModeReport two_mode_check(const std::vector<double> &samples, double target) {
  ModeReport r;
  std::vector<double> finite;
  finite.reserve(samples.size());
  for (double x : samples) {
    if (std::isfinite(x)) {
      finite.push_back(x);
    }
  }
  if (finite.size() < 2) {
    return r;
  }
  try {
    r.bandwidth = silverman_bandwidth(finite);
  } catch (const DegenerateEnsemble &) {
    return r;
  }
  const auto [lo, hi] = std::minmax_element(finite.begin(), finite.end());
  const auto grid =
      linspace(*lo - 3.0 * r.bandwidth, *hi + 3.0 * r.bandwidth, kModeGridPoints);
  const auto dens = kde_1d(finite, grid, r.bandwidth);
  r.modes = find_modes(grid, dens, kModeMinSeparation);
  for (std::size_t k = 0; k < std::min<std::size_t>(2, r.modes.size()); ++k) {
    const double m = r.modes[k];
    r.found_negative = r.found_negative || std::abs(m + target) <= kModeTolerance;
    r.found_positive = r.found_positive || std::abs(m - target) <= kModeTolerance;
  }
  double neg = 0.0, pos = 0.0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double piece = 0.5 * (dens[k] + dens[k - 1]) * (grid[k] - grid[k - 1]);
    const double mid = 0.5 * (grid[k] + grid[k - 1]);
    (mid < 0.0 ? neg : pos) += piece;
  }
  const double total = neg + pos;
  r.mass_negative = total > 0.0 ? neg / total : 0.0;
  r.mass_positive = total > 0.0 ? pos / total : 0.0;
  r.pass = r.found_negative && r.found_positive && r.mass_negative >= kModeMinMass &&
           r.mass_positive >= kModeMinMass;
  return r;
}

/// Errors of sample moments against reference moments.
struct MomentErrors {
  double mean_abs = 0.0;       // |mean - m|_2
  double cov_rel = 0.0;        // |cov - S|_F / |S|_F
  Vector mean;
  Matrix cov;
};

inline MomentErrors moment_errors(const Eigen::Ref<const Matrix> &samples,
                                  const Vector &m, const Matrix &s) {
  if (samples.cols() < 2 || samples.rows() != m.size()) {
    throw UsageError("moment_errors: need >= 2 samples of matching dimension");
  }
  MomentErrors e;
  e.mean = samples.rowwise().mean();
  const Matrix c = samples.colwise() - e.mean;
  e.cov = c * c.transpose() / static_cast<double>(samples.cols());
  e.mean_abs = (e.mean - m).norm();
  e.cov_rel = (e.cov - s).norm() / std::max(s.norm(), 1e-300);
  return e;
}

} // namespace lcbs

#pragma once

#include "lcbs/core.hpp"
#include "lcbs/random.hpp"
#include "lcbs/targets.hpp"

#include <algorithm>
#include <cmath>

namespace lcbs {

inline Vector mean(const Eigen::Ref<const Ensemble> &u) {
  if (u.cols() < 1 || u.rows() < 1) {
    throw UsageError("mean: empty ensemble");
  }
  return u.rowwise().mean();
}

/// Centered columns scaled by 1/sqrt(J), so F F^T is the 1/J covariance.
inline Matrix covariance_factor(const Eigen::Ref<const Ensemble> &u) {
  const Vector m = mean(u);
  return (u.colwise() - m) / std::sqrt(static_cast<double>(u.cols()));
}

inline Matrix covariance(const Eigen::Ref<const Ensemble> &u) {
  const Vector m = mean(u);
  const Matrix c = u.colwise() - m;
  return symmetrized(c * c.transpose()) / static_cast<double>(u.cols());
}

/// Weight function exp(-|v - anchor|^2_A / 2) * pi(v)^a.
struct WeightSpec {
  double a = 0.0;
  Matrix A;
  Vector anchor;
};

/// Mean, covariance and rectangular factor under normalized weights.
struct WeightedStats {
  Vector weights;
  Vector mean;
  Matrix cov;
  Matrix factor;
};

/// Log-weights this far below the maximum are set to exactly zero, which
/// keeps subnormals out of the arithmetic.
inline constexpr double kLogWeightFloor = -700.0;

/// Normalizes log-weights with a max shift. Entries at -inf get weight 0.
inline Vector normalize_log_weights(const Eigen::Ref<const Vector> &logw) {
  const double top = logw.maxCoeff();
  if (!std::isfinite(top)) {
    throw DegenerateEnsemble("all particle weights vanish");
  }
  Vector w = (logw.array() - top).max(kLogWeightFloor).exp().matrix();
  for (Index j = 0; j < w.size(); ++j) {
    if (logw(j) - top < kLogWeightFloor) {
      w(j) = 0.0;
    }
  }
  return w / w.sum();
}

/// Log-weights -dist2/2 + a * logp where dist2 holds squared A-norms to the
/// anchor. The density term is skipped entirely when a == 0.
inline Vector combine_log_weights(const Eigen::Ref<const Vector> &dist2,
                                  const Eigen::Ref<const Vector> &logp,
                                  double a) {
  if (a == 0.0) {
    return -0.5 * dist2;
  }
  Vector out = -0.5 * dist2 + a * logp;
  // -inf densities stay -inf even when the distance term is infinite too.
  for (Index j = 0; j < out.size(); ++j) {
    if (logp(j) == -kInf) {
      out(j) = -kInf;
    }
  }
  return out;
}

inline WeightedStats stats_from_weights(const Eigen::Ref<const Ensemble> &u,
                                        Vector w) {
  WeightedStats s;
  // Shifted by the first particle so identical columns give an exact mean.
  s.mean = u.col(0) + (u.colwise() - u.col(0)) * w;
  s.factor = (u.colwise() - s.mean) * w.cwiseSqrt().asDiagonal();
  s.cov = symmetrized(s.factor * s.factor.transpose());
  s.weights = std::move(w);
  return s;
}

inline Vector sqnorms_to_anchor(const Eigen::Ref<const Ensemble> &u,
                                const SpdFactor &a,
                                const Eigen::Ref<const Vector> &anchor) {
  return a.whiten(u.colwise() - anchor).colwise().squaredNorm().transpose();
}

inline Vector normalized_weights(const Eigen::Ref<const Ensemble> &u,
                                 const Eigen::Ref<const Vector> &logp,
                                 const WeightSpec &spec) {
  validate_ensemble(u);
  if (spec.A.rows() != u.rows() || spec.anchor.size() != u.rows()) {
    throw UsageError("weight spec dimension mismatch");
  }
  if (!(spec.a >= 0.0)) {
    throw UsageError("weight exponent must be nonnegative");
  }
  SpdFactor fa;
  try {
    fa = SpdFactor(spec.A, "weighting matrix");
  } catch (const NotPositiveDefinite &e) {
    throw UsageError(e.what());
  }
  return normalize_log_weights(
      combine_log_weights(sqnorms_to_anchor(u, fa, spec.anchor), logp, spec.a));
}

inline Vector weighted_mean(const Eigen::Ref<const Ensemble> &u,
                            const TargetDensity &target,
                            const WeightSpec &spec) {
  const Vector logp =
      spec.a != 0.0 ? target.log_pdf_columns(u) : Vector::Zero(u.cols());
  const Vector w = normalized_weights(u, logp, spec);
  return u.col(0) + (u.colwise() - u.col(0)) * w;
}

inline WeightedStats weighted_covariance(const Eigen::Ref<const Ensemble> &u,
                                         const TargetDensity &target,
                                         const WeightSpec &spec) {
  const Vector logp =
      spec.a != 0.0 ? target.log_pdf_columns(u) : Vector::Zero(u.cols());
  return stats_from_weights(u, normalized_weights(u, logp, spec));
}

/// J x J matrix of |U^i - U^j|^2_C via M = U^T C^{-1} U.
inline Matrix pairwise_weighted_sqnorms(const Eigen::Ref<const Ensemble> &u,
                                        const SpdFactor &c) {
  // Centering first keeps M well scaled; distances are unchanged.
  const Vector m = u.rowwise().mean();
  const Matrix w = c.whiten(u.colwise() - m);
  const Matrix gram = w.transpose() * w;
  const Vector dg = gram.diagonal();
  Matrix out = (-2.0 * gram).colwise() + dg;
  out.rowwise() += dg.transpose();
  out.diagonal().setZero();
  return out.cwiseMax(0.0);
}

inline Matrix pairwise_weighted_sqnorms(const Eigen::Ref<const Ensemble> &u,
                                        const Eigen::Ref<const Matrix> &c) {
  return pairwise_weighted_sqnorms(u, SpdFactor(c, "distance matrix"));
}

inline constexpr int kBatchRetries = 100;

/// Draws the random-batch membership mask for anchor i: j enters when
/// theta_j <= nu. Retries until nonempty.
inline std::vector<Index> draw_batch(Index n_particles, Index i, double nu,
                                     bool exclude_self, RandomStream &rng) {
  if (!(nu > 0.0 && nu <= 1.0)) {
    throw UsageError("batch fraction must lie in (0, 1]");
  }
  if (exclude_self && n_particles < 2) {
    throw UsageError("self-exclusion needs at least two particles");
  }
  std::vector<Index> members;
  members.reserve(static_cast<std::size_t>(n_particles));
  for (int attempt = 0; attempt < kBatchRetries; ++attempt) {
    members.clear();
    for (Index j = 0; j < n_particles; ++j) {
      const bool take = nu >= 1.0 ? true : rng.uniform() <= nu;
      if (take && !(exclude_self && j == i)) {
        members.push_back(j);
      }
    }
    if (!members.empty()) {
      return members;
    }
  }
  throw ConvergenceError("random batch stayed empty after retries");
}

inline Vector random_batch_weighted_mean(const Eigen::Ref<const Ensemble> &u,
                                         Index i, const TargetDensity &target,
                                         const WeightSpec &spec, double nu,
                                         RandomStream &rng,
                                         bool exclude_self = true) {
  validate_ensemble(u);
  if (i < 0 || i >= u.cols()) {
    throw UsageError("anchor index out of range");
  }
  const auto members = draw_batch(u.cols(), i, nu, exclude_self, rng);
  Ensemble sub(u.rows(), static_cast<Index>(members.size()));
  for (std::size_t k = 0; k < members.size(); ++k) {
    sub.col(static_cast<Index>(k)) = u.col(members[k]);
  }
  return weighted_mean(sub, target, spec);
}

} // namespace lcbs

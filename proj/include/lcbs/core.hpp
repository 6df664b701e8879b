#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <cstddef>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace lcbs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error hierarchy. Everything thrown by the library derives from Error.

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Violated precondition on arguments (bad dimensions, non-SPD input, ...).
class UsageError : public Error {
public:
  using Error::Error;
};

/// A matrix that must be symmetric positive definite is not.
class NotPositiveDefinite : public Error {
public:
  using Error::Error;
};

/// The ensemble (or a covariance built from it) is too degenerate to invert.
class DegenerateEnsemble : public NotPositiveDefinite {
public:
  using NotPositiveDefinite::NotPositiveDefinite;
};

/// The requested combination is not available (e.g. a gradient-free target
/// given to a gradient-based sampler).
class Unsupported : public Error {
public:
  using Error::Error;
};

/// An iterative method ran out of budget.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// A particle update produced a non-finite coordinate.
class DivergedRun : public Error {
public:
  DivergedRun(std::size_t step, const std::string &what)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Every independent run of an experiment diverged.
class AllRunsDiverged : public Error {
public:
  using Error::Error;
};

/// Mean vector and covariance matrix of a Gaussian.
struct GaussianMoments {
  Vector m;
  Matrix S;
};

/// Particle ensemble: column j is particle j, shape d x J.
using Ensemble = Matrix;

inline void validate_ensemble(const Eigen::Ref<const Ensemble> &u) {
  if (u.rows() < 1 || u.cols() < 1) {
    throw UsageError("ensemble must have d >= 1 and J >= 1");
  }
  if (!u.allFinite()) {
    throw UsageError("ensemble has non-finite entries");
  }
}

/// Cholesky factorization of an SPD matrix, L L^T = A.
class SpdFactor {
public:
  SpdFactor() = default;

  explicit SpdFactor(const Eigen::Ref<const Matrix> &a,
                     const char *what = "matrix") {
    if (a.rows() != a.cols() || a.rows() == 0) {
      throw UsageError(std::string(what) + " must be square and nonempty");
    }
    llt_.compute(a);
    if (llt_.info() != Eigen::Success || !llt_.matrixLLT().allFinite()) {
      throw NotPositiveDefinite(std::string(what) +
                                " is not symmetric positive definite");
    }
    for (Index k = 0; k < a.rows(); ++k) {
      if (!(llt_.matrixLLT()(k, k) > 0.0)) {
        throw NotPositiveDefinite(std::string(what) +
                                  " is not symmetric positive definite");
      }
    }
  }

  Index dim() const { return llt_.rows(); }

  Matrix lower() const { return llt_.matrixL(); }

  template <typename Rhs> Matrix solve(const Eigen::MatrixBase<Rhs> &b) const {
    return llt_.solve(b);
  }

  /// L^{-1} b; the columns' squared norms are b^T A^{-1} b.
  Matrix whiten(const Eigen::Ref<const Matrix> &b) const {
    return llt_.matrixL().solve(b);
  }

  double sqnorm(const Eigen::Ref<const Vector> &v) const {
    return llt_.matrixL().solve(v).squaredNorm();
  }

  Matrix inverse() const {
    return llt_.solve(Matrix::Identity(dim(), dim()));
  }

private:
  Eigen::LLT<Matrix> llt_;
};

/// Covariance matrices whose eigenvalue spread exceeds this are treated as
/// singular.
inline constexpr double kDegeneracyRatio = 1e-12;

/// Throws DegenerateEnsemble unless lambda_min >= ratio * lambda_max > 0.
inline void require_well_conditioned(const Eigen::Ref<const Matrix> &c,
                                     const char *what,
                                     double ratio = kDegeneracyRatio) {
  if (!c.allFinite()) {
    throw DegenerateEnsemble(std::string(what) + " has non-finite entries");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
  const auto &ev = eig.eigenvalues();
  const double lmax = ev.maxCoeff();
  const double lmin = ev.minCoeff();
  if (!(lmax > 0.0) || lmin < ratio * lmax) {
    throw DegenerateEnsemble(std::string(what) + " is degenerate (eigenvalues " +
                             std::to_string(lmin) + " .. " +
                             std::to_string(lmax) + ")");
  }
}

inline Matrix symmetrized(const Eigen::Ref<const Matrix> &a) {
  return 0.5 * (a + a.transpose());
}

/// Runs fn(k) for k in [0, n) on up to n_threads threads with static
/// chunking. Results must not depend on scheduling; callers write to
/// disjoint slots. The exception from the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t n_threads, Fn &&fn) {
  if (n_threads <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) {
      fn(k);
    }
    return;
  }
  n_threads = std::min(n_threads, n);
  std::vector<std::exception_ptr> errors(n_threads);
  std::vector<std::size_t> error_index(n_threads, n);
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) {
    pool.emplace_back([&, t] {
      const std::size_t begin = n * t / n_threads;
      const std::size_t end = n * (t + 1) / n_threads;
      for (std::size_t k = begin; k < end; ++k) {
        try {
          fn(k);
        } catch (...) {
          errors[t] = std::current_exception();
          error_index[t] = k;
          return;
        }
      }
    });
  }
  for (auto &th : pool) {
    th.join();
  }
  std::size_t best = n_threads;
  for (std::size_t t = 0; t < n_threads; ++t) {
    if (errors[t] && (best == n_threads || error_index[t] < error_index[best])) {
      best = t;
    }
  }
  if (best != n_threads) {
    std::rethrow_exception(errors[best]);
  }
}

} // namespace lcbs

#pragma once

#include "lcbs/core.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace lcbs {

using ScalarField = std::function<double(const Eigen::Ref<const Vector> &)>;
using VectorField = std::function<Vector(const Eigen::Ref<const Vector> &)>;

/// Data of a Bayesian inverse problem y = G(u) + noise, noise ~ N(0, Gamma),
/// with an optional Gaussian prior N(prior_mean, prior_cov).
struct InverseProblem {
  VectorField forward;
  Vector y;
  Matrix noise_cov;
  std::optional<Matrix> prior_cov;
  Vector prior_mean;
};

/// Unnormalized density exp(-V). log_density returns -inf outside the
/// support and never NaN.
struct TargetDensity {
  std::string name;
  Index dim = 0;
  ScalarField log_density;
  VectorField gradient;                  // empty when unavailable
  std::optional<GaussianMoments> gaussian; // set for Gaussian targets
  std::shared_ptr<const InverseProblem> inverse_problem;

  bool has_gradient() const { return static_cast<bool>(gradient); }

  double log_pdf(const Eigen::Ref<const Vector> &u) const {
    const double v = log_density(u);
    return std::isnan(v) ? -kInf : v;
  }

  double potential(const Eigen::Ref<const Vector> &u) const {
    return -log_pdf(u);
  }

  Vector grad_log_pdf(const Eigen::Ref<const Vector> &u) const {
    if (!gradient) {
      throw Unsupported("target '" + name + "' exposes no gradient");
    }
    return gradient(u);
  }

  /// log density of every column of an ensemble.
  Vector log_pdf_columns(const Eigen::Ref<const Matrix> &u) const {
    Vector out(u.cols());
    for (Index j = 0; j < u.cols(); ++j) {
      out(j) = log_pdf(u.col(j));
    }
    return out;
  }
};

inline TargetDensity gaussian_target(const Vector &m, const Matrix &cov) {
  if (cov.rows() != m.size() || cov.cols() != m.size()) {
    throw UsageError("gaussian_target: dimension mismatch");
  }
  auto f = std::make_shared<SpdFactor>(cov, "target covariance");
  auto prec = std::make_shared<Matrix>(f->inverse());
  TargetDensity t;
  t.name = "gaussian";
  t.dim = m.size();
  t.log_density = [f, m](const Eigen::Ref<const Vector> &u) {
    return -0.5 * f->sqnorm(u - m);
  };
  t.gradient = [prec, m](const Eigen::Ref<const Vector> &u) -> Vector {
    return -(*prec) * (u - m);
  };
  t.gaussian = GaussianMoments{m, cov};
  return t;
}

/// V(u) = sum_k (lambda_k u_k^2 - 1)^2 for a positive diagonal lambda.
inline TargetDensity scaled_double_well(const Vector &lambda) {
  if (lambda.size() < 1 || !(lambda.array() > 0.0).all()) {
    throw UsageError("scaled_double_well: scales must be positive");
  }
  TargetDensity t;
  t.name = "scaled-doublewell";
  t.dim = lambda.size();
  t.log_density = [lambda](const Eigen::Ref<const Vector> &u) {
    return -((lambda.array() * u.array().square()) - 1.0).square().sum();
  };
  t.gradient = [lambda](const Eigen::Ref<const Vector> &u) -> Vector {
    const auto s = lambda.array() * u.array().square() - 1.0;
    return (-4.0 * lambda.array() * u.array() * s).matrix();
  };
  // Least-squares form: G(u) = lambda u^2 - 1, y = 0, Gamma = I/2.
  auto ip = std::make_shared<InverseProblem>();
  ip->forward = [lambda](const Eigen::Ref<const Vector> &u) -> Vector {
    return (lambda.array() * u.array().square() - 1.0).matrix();
  };
  ip->y = Vector::Zero(lambda.size());
  ip->noise_cov = 0.5 * Matrix::Identity(lambda.size(), lambda.size());
  ip->prior_mean = Vector::Zero(lambda.size());
  t.inverse_problem = ip;
  return t;
}

inline TargetDensity double_well(Index d) {
  if (d < 1) {
    throw UsageError("double_well: d must be >= 1");
  }
  TargetDensity t = scaled_double_well(Vector::Ones(d));
  t.name = "doublewell-" + std::to_string(d);
  return t;
}

inline TargetDensity diffpeaks() {
  TargetDensity t;
  t.name = "diffpeaks";
  t.dim = 1;
  t.log_density = [](const Eigen::Ref<const Vector> &u) {
    const double x = u(0);
    const double z = x * std::exp(x);
    const double v = 2.0 * std::pow(z, 4) - 4.0 * z * z -
                     2.0 * std::pow(x / 3.0, 5) + 2.0;
    return std::isfinite(v) ? -v : -kInf;
  };
  t.gradient = [](const Eigen::Ref<const Vector> &u) -> Vector {
    const double x = u(0);
    const double z = x * std::exp(x);
    const double dz = (1.0 + x) * std::exp(x);
    const double dv = (8.0 * z * z * z - 8.0 * z) * dz -
                      (10.0 / 3.0) * std::pow(x / 3.0, 4);
    Vector g(1);
    g(0) = std::isfinite(dv) ? -dv : 0.0;
    return g;
  };
  return t;
}

/// pi(u) = max(1 - |u|, 0). No gradient.
inline TargetDensity tent() {
  TargetDensity t;
  t.name = "tent";
  t.dim = 1;
  t.log_density = [](const Eigen::Ref<const Vector> &u) {
    const double a = std::abs(u(0));
    return a < 1.0 ? std::log1p(-a) : -kInf;
  };
  return t;
}

/// V(u) = |y - G(u)|^2_Gamma / 2 + |u - m0|^2_Gamma0 / 2, gradient-free.
inline TargetDensity bip_posterior(VectorField forward, const Vector &y,
                                   const Matrix &noise_cov,
                                   std::optional<Matrix> prior_cov,
                                   Vector prior_mean = Vector()) {
  auto ip = std::make_shared<InverseProblem>();
  ip->forward = std::move(forward);
  ip->y = y;
  ip->noise_cov = noise_cov;
  ip->prior_cov = std::move(prior_cov);
  Index d = 0;
  if (ip->prior_cov) {
    d = ip->prior_cov->rows();
    ip->prior_mean = prior_mean.size() ? prior_mean : Vector::Zero(d);
    if (ip->prior_mean.size() != d) {
      throw UsageError("bip_posterior: prior mean dimension mismatch");
    }
  } else {
    if (prior_mean.size() == 0) {
      throw UsageError("bip_posterior: dimension unknown without a prior");
    }
    d = prior_mean.size();
    ip->prior_mean = prior_mean;
  }
  if (noise_cov.rows() != y.size()) {
    throw UsageError("bip_posterior: noise covariance dimension mismatch");
  }
  auto noise = std::make_shared<SpdFactor>(noise_cov, "noise covariance");
  std::shared_ptr<SpdFactor> prior;
  if (ip->prior_cov) {
    prior = std::make_shared<SpdFactor>(*ip->prior_cov, "prior covariance");
  }
  TargetDensity t;
  t.name = "posterior";
  t.dim = d;
  t.log_density = [ip, noise, prior](const Eigen::Ref<const Vector> &u) {
    const Vector g = ip->forward(u);
    double v = 0.5 * noise->sqnorm(ip->y - g);
    if (prior) {
      v += 0.5 * prior->sqnorm(u - ip->prior_mean);
    }
    return std::isfinite(v) ? -v : -kInf;
  };
  t.inverse_problem = ip;
  return t;
}

/// Density of v where u = M v + b is distributed according to `base`, up to
/// the constant |det M|.
inline TargetDensity affine_pullback(const TargetDensity &base, const Matrix &m,
                                     const Vector &b) {
  if (m.rows() != base.dim || m.cols() != base.dim || b.size() != base.dim) {
    throw UsageError("affine_pullback: dimension mismatch");
  }
  TargetDensity t;
  t.name = base.name + "-affine";
  t.dim = base.dim;
  auto lp = base.log_density;
  t.log_density = [lp, m, b](const Eigen::Ref<const Vector> &v) {
    return lp(m * v + b);
  };
  if (base.gradient) {
    auto g = base.gradient;
    t.gradient = [g, m, b](const Eigen::Ref<const Vector> &v) -> Vector {
      return m.transpose() * g(m * v + b);
    };
  }
  if (base.gaussian) {
    const Matrix minv = m.inverse();
    t.gaussian = GaussianMoments{minv * (base.gaussian->m - b),
                                 minv * base.gaussian->S * minv.transpose()};
  }
  return t;
}

/// Same density multiplied by exp(log_c).
inline TargetDensity rescaled(const TargetDensity &base, double log_c) {
  TargetDensity t = base;
  auto lp = base.log_density;
  t.log_density = [lp, log_c](const Eigen::Ref<const Vector> &u) {
    return lp(u) + log_c;
  };
  return t;
}

} // namespace lcbs

#pragma once

#include "lcbs/core.hpp"
#include "lcbs/ensemble_stats.hpp"
#include "lcbs/preconditioners.hpp"
#include "lcbs/targets.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace lcbs {

/// Time derivative of a Gaussian's moments.
struct MomentRate {
  Vector dm;
  Matrix dS;
};

using MomentRhs = std::function<MomentRate(const GaussianMoments &)>;

namespace detail {

inline Matrix spd_inverse(const Matrix &a, const char *what) {
  return SpdFactor(a, what).inverse();
}

} // namespace detail

/// Mean-field preconditioner when rho = N(m_t, S_t) and pi = N(m, S).
inline Matrix closed_form_preconditioner(const PreconditionerSpec &spec,
                                         const GaussianMoments &rho,
                                         const GaussianMoments &pi) {
  if (auto *c = std::get_if<ConstantK>(&spec.kind)) {
    return c->K;
  }
  if (std::holds_alternative<UnweightedCov>(spec.kind)) {
    return rho.S;
  }
  const Matrix sinv = detail::spd_inverse(pi.S, "target covariance");
  const Matrix stinv = detail::spd_inverse(rho.S, "ensemble covariance");
  const double a = spec.alpha();
  const double lam = spec.lambda();
  const double loc = std::isfinite(lam) ? 1.0 + 1.0 / lam : 1.0;
  return detail::spd_inverse(a * sinv + loc * stinv, "weighted precision");
}

/// Mean-field weighted mean mu_{beta, kappa C / beta}(rho; u).
inline Vector closed_form_weighted_mean(const Vector &u,
                                        const GaussianMoments &rho,
                                        const GaussianMoments &pi, double beta,
                                        double kappa, const Matrix &c) {
  const Matrix sinv = detail::spd_inverse(pi.S, "target covariance");
  const Matrix stinv = detail::spd_inverse(rho.S, "ensemble covariance");
  const Matrix cinv = detail::spd_inverse(c, "preconditioner");
  const double r = beta / kappa;
  const Matrix prec = beta * sinv + stinv + r * cinv;
  return SpdFactor(prec, "weighted precision")
      .solve(beta * sinv * pi.m + stinv * rho.m + r * cinv * u);
}

inline MomentRate lcbs_moment_ode_rhs(const GaussianMoments &rho,
                                      const GaussianMoments &pi,
                                      const PreconditionerSpec &spec,
                                      double gamma, double kappa, double beta) {
  const Matrix c = closed_form_preconditioner(spec, rho, pi);
  const Matrix sinv = detail::spd_inverse(pi.S, "target covariance");
  const Matrix stinv = detail::spd_inverse(rho.S, "ensemble covariance");
  const Matrix cinv = detail::spd_inverse(c, "preconditioner");
  const Matrix p =
      detail::spd_inverse(beta * sinv + stinv + (beta / kappa) * cinv, "P");
  MomentRate out;
  out.dm = -(gamma * beta / kappa) * p * sinv * (rho.m - pi.m);
  const Matrix pcs = p * cinv * rho.S;
  const Matrix spc = rho.S * p * cinv;
  out.dS = 2.0 * (c - (gamma / kappa) * rho.S +
                  (gamma * beta / (2.0 * kappa * kappa)) * (pcs + spc));
  out.dS = symmetrized(out.dS);
  return out;
}

/// Moment ODEs of classical consensus-based sampling with parameter alpha'.
inline MomentRate cbs_moment_ode_rhs(const GaussianMoments &rho,
                                     const GaussianMoments &pi, double alpha) {
  const Matrix a = pi.S + alpha * rho.S;
  const Eigen::PartialPivLU<Matrix> lu(a);
  MomentRate out;
  out.dS = symmetrized(-2.0 * alpha * rho.S * lu.solve(rho.S - pi.S));
  out.dm = -alpha * rho.S * lu.solve(rho.m - pi.m);
  return out;
}

struct CbsEquivalence {
  double kappa;
  double beta;
  double lambda;
  double c;
};

/// Localized CBS parameters whose Gaussian moments follow CBS with
/// parameter alpha_cbs, accelerated in time by c.
inline CbsEquivalence cbs_equivalence_params(double alpha, double alpha_cbs) {
  if (!(alpha_cbs > 0.0) || !(alpha > alpha_cbs)) {
    throw UsageError("equivalence needs alpha > alpha' > 0");
  }
  return {alpha, alpha_cbs, alpha_cbs / (alpha - alpha_cbs),
          alpha_cbs / (alpha * (alpha_cbs + 1.0))};
}

/// Classical RK4 with fixed step; returns the state after every step,
/// starting with the initial one.
inline std::vector<GaussianMoments>
integrate_moments(const MomentRhs &rhs, const GaussianMoments &initial,
                  double dt, double t_end) {
  if (!(dt > 0.0) || !(t_end >= 0.0)) {
    throw UsageError("integrate_moments: need dt > 0 and T >= 0");
  }
  const auto n = static_cast<std::size_t>(std::llround(t_end / dt));
  std::vector<GaussianMoments> traj;
  traj.reserve(n + 1);
  traj.push_back(initial);
  GaussianMoments x = initial;
  auto axpy = [](const GaussianMoments &base, const MomentRate &k, double h) {
    return GaussianMoments{base.m + h * k.dm, base.S + h * k.dS};
  };
  for (std::size_t step = 1; step <= n; ++step) {
    const MomentRate k1 = rhs(x);
    const MomentRate k2 = rhs(axpy(x, k1, dt / 2));
    const MomentRate k3 = rhs(axpy(x, k2, dt / 2));
    const MomentRate k4 = rhs(axpy(x, k3, dt));
    x.m += dt / 6.0 * (k1.dm + 2.0 * k2.dm + 2.0 * k3.dm + k4.dm);
    x.S += dt / 6.0 * (k1.dS + 2.0 * k2.dS + 2.0 * k3.dS + k4.dS);
    x.S = symmetrized(x.S);
    Eigen::LLT<Matrix> llt(x.S);
    if (llt.info() != Eigen::Success || !x.S.allFinite()) {
      throw NotPositiveDefinite("covariance lost definiteness at step " +
                                std::to_string(step));
    }
    traj.push_back(x);
  }
  return traj;
}

namespace detail {

inline Vector potential_gradient(const TargetDensity &t, const Vector &v) {
  if (t.has_gradient()) {
    return -t.grad_log_pdf(v);
  }
  Vector g(v.size());
  for (Index k = 0; k < v.size(); ++k) {
    const double h = 1e-6 * (1.0 + std::abs(v(k)));
    Vector a = v, b = v;
    a(k) += h;
    b(k) -= h;
    g(k) = (t.potential(a) - t.potential(b)) / (2.0 * h);
  }
  return g;
}

inline double golden_section(const std::function<double(double)> &f, double a,
                             double b, double tol) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - r * (b - a);
  double d = a + r * (b - a);
  double fc = f(c);
  double fd = f(d);
  for (int it = 0; it < 500 && (b - a) > tol * (1.0 + std::abs(c)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

} // namespace detail

/// argmin_v V(v) + |v - u|^2_A / 2.
inline Vector prox(const TargetDensity &target, const Matrix &a,
                   const Vector &u) {
  const Index d = u.size();
  if (a.rows() != d || a.cols() != d) {
    throw UsageError("prox: dimension mismatch");
  }
  const SpdFactor fa(a, "prox metric");
  if (target.gaussian) {
    const Matrix sinv = detail::spd_inverse(target.gaussian->S, "target covariance");
    const Matrix ainv = fa.inverse();
    return SpdFactor(sinv + ainv, "prox system")
        .solve(sinv * target.gaussian->m + ainv * u);
  }
  auto objective = [&](const Vector &v) {
    return target.potential(v) + 0.5 * fa.sqnorm(v - u);
  };
  if (d == 1) {
    const double s = std::sqrt(a(0, 0));
    const double half = std::max(10.0 * s, 5.0);
    const int n = 4000;
    const double lo = u(0) - half;
    const double h = 2.0 * half / n;
    Vector v(1);
    double best = kInf;
    int arg = -1;
    for (int k = 0; k <= n; ++k) {
      v(0) = lo + k * h;
      const double f = objective(v);
      if (f < best) {
        best = f;
        arg = k;
      }
    }
    if (arg < 0) {
      throw ConvergenceError("prox: objective infinite on the search grid");
    }
    auto f1 = [&](double x) {
      Vector w(1);
      w(0) = x;
      return objective(w);
    };
    Vector out(1);
    out(0) = detail::golden_section(f1, lo + (arg - 1) * h, lo + (arg + 1) * h,
                                    1e-12);
    return out;
  }
  const Matrix ainv = fa.inverse();
  auto grad = [&](const Vector &v) -> Vector {
    return detail::potential_gradient(target, v) + ainv * (v - u);
  };
  Vector best_v;
  double best_f = kInf;
  bool converged_any = false;
  const Matrix sq = fa.lower();
  for (int start = 0; start < 5; ++start) {
    Vector v = u;
    if (start > 0) {
      const Index k = (start - 1) % d;
      v += (start <= 2 ? 1.0 : -1.0) * 0.5 * sq.col(k);
    }
    double fv = objective(v);
    bool converged = false;
    for (int it = 0; it < 200 && std::isfinite(fv); ++it) {
      const Vector g = grad(v);
      if (g.norm() < 1e-10 * (1.0 + v.norm())) {
        converged = true;
        break;
      }
      Matrix hess(d, d);
      for (Index k = 0; k < d; ++k) {
        const double h = 1e-5 * (1.0 + std::abs(v(k)));
        Vector p = v, m = v;
        p(k) += h;
        m(k) -= h;
        hess.col(k) = (grad(p) - grad(m)) / (2.0 * h);
      }
      hess = symmetrized(hess);
      Vector step;
      double shift = 0.0;
      for (int tries = 0; tries < 60; ++tries) {
        Eigen::LLT<Matrix> llt(hess + shift * Matrix::Identity(d, d));
        if (llt.info() == Eigen::Success) {
          step = -llt.solve(g);
          break;
        }
        shift = shift == 0.0 ? 1e-8 * (1.0 + hess.norm()) : 10.0 * shift;
      }
      if (step.size() == 0) {
        step = -g;
      }
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Vector cand = v + t * step;
        const double fc = objective(cand);
        if (fc <= fv + 1e-4 * t * g.dot(step)) {
          v = cand;
          fv = fc;
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) {
        converged = g.norm() < 1e-6 * (1.0 + v.norm());
        break;
      }
    }
    if (converged && fv < best_f) {
      best_f = fv;
      best_v = v;
      converged_any = true;
    }
  }
  if (!converged_any) {
    throw ConvergenceError("prox: Newton iteration did not converge");
  }
  return best_v;
}

/// |weighted mean with a = beta, A = kappa C / beta  -  prox^{kappa C}_V(u)|.
inline double laplace_gap(const TargetDensity &target,
                          const Eigen::Ref<const Ensemble> &u,
                          const Vector &anchor, double kappa, const Matrix &c,
                          double beta) {
  const Vector wm =
      weighted_mean(u, target, WeightSpec{beta, kappa * c / beta, anchor});
  return (wm - prox(target, kappa * c, anchor)).norm();
}

/// One-dimensional weighted mean under a density rho, by midpoint
/// quadrature on [lo, hi] with n cells.
inline double weighted_mean_quadrature_1d(const ScalarField &log_rho,
                                          const TargetDensity &target, double a,
                                          double big_a, double anchor,
                                          double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  std::vector<double> lw(static_cast<std::size_t>(n));
  std::vector<double> xs(static_cast<std::size_t>(n));
  double top = -kInf;
  Vector v(1);
  for (int k = 0; k < n; ++k) {
    const double x = lo + (k + 0.5) * h;
    v(0) = x;
    double l = log_rho(v) - 0.5 * (x - anchor) * (x - anchor) / big_a;
    if (a != 0.0) {
      l += a * target.log_pdf(v);
    }
    lw[static_cast<std::size_t>(k)] = l;
    xs[static_cast<std::size_t>(k)] = x;
    top = std::max(top, l);
  }
  if (!std::isfinite(top)) {
    throw DegenerateEnsemble("quadrature weights vanish");
  }
  double num = 0.0;
  double den = 0.0;
  for (std::size_t k = 0; k < lw.size(); ++k) {
    const double w = std::exp(lw[k] - top);
    num += w * xs[k];
    den += w;
  }
  return num / den;
}

/// Laplace gap with the weighted mean computed by quadrature against rho.
inline double laplace_gap_quadrature_1d(const TargetDensity &target,
                                        const ScalarField &log_rho,
                                        double anchor, double kappa, double c,
                                        double beta, double lo, double hi,
                                        int n) {
  const double wm = weighted_mean_quadrature_1d(log_rho, target, beta,
                                                kappa * c / beta, anchor, lo,
                                                hi, n);
  const Vector p = prox(target, Matrix::Constant(1, 1, kappa * c),
                        Vector::Constant(1, anchor));
  return std::abs(wm - p(0));
}

} // namespace lcbs

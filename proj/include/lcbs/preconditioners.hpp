#pragma once

#include "lcbs/core.hpp"
#include "lcbs/ensemble_stats.hpp"
#include "lcbs/targets.hpp"

#include <memory>
#include <string>
#include <variant>

namespace lcbs {

struct ConstantK {
  Matrix K;
};
struct UnweightedCov {};
struct WeightedCovAlpha {
  double alpha = 0.0;
};
/// Weights exp(-|v - U^i|^2_C / (2 lambda)) pi(v)^alpha, C the ensemble
/// covariance.
struct LocalizedWeightedCov {
  double alpha = 0.0;
  double lambda = kInf;
};

struct PreconditionerSpec {
  std::variant<ConstantK, UnweightedCov, WeightedCovAlpha, LocalizedWeightedCov>
      kind = UnweightedCov{};
  /// Keep only the leading terms of the divergence correction.
  bool truncate_small_terms = false;

  static PreconditionerSpec constant(Matrix k) { return {ConstantK{std::move(k)}}; }
  static PreconditionerSpec unweighted() { return {UnweightedCov{}}; }
  static PreconditionerSpec weighted(double alpha) {
    return {WeightedCovAlpha{alpha}};
  }
  static PreconditionerSpec localized(double alpha, double lambda) {
    return {LocalizedWeightedCov{alpha, lambda}};
  }

  bool is_constant() const { return std::holds_alternative<ConstantK>(kind); }

  /// alpha of the weighted kinds, 0 otherwise.
  double alpha() const {
    if (auto *w = std::get_if<WeightedCovAlpha>(&kind)) {
      return w->alpha;
    }
    if (auto *l = std::get_if<LocalizedWeightedCov>(&kind)) {
      return l->alpha;
    }
    return 0.0;
  }

  double lambda() const {
    if (auto *l = std::get_if<LocalizedWeightedCov>(&kind)) {
      return l->lambda;
    }
    return kInf;
  }

  /// True when the matrix depends on the anchor particle.
  bool anchor_dependent() const {
    return std::holds_alternative<LocalizedWeightedCov>(kind) &&
           std::isfinite(lambda());
  }

  void validate(Index d) const {
    if (auto *c = std::get_if<ConstantK>(&kind)) {
      if (c->K.rows() != d || c->K.cols() != d) {
        throw UsageError("constant preconditioner has wrong dimension");
      }
      SpdFactor check(c->K, "constant preconditioner");
    }
    if (!(alpha() >= 0.0)) {
      throw UsageError("preconditioner alpha must be nonnegative");
    }
    if (!(lambda() > 0.0)) {
      throw UsageError("preconditioner lambda must be positive");
    }
  }

  std::string describe() const {
    if (is_constant()) {
      return "constant";
    }
    if (std::holds_alternative<UnweightedCov>(kind)) {
      return "unweighted";
    }
    if (std::holds_alternative<WeightedCovAlpha>(kind)) {
      return "weighted(alpha=" + std::to_string(alpha()) + ")";
    }
    return "localized(alpha=" + std::to_string(alpha()) +
           ",lambda=" + std::to_string(lambda()) + ")";
  }
};

/// Preconditioner matrix at one anchor with a rectangular factor and its
/// Cholesky factorization.
struct PreconditionerEval {
  Matrix matrix;
  Matrix factor;
  SpdFactor chol;
  Vector weights; // empty for the constant kind
  Vector center;  // weighted mean used for the factor
};

/// Per-step state shared by all anchors: global covariance, its
/// factorization, log densities and the pairwise distance matrix.
class PreconditionerContext {
public:
  PreconditionerContext(const PreconditionerSpec &spec,
                        const Eigen::Ref<const Ensemble> &u,
                        const TargetDensity &target, Vector logp = Vector())
      : spec_(spec), u_(u), target_(target) {
    validate_ensemble(u_);
    spec_.validate(u_.rows());
    const Index d = u_.rows();
    const Index n = u_.cols();
    if (spec_.alpha() != 0.0) {
      logp_ = logp.size() == n ? std::move(logp) : target.log_pdf_columns(u_);
    }
    if (auto *c = std::get_if<ConstantK>(&spec_.kind)) {
      auto e = std::make_shared<PreconditionerEval>();
      e->matrix = c->K;
      e->chol = SpdFactor(c->K, "constant preconditioner");
      e->factor = e->chol.lower();
      shared_ = e;
      return;
    }
    if (n < d + 1) {
      throw DegenerateEnsemble("covariance preconditioner needs J >= d + 1");
    }
    global_mean_ = u_.rowwise().mean();
    if (spec_.anchor_dependent()) {
      global_cov_ = covariance(u_);
      require_well_conditioned(global_cov_, "ensemble covariance");
      global_chol_ = SpdFactor(global_cov_, "ensemble covariance");
      global_inv_ = global_chol_.inverse();
      pair_sq_ = pairwise_weighted_sqnorms(u_, global_chol_);
      return;
    }
    Vector w;
    if (spec_.alpha() == 0.0) {
      w = Vector::Constant(n, 1.0 / static_cast<double>(n));
    } else {
      w = normalize_log_weights(
          combine_log_weights(Vector::Zero(n), logp_, spec_.alpha()));
    }
    shared_ = std::make_shared<PreconditionerEval>(make_eval(std::move(w)));
  }

  const PreconditionerSpec &spec() const { return spec_; }
  const Vector &logp() const { return logp_; }

  PreconditionerEval evaluate(Index i) const {
    if (shared_) {
      return *shared_;
    }
    check_anchor(i);
    return make_eval(anchor_weights(i));
  }

  /// Shared evaluation for anchor-independent kinds, null otherwise.
  const PreconditionerEval *shared() const { return shared_.get(); }

  Vector anchor_weights(Index i) const {
    const double lam = spec_.lambda();
    Vector dist = pair_sq_.col(i) / lam;
    return normalize_log_weights(
        combine_log_weights(dist, logp_, spec_.alpha()));
  }

  /// Divergence of the preconditioner with respect to particle i.
  Vector correction(Index i, const PreconditionerEval &e) const {
    check_anchor(i);
    const Index d = u_.rows();
    const Index n = u_.cols();
    if (spec_.is_constant()) {
      return Vector::Zero(d);
    }
    const double alpha = spec_.alpha();
    const bool truncate = spec_.truncate_small_terms;
    if (alpha != 0.0 && !truncate && !target_.has_gradient()) {
      throw Unsupported("correction term with alpha != 0 needs a gradient");
    }
    const Vector &w = e.weights;
    const double wi = w(i);
    const Vector uci = u_.col(i) - e.center;
    Vector div = wi * static_cast<double>(d + 1) * uci;
    if (spec_.anchor_dependent()) {
      const Matrix uc = u_.colwise() - e.center;
      const double lam = spec_.lambda();
      const Vector q = global_chol_.whiten(uc).colwise().squaredNorm().transpose();
      div += (uc * w.cwiseProduct(q)) / lam;
      if (!truncate) {
        const double scale = 1.0 / (lam * static_cast<double>(n));
        const Vector ugi = u_.col(i) - global_mean_;
        const Matrix &cw = e.matrix;
        const Matrix inner = uci * uci.transpose() + cw;
        div -= scale * (cw * (global_inv_ * (inner * (global_inv_ * ugi))));
        const Matrix r = (-u_).colwise() + u_.col(i);
        const Matrix cinv_r = global_inv_ * r;
        const Vector a = (uc.cwiseProduct(cinv_r)).colwise().sum().transpose();
        const Vector s = (cinv_r.transpose() * ugi);
        div += scale * (uc * w.cwiseProduct(a).cwiseProduct(s));
      }
    }
    if (alpha != 0.0 && !truncate) {
      const Vector g = target_.grad_log_pdf(u_.col(i));
      div += alpha * wi * (uci * (uci.dot(g)) - e.matrix * g);
    }
    return div;
  }

private:
  void check_anchor(Index i) const {
    if (i < 0 || i >= u_.cols()) {
      throw UsageError("anchor index missing or out of range");
    }
  }

  PreconditionerEval make_eval(Vector w) const {
    WeightedStats s = stats_from_weights(u_, std::move(w));
    require_well_conditioned(s.cov, "weighted covariance");
    PreconditionerEval e;
    e.chol = SpdFactor(s.cov, "weighted covariance");
    e.matrix = std::move(s.cov);
    e.factor = std::move(s.factor);
    e.weights = std::move(s.weights);
    e.center = std::move(s.mean);
    return e;
  }

  PreconditionerSpec spec_;
  Ensemble u_;
  const TargetDensity &target_;
  Vector logp_;
  Vector global_mean_;
  Matrix global_cov_;
  SpdFactor global_chol_;
  Matrix global_inv_;
  Matrix pair_sq_;
  std::shared_ptr<const PreconditionerEval> shared_;
};

/// Preconditioner at anchor i; i is ignored by anchor-independent kinds.
inline PreconditionerEval evaluate(const PreconditionerSpec &spec,
                                   const Eigen::Ref<const Ensemble> &u,
                                   Index i, const TargetDensity &target) {
  PreconditionerContext ctx(spec, u, target);
  if (spec.anchor_dependent() && (i < 0 || i >= u.cols())) {
    throw UsageError("anchor index required for a localized preconditioner");
  }
  return ctx.evaluate(i);
}

inline Vector correction_divergence(const PreconditionerSpec &spec,
                                    const Eigen::Ref<const Ensemble> &u,
                                    Index i, const TargetDensity &target) {
  PreconditionerContext ctx(spec, u, target);
  return ctx.correction(i, ctx.evaluate(i));
}

/// Central-difference divergence of U^i -> evaluate(spec, U, i).matrix.
inline Vector correction_divergence_fd(const PreconditionerSpec &spec,
                                       const Eigen::Ref<const Ensemble> &u,
                                       Index i, const TargetDensity &target,
                                       double h) {
  if (!(h > 0.0)) {
    throw UsageError("finite-difference step must be positive");
  }
  const Index d = u.rows();
  Vector div = Vector::Zero(d);
  if (spec.is_constant()) {
    return div;
  }
  Ensemble up = u;
  for (Index l = 0; l < d; ++l) {
    up(l, i) = u(l, i) + h;
    const Matrix cp = evaluate(spec, up, i, target).matrix;
    up(l, i) = u(l, i) - h;
    const Matrix cm = evaluate(spec, up, i, target).matrix;
    up(l, i) = u(l, i);
    div += (cp.col(l) - cm.col(l)) / (2.0 * h);
  }
  return div;
}

} // namespace lcbs

#pragma once

#include "lcbs/core.hpp"
#include "lcbs/ensemble_stats.hpp"
#include "lcbs/preconditioners.hpp"
#include "lcbs/random.hpp"
#include "lcbs/targets.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lcbs {

/// Random inputs of one time step. noise(i, xi) fills the standard normal
/// vector of particle i; batch(i) returns the stream for its batch draws.
struct StepDraws {
  std::function<void(Index, Eigen::Ref<Vector>)> noise;
  std::function<RandomStream(Index)> batch;

  static StepDraws keyed(std::uint64_t seed, std::uint32_t run,
                         std::uint32_t step) {
    StepDraws s;
    s.noise = [=](Index i, Eigen::Ref<Vector> xi) {
      RandomStream r(seed, run, step, static_cast<std::uint32_t>(i),
                     DrawKind::Noise);
      r.fill_normal(xi);
    };
    s.batch = [=](Index i) {
      return RandomStream(seed, run, step, static_cast<std::uint32_t>(i),
                          DrawKind::Batch);
    };
    return s;
  }

  /// Zero noise with keyed batch draws.
  static StepDraws noiseless(std::uint64_t seed = 0, std::uint32_t step = 0) {
    StepDraws s = keyed(seed, 0, step);
    s.noise = [](Index, Eigen::Ref<Vector> xi) { xi.setZero(); };
    return s;
  }
};

struct SamplerConfig {
  double gamma = std::numeric_limits<double>::quiet_NaN(); // NaN: default
  double kappa = 0.01;
  double beta = 5.0;
  double nu = 1.0;
  std::optional<bool> exclude_self;
  double dt = 0.01;
  std::size_t n_steps = 200;
  Index n_particles = 500;
  std::uint64_t seed = 0;
  PreconditionerSpec preconditioner;
  Vector init_mean; // empty: zero
  Matrix init_cov;  // empty: I / 2
  bool use_correction = true;
  std::size_t n_runs = 1;
  bool add_noise = true;
  bool record_trajectory = false;
  std::size_t n_threads = 1;

  /// Self-interaction is excluded from the drift mean unless asked for.
  bool resolved_exclude_self() const { return exclude_self.value_or(true); }
};

/// gamma for which a Gaussian target is stationary under the mean-field
/// dynamics with the given preconditioner.
inline double gamma_default(const PreconditionerSpec &spec, double kappa,
                            double beta) {
  const double tail = beta / (beta + 1.0);
  if (spec.is_constant()) {
    throw Unsupported("no stationary gamma exists for a constant preconditioner");
  }
  if (std::holds_alternative<UnweightedCov>(spec.kind)) {
    return kappa + tail;
  }
  const double a = spec.alpha();
  const double lam = spec.lambda();
  const double inv_lam = std::isfinite(lam) ? 1.0 / lam : 0.0;
  return kappa / (inv_lam + a + 1.0) + tail;
}

inline double resolved_gamma(const SamplerConfig &c) {
  return std::isnan(c.gamma) ? gamma_default(c.preconditioner, c.kappa, c.beta)
                             : c.gamma;
}

inline void validate_config(const SamplerConfig &c) {
  auto positive = [](double x, const char *name) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw UsageError(std::string(name) + " must be positive and finite");
    }
  };
  positive(c.kappa, "kappa");
  positive(c.beta, "beta");
  positive(c.dt, "dt");
  if (!std::isnan(c.gamma)) {
    positive(c.gamma, "gamma");
  }
  if (!(c.nu > 0.0 && c.nu <= 1.0)) {
    throw UsageError("nu must lie in (0, 1]");
  }
  if (c.n_particles < 1 || c.n_runs < 1) {
    throw UsageError("need at least one particle and one run");
  }
}

namespace detail {

inline void check_finite(const Eigen::Ref<const Vector> &v, std::size_t step,
                         Index i) {
  if (!v.allFinite()) {
    throw DivergedRun(step, "particle " + std::to_string(i) +
                                " became non-finite at step " +
                                std::to_string(step));
  }
}

/// U^i + dt * drift + sqrt(2 dt * scale) * factor * xi.
inline Vector advance(const Eigen::Ref<const Vector> &ui,
                      const Eigen::Ref<const Vector> &drift,
                      const Eigen::Ref<const Matrix> &factor, double dt,
                      double noise_scale, const StepDraws &draws, Index i,
                      std::size_t step) {
  Vector next = ui + dt * drift;
  if (noise_scale > 0.0 && factor.cols() > 0) {
    Vector xi(factor.cols());
    draws.noise(i, xi);
    next.noalias() += std::sqrt(2.0 * dt * noise_scale) * (factor * xi);
  }
  check_finite(next, step, i);
  return next;
}

/// Mean over the listed columns with the given log-weights.
inline Vector subset_mean(const Eigen::Ref<const Ensemble> &u,
                          const std::vector<Index> &members,
                          const Eigen::Ref<const Vector> &logw) {
  double top = -kInf;
  for (Index j : members) {
    top = std::max(top, logw(j));
  }
  if (!std::isfinite(top)) {
    throw DegenerateEnsemble("all particle weights vanish");
  }
  const Vector base = u.col(members.front());
  Vector acc = Vector::Zero(u.rows());
  double total = 0.0;
  for (Index j : members) {
    const double shifted = logw(j) - top;
    if (shifted < kLogWeightFloor) {
      continue;
    }
    const double w = std::exp(shifted);
    total += w;
    acc.noalias() += w * (u.col(j) - base);
  }
  return base + acc / total;
}

inline std::vector<Index> all_indices(Index n) {
  std::vector<Index> out(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    out[static_cast<std::size_t>(j)] = j;
  }
  return out;
}

} // namespace detail

/// One Euler-Maruyama step of localized consensus-based sampling.
inline Ensemble step_localized_cbs(const Eigen::Ref<const Ensemble> &u,
                                   const TargetDensity &target,
                                   const SamplerConfig &config,
                                   const StepDraws &draws,
                                   std::size_t step = 0) {
  validate_ensemble(u);
  validate_config(config);
  const Index n = u.cols();
  const double gamma = resolved_gamma(config);
  const double kappa = config.kappa;
  const double beta = config.beta;
  const bool exclude = config.resolved_exclude_self();
  const Vector logp = target.log_pdf_columns(u);
  const PreconditionerContext ctx(config.preconditioner, u, target, logp);
  Matrix white;
  if (ctx.shared()) {
    white = ctx.shared()->chol.whiten(u);
  }
  Ensemble out(u.rows(), n);
  parallel_for(static_cast<std::size_t>(n), config.n_threads, [&](std::size_t k) {
    const auto i = static_cast<Index>(k);
    PreconditionerEval local;
    const PreconditionerEval *e = ctx.shared();
    if (!e) {
      local = ctx.evaluate(i);
      e = &local;
    }
    const Vector dist =
        e == ctx.shared()
            ? Vector((white.colwise() - white.col(i)).colwise().squaredNorm())
            : sqnorms_to_anchor(u, e->chol, u.col(i));
    Vector logw = combine_log_weights((beta / kappa) * dist, logp, beta);
    Vector mu;
    if (config.nu < 1.0) {
      RandomStream rs = draws.batch(i);
      mu = detail::subset_mean(u, draw_batch(n, i, config.nu, exclude, rs), logw);
    } else {
      if (exclude) {
        if (n < 2) {
          throw UsageError("self-exclusion needs at least two particles");
        }
        logw(i) = -kInf;
      }
      const Vector w = normalize_log_weights(logw);
      mu = u.col(i) + (u.colwise() - u.col(i)) * w;
    }
    Vector drift = -(gamma / kappa) * (u.col(i) - mu);
    if (config.use_correction) {
      drift += ctx.correction(i, *e);
    }
    out.col(i) = detail::advance(u.col(i), drift, e->factor, config.dt,
                                 config.add_noise ? 1.0 : 0.0, draws, i, step);
  });
  return out;
}

namespace detail {

/// Polarized CBS with kernel exp(-|v - u|^2_D / (2 lambda)); lambda = inf
/// gives classical CBS.
inline Ensemble polarized_step(const Eigen::Ref<const Ensemble> &u,
                               const TargetDensity &target, double alpha,
                               double lambda, const Matrix &dmat, double dt,
                               const StepDraws &draws, std::size_t step,
                               bool require_spd, std::size_t n_threads) {
  validate_ensemble(u);
  if (!(alpha >= 0.0) || !(lambda > 0.0) || !(dt > 0.0)) {
    throw UsageError("polarized step: need alpha >= 0, lambda > 0, dt > 0");
  }
  const Index d = u.rows();
  const Index n = u.cols();
  const Vector logp =
      alpha != 0.0 ? target.log_pdf_columns(u) : Vector::Zero(n);
  Ensemble out(d, n);
  if (!std::isfinite(lambda)) {
    const WeightedStats s = stats_from_weights(
        u, normalize_log_weights(combine_log_weights(Vector::Zero(n), logp, alpha)));
    if (require_spd) {
      if (n < d + 1) {
        throw DegenerateEnsemble("weighted covariance needs J >= d + 1");
      }
      require_well_conditioned(s.cov, "weighted covariance");
    }
    parallel_for(static_cast<std::size_t>(n), n_threads, [&](std::size_t k) {
      const auto i = static_cast<Index>(k);
      const Vector drift = -(u.col(i) - s.mean);
      out.col(i) = advance(u.col(i), drift, s.factor, dt, alpha + 1.0, draws,
                           i, step);
    });
    return out;
  }
  const Matrix dm = dmat.size() ? dmat : Matrix::Identity(d, d);
  const Matrix pair = pairwise_weighted_sqnorms(u, dm) / lambda;
  parallel_for(static_cast<std::size_t>(n), n_threads, [&](std::size_t k) {
    const auto i = static_cast<Index>(k);
    const WeightedStats s = stats_from_weights(
        u, normalize_log_weights(combine_log_weights(pair.col(i), logp, alpha)));
    const Vector drift = -(u.col(i) - s.mean);
    out.col(i) =
        advance(u.col(i), drift, s.factor, dt, alpha + 1.0, draws, i, step);
  });
  return out;
}

} // namespace detail

/// Classical consensus-based sampling with weights pi^alpha.
inline Ensemble step_cbs(const Eigen::Ref<const Ensemble> &u,
                         const TargetDensity &target, double alpha, double dt,
                         const StepDraws &draws, std::size_t step = 0,
                         std::size_t n_threads = 1) {
  return detail::polarized_step(u, target, alpha, kInf, Matrix(), dt, draws,
                                step, true, n_threads);
}

inline Ensemble step_polarized_cbs(const Eigen::Ref<const Ensemble> &u,
                                   const TargetDensity &target, double alpha,
                                   double lambda, const Matrix &dmat, double dt,
                                   const StepDraws &draws, std::size_t step = 0,
                                   std::size_t n_threads = 1) {
  if (dmat.size()) {
    SpdFactor check(dmat, "polarized distance matrix");
  }
  return detail::polarized_step(u, target, alpha, lambda, dmat, dt, draws, step,
                                false, n_threads);
}

/// Localized ALDI for y = G(u) + noise with localization weights
/// exp(-|v - u|^2_D / (2 lambda)).
inline Ensemble step_localized_aldi(const Eigen::Ref<const Ensemble> &u,
                                    const InverseProblem &ip, double lambda,
                                    const Matrix &dmat, double dt,
                                    const StepDraws &draws,
                                    std::size_t step = 0,
                                    std::size_t n_threads = 1) {
  validate_ensemble(u);
  if (!(lambda > 0.0) || !(dt > 0.0)) {
    throw UsageError("localized ALDI: need lambda > 0 and dt > 0");
  }
  const Index d = u.rows();
  const Index n = u.cols();
  const Matrix dm = dmat.size() ? dmat : Matrix::Identity(d, d);
  const SpdFactor dchol(dm, "ALDI distance matrix");
  const SpdFactor noise(ip.noise_cov, "noise covariance");
  std::optional<SpdFactor> prior;
  if (ip.prior_cov) {
    prior.emplace(*ip.prior_cov, "prior covariance");
  }
  Matrix g(ip.y.size(), n);
  for (Index j = 0; j < n; ++j) {
    g.col(j) = ip.forward(u.col(j));
  }
  if (!g.allFinite()) {
    throw DivergedRun(step, "forward map returned non-finite values");
  }
  // Gamma^{-1} (G(U^i) - y) for every particle.
  const Matrix misfit = noise.solve(g.colwise() - ip.y);
  Matrix pair;
  if (std::isfinite(lambda)) {
    pair = pairwise_weighted_sqnorms(u, dchol) / lambda;
  }
  Ensemble out(d, n);
  parallel_for(static_cast<std::size_t>(n), n_threads, [&](std::size_t k) {
    const auto i = static_cast<Index>(k);
    const Vector w =
        std::isfinite(lambda)
            ? normalize_log_weights(-0.5 * pair.col(i))
            : Vector(Vector::Constant(n, 1.0 / static_cast<double>(n)));
    const WeightedStats s = stats_from_weights(u, w);
    const Vector gmean = g * w;
    const Matrix gfac = (g.colwise() - gmean) * w.cwiseSqrt().asDiagonal();
    Vector drift = -(s.factor * (gfac.transpose() * misfit.col(i)));
    if (prior) {
      drift -= s.cov * prior->solve(u.col(i) - ip.prior_mean);
    }
    const Matrix uc = u.colwise() - s.mean;
    drift += w(i) * static_cast<double>(d + 1) * uc.col(i);
    if (std::isfinite(lambda)) {
      const Vector q = dchol.whiten(uc).colwise().squaredNorm().transpose();
      drift += (uc * w.cwiseProduct(q)) / lambda;
    }
    out.col(i) = detail::advance(u.col(i), drift, s.factor, dt, 1.0, draws, i,
                                 step);
  });
  return out;
}

/// dU = [C grad log pi + div C] dt + sqrt(2 C) dW with an ensemble
/// preconditioner C.
inline Ensemble step_preconditioned_langevin(
    const Eigen::Ref<const Ensemble> &u, const TargetDensity &target,
    const PreconditionerSpec &spec, double dt, const StepDraws &draws,
    std::size_t step = 0, std::size_t n_threads = 1) {
  validate_ensemble(u);
  if (!target.has_gradient()) {
    throw Unsupported("Langevin sampling needs a target gradient");
  }
  if (!(dt > 0.0)) {
    throw UsageError("dt must be positive");
  }
  const PreconditionerContext ctx(spec, u, target);
  Ensemble out(u.rows(), u.cols());
  parallel_for(static_cast<std::size_t>(u.cols()), n_threads, [&](std::size_t k) {
    const auto i = static_cast<Index>(k);
    PreconditionerEval local;
    const PreconditionerEval *e = ctx.shared();
    if (!e) {
      local = ctx.evaluate(i);
      e = &local;
    }
    const Vector drift =
        e->matrix * target.grad_log_pdf(u.col(i)) + ctx.correction(i, *e);
    out.col(i) = detail::advance(u.col(i), drift, e->factor, dt, 1.0, draws, i,
                                 step);
  });
  return out;
}

// Sampler selection for run().

struct LocalizedCbsMethod {};
struct CbsMethod {
  double alpha = 10.0;
};
struct PolarizedCbsMethod {
  double alpha = 10.0;
  double lambda = 0.005;
  Matrix D; // empty: identity
};
struct LocalizedAldiMethod {
  double lambda = 0.02;
  Matrix D; // empty: identity
};
struct LangevinMethod {};

using SamplerMethod = std::variant<LocalizedCbsMethod, CbsMethod,
                                   PolarizedCbsMethod, LocalizedAldiMethod,
                                   LangevinMethod>;

inline std::string method_name(const SamplerMethod &m) {
  switch (m.index()) {
  case 0:
    return "localized-cbs";
  case 1:
    return "cbs";
  case 2:
    return "polarized-cbs";
  case 3:
    return "localized-aldi";
  default:
    return "langevin";
  }
}

struct RunRecord {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::size_t diverged_step = 0;
  std::string message;
  double wall_seconds = 0.0;
};

struct RunResult {
  /// d x M: every particle at every step of the final quarter of each
  /// surviving run.
  Matrix aggregated_samples;
  /// Per run: ensemble mean and covariance after each step (index 0 is the
  /// initial ensemble).
  std::vector<std::vector<GaussianMoments>> per_step_moments;
  /// Per run, when requested: the ensemble after each step.
  std::vector<std::vector<Ensemble>> trajectory;
  std::vector<Ensemble> final_ensembles;
  std::vector<RunRecord> runs;
  std::vector<std::string> warnings;
  std::string rng_fingerprint;

  std::size_t n_diverged() const {
    std::size_t k = 0;
    for (const auto &r : runs) {
      k += r.diverged ? 1 : 0;
    }
    return k;
  }
};

/// Number of final steps that are aggregated.
inline std::size_t aggregation_window(std::size_t n_steps) {
  return (n_steps + 3) / 4;
}

inline Ensemble initial_ensemble(const SamplerConfig &c, Index d,
                                 std::uint32_t run) {
  const Vector m = c.init_mean.size() ? c.init_mean : Vector(Vector::Zero(d));
  const Matrix s =
      c.init_cov.size() ? c.init_cov : Matrix(0.5 * Matrix::Identity(d, d));
  if (m.size() != d || s.rows() != d || s.cols() != d) {
    throw UsageError("initial distribution has the wrong dimension");
  }
  const Matrix l = SpdFactor(s, "initial covariance").lower();
  Ensemble u(d, c.n_particles);
  Vector z(d);
  for (Index j = 0; j < c.n_particles; ++j) {
    RandomStream r(c.seed, run, 0, static_cast<std::uint32_t>(j), DrawKind::Init);
    r.fill_normal(z);
    u.col(j) = m + l * z;
  }
  return u;
}

inline Ensemble step_method(const SamplerMethod &method,
                            const Eigen::Ref<const Ensemble> &u,
                            const TargetDensity &target,
                            const SamplerConfig &config, const StepDraws &draws,
                            std::size_t step, std::size_t n_threads) {
  return std::visit(
      [&](const auto &m) -> Ensemble {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LocalizedCbsMethod>) {
          SamplerConfig c = config;
          c.n_threads = n_threads;
          return step_localized_cbs(u, target, c, draws, step);
        } else if constexpr (std::is_same_v<M, CbsMethod>) {
          return step_cbs(u, target, m.alpha, config.dt, draws, step, n_threads);
        } else if constexpr (std::is_same_v<M, PolarizedCbsMethod>) {
          return step_polarized_cbs(u, target, m.alpha, m.lambda, m.D, config.dt,
                                    draws, step, n_threads);
        } else if constexpr (std::is_same_v<M, LocalizedAldiMethod>) {
          if (!target.inverse_problem) {
            throw Unsupported("localized ALDI needs an inverse-problem target");
          }
          return step_localized_aldi(u, *target.inverse_problem, m.lambda, m.D,
                                     config.dt, draws, step, n_threads);
        } else {
          return step_preconditioned_langevin(u, target, config.preconditioner,
                                              config.dt, draws, step, n_threads);
        }
      },
      method);
}

/// Runs n_runs independent simulations and aggregates the final quarter of
/// each. Diverged runs are excluded with a warning.
inline RunResult run(const SamplerMethod &method, const TargetDensity &target,
                     const SamplerConfig &config) {
  validate_config(config);
  const Index d = target.dim;
  if (d < 1) {
    throw UsageError("target dimension must be positive");
  }
  if (std::holds_alternative<LocalizedCbsMethod>(method) ||
      std::holds_alternative<CbsMethod>(method)) {
    if (!config.preconditioner.is_constant() && config.n_particles < d + 1) {
      throw UsageError("covariance preconditioners need J >= d + 1 particles");
    }
    config.preconditioner.validate(d);
  }
  if (std::holds_alternative<LangevinMethod>(method) && !target.has_gradient()) {
    throw Unsupported("Langevin sampling needs a target gradient");
  }
  const std::size_t n_runs = config.n_runs;
  const std::size_t window = aggregation_window(config.n_steps);
  const std::size_t first_kept = config.n_steps - window + 1;
  const std::size_t run_threads = n_runs > 1 ? config.n_threads : 1;
  const std::size_t step_threads = n_runs > 1 ? 1 : config.n_threads;

  RunResult result;
  result.runs.resize(n_runs);
  result.per_step_moments.resize(n_runs);
  result.final_ensembles.resize(n_runs);
  if (config.record_trajectory) {
    result.trajectory.resize(n_runs);
  }
  std::vector<Matrix> kept(n_runs);

  parallel_for(n_runs, run_threads, [&](std::size_t r) {
    const auto t0 = std::chrono::steady_clock::now();
    auto &rec = result.runs[r];
    rec.run = r;
    rec.seed = config.seed;
    const auto run_id = static_cast<std::uint32_t>(r);
    Ensemble u = initial_ensemble(config, d, run_id);
    auto &moments = result.per_step_moments[r];
    moments.reserve(config.n_steps + 1);
    moments.push_back({mean(u), covariance(u)});
    Matrix buf(d, static_cast<Index>(window) * u.cols());
    if (config.record_trajectory) {
      result.trajectory[r].push_back(u);
    }
    try {
      for (std::size_t n = 1; n <= config.n_steps; ++n) {
        const auto draws =
            StepDraws::keyed(config.seed, run_id, static_cast<std::uint32_t>(n));
        u = step_method(method, u, target, config, draws, n, step_threads);
        moments.push_back({mean(u), covariance(u)});
        if (config.record_trajectory) {
          result.trajectory[r].push_back(u);
        }
        if (n >= first_kept) {
          buf.middleCols(static_cast<Index>(n - first_kept) * u.cols(), u.cols()) = u;
        }
      }
      kept[r] = std::move(buf);
    } catch (const DivergedRun &e) {
      rec.diverged = true;
      rec.diverged_step = e.step();
      rec.message = e.what();
    } catch (const DegenerateEnsemble &e) {
      rec.diverged = true;
      rec.diverged_step = moments.size();
      rec.message = e.what();
    }
    result.final_ensembles[r] = u;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  Index total = 0;
  for (std::size_t r = 0; r < n_runs; ++r) {
    if (result.runs[r].diverged) {
      result.warnings.push_back("run " + std::to_string(r) +
                                " excluded: " + result.runs[r].message);
    } else {
      total += kept[r].cols();
    }
  }
  if (result.n_diverged() == n_runs) {
    throw AllRunsDiverged("all " + std::to_string(n_runs) + " runs diverged");
  }
  result.aggregated_samples.resize(d, total);
  Index at = 0;
  for (std::size_t r = 0; r < n_runs; ++r) {
    if (!result.runs[r].diverged) {
      result.aggregated_samples.middleCols(at, kept[r].cols()) = kept[r];
      at += kept[r].cols();
    }
  }
  result.rng_fingerprint = "philox4x32-10 seed=" + std::to_string(config.seed) +
                           " runs=" + std::to_string(n_runs);
  return result;
}

struct McmcOptions {
  Vector init;           // empty: zero
  std::size_t burn_in = 0;
  std::size_t thin = 1;
  Matrix proposal_cov;   // empty: identity (isotropic)
  std::uint32_t chain = 0;
};

struct McmcResult {
  Matrix samples;
  double acceptance_rate = 0.0;
  double proposal_scale = 0.0;
};

/// Random-walk Metropolis with proposals v + scale * L z, L L^T the
/// proposal covariance. Runs burn_in + n_steps iterations and keeps every
/// thin-th state after burn-in.
inline McmcResult rw_metropolis(const TargetDensity &target,
                                std::size_t n_steps, double proposal_scale,
                                std::uint64_t seed,
                                const McmcOptions &opts = {}) {
  if (!(proposal_scale > 0.0)) {
    throw UsageError("proposal scale must be positive");
  }
  if (opts.thin < 1) {
    throw UsageError("thinning must be at least 1");
  }
  const Index d = target.dim;
  Vector x = opts.init.size() ? opts.init : Vector(Vector::Zero(d));
  const Matrix l = opts.proposal_cov.size()
                       ? SpdFactor(opts.proposal_cov, "proposal covariance").lower()
                       : Matrix(Matrix::Identity(d, d));
  double lp = target.log_pdf(x);
  if (!std::isfinite(lp)) {
    throw UsageError("Metropolis chain must start inside the support");
  }
  RandomStream rng(seed, opts.chain, 0, 0, DrawKind::Mcmc);
  McmcResult res;
  res.proposal_scale = proposal_scale;
  res.samples.resize(d, static_cast<Index>(n_steps / opts.thin));
  std::size_t accepted = 0;
  Vector z(d);
  Index kept = 0;
  const std::size_t total = opts.burn_in + n_steps;
  for (std::size_t it = 0; it < total; ++it) {
    rng.fill_normal(z);
    const Vector y = x + proposal_scale * (l * z);
    const double ly = target.log_pdf(y);
    if (std::log(rng.uniform()) < ly - lp) {
      x = y;
      lp = ly;
      if (it >= opts.burn_in) {
        ++accepted;
      }
    }
    if (it >= opts.burn_in) {
      const std::size_t k = it - opts.burn_in;
      if ((k + 1) % opts.thin == 0 && kept < res.samples.cols()) {
        res.samples.col(kept++) = x;
      }
    }
  }
  res.acceptance_rate =
      n_steps ? static_cast<double>(accepted) / static_cast<double>(n_steps) : 0.0;
  return res;
}

/// Searches a proposal scale whose pilot acceptance rate lies in [lo, hi].
inline double tune_proposal_scale(const TargetDensity &target, std::uint64_t seed,
                                  const McmcOptions &opts = {},
                                  std::size_t pilot = 2000, double lo = 0.2,
                                  double hi = 0.4) {
  double log_s = std::log(2.38 / std::sqrt(static_cast<double>(target.dim)));
  double step = 1.0;
  int direction = 0;
  McmcOptions o = opts;
  o.burn_in = pilot / 4;
  for (int it = 0; it < 40; ++it) {
    o.chain = 1000u + static_cast<std::uint32_t>(it);
    const double rate = rw_metropolis(target, pilot, std::exp(log_s), seed, o)
                            .acceptance_rate;
    if (rate >= lo && rate <= hi) {
      return std::exp(log_s);
    }
    const int dir = rate > hi ? 1 : -1;
    if (direction != 0 && dir != direction) {
      step *= 0.5;
    }
    direction = dir;
    log_s += dir * step;
  }
  return std::exp(log_s);
}

} // namespace lcbs

#include "lcbs/gaussian_theory.hpp"
#include "lcbs/samplers.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <atomic>

using namespace lcbs;
using lcbs::testing::normal_matrix;
using lcbs::testing::random_spd;
using lcbs::testing::rel_err;

namespace {

TargetDensity flat_target(Index d) {
  TargetDensity t;
  t.name = "flat";
  t.dim = d;
  t.log_density = [](const Eigen::Ref<const Vector> &) { return 0.0; };
  t.gradient = [d](const Eigen::Ref<const Vector> &) { return Vector(Vector::Zero(d)); };
  return t;
}

const TargetDensity kHalfNormal =
    gaussian_target(Vector::Zero(1), Matrix::Constant(1, 1, 0.5));

SamplerConfig small_config() {
  SamplerConfig c;
  c.n_particles = 40;
  c.n_steps = 12;
  c.seed = 17;
  return c;
}

} // namespace

TEST(GammaDefault, Values) {
  EXPECT_NEAR(gamma_default(PreconditionerSpec::unweighted(), 0.01, 5.0),
              0.01 + 5.0 / 6.0, 1e-15);
  EXPECT_NEAR(gamma_default(PreconditionerSpec::unweighted(), 0.01, 5.0), 0.8433, 1e-4);
  EXPECT_NEAR(gamma_default(PreconditionerSpec::weighted(2.0), 0.3, 1.0),
              0.1 + 0.5, 1e-15);
  EXPECT_NEAR(gamma_default(PreconditionerSpec::localized(1.0, 0.5), 0.4, 3.0),
              0.1 + 0.75, 1e-15);
}

TEST(GammaDefault, Reductions) {
  for (double kappa : {0.01, 0.3, 2.0}) {
    for (double beta : {0.5, 5.0}) {
      EXPECT_EQ(gamma_default(PreconditionerSpec::weighted(0.0), kappa, beta),
                gamma_default(PreconditionerSpec::unweighted(), kappa, beta));
      EXPECT_EQ(gamma_default(PreconditionerSpec::localized(1.5, kInf), kappa, beta),
                gamma_default(PreconditionerSpec::weighted(1.5), kappa, beta));
    }
  }
  EXPECT_THROW(
      gamma_default(PreconditionerSpec::constant(Matrix::Identity(1, 1)), 0.1, 1.0),
      Unsupported);
}

TEST(SamplerConfig, SelfExclusionDefault) {
  SamplerConfig c;
  EXPECT_TRUE(c.resolved_exclude_self());
  c.nu = 0.5;
  EXPECT_TRUE(c.resolved_exclude_self());
  c.exclude_self = false;
  EXPECT_FALSE(c.resolved_exclude_self());
}

TEST(SamplerConfig, Validation) {
  SamplerConfig c;
  c.nu = 0.0;
  EXPECT_THROW(validate_config(c), UsageError);
  c.nu = 1.5;
  EXPECT_THROW(validate_config(c), UsageError);
  c = SamplerConfig{};
  c.kappa = -1.0;
  EXPECT_THROW(validate_config(c), UsageError);
  c = SamplerConfig{};
  c.dt = 0.0;
  EXPECT_THROW(validate_config(c), UsageError);
}

TEST(LocalizedCbs, SymmetricPairStaysSymmetric) {
  const auto t = flat_target(1);
  Ensemble u(1, 2);
  u << -0.7, 0.7;
  SamplerConfig c;
  c.gamma = 0.9;
  c.exclude_self = false;
  const Ensemble out = step_localized_cbs(u, t, c, StepDraws::noiseless());
  EXPECT_DOUBLE_EQ(out(0, 0), -out(0, 1));
  EXPECT_NE(out(0, 0), u(0, 0));
}

TEST(LocalizedCbs, IdenticalParticlesAreDegenerate) {
  const Ensemble u = Ensemble::Constant(2, 10, 0.3);
  const auto t = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(step_localized_cbs(u, t, SamplerConfig{}, StepDraws::keyed(1, 0, 1)),
               DegenerateEnsemble);
}

TEST(LocalizedCbs, TracksMomentOde) {
  SamplerConfig c;
  c.n_particles = 500;
  c.n_steps = 100;
  c.n_runs = 4;
  c.seed = 5;
  c.init_mean = Vector::Constant(1, 1.0);
  c.init_cov = Matrix::Constant(1, 1, 2.0);
  const auto r = run(LocalizedCbsMethod{}, kHalfNormal, c);
  const GaussianMoments pi{Vector::Zero(1), Matrix::Constant(1, 1, 0.5)};
  const double gamma = resolved_gamma(c);
  const auto ode = integrate_moments(
      [&](const GaussianMoments &rho) {
        return lcbs_moment_ode_rhs(rho, pi, c.preconditioner, gamma, c.kappa, c.beta);
      },
      {c.init_mean, c.init_cov}, c.dt, c.dt * static_cast<double>(c.n_steps));
  for (std::size_t n : {25u, 50u, 100u}) {
    double m = 0.0, v = 0.0;
    for (const auto &run_moments : r.per_step_moments) {
      m += run_moments[n].m(0) / 4.0;
      v += run_moments[n].S(0, 0) / 4.0;
    }
    const double v_ode = ode[n].S(0, 0);
    EXPECT_NEAR(v, v_ode, 0.1 * v_ode) << "step " << n;
    EXPECT_NEAR(m, ode[n].m(0), 0.1 * std::sqrt(v_ode)) << "step " << n;
  }
}

TEST(LocalizedCbs, ThreadCountDoesNotChangeResult) {
  const Ensemble u = normal_matrix(2, 30, 3);
  const auto t = gaussian_target(Vector::Zero(2), random_spd(2, 4));
  for (const auto &spec : {PreconditionerSpec::unweighted(),
                           PreconditionerSpec::localized(0.5, 0.7)}) {
    SamplerConfig c;
    c.preconditioner = spec;
    c.nu = 0.6;
    const auto draws = StepDraws::keyed(9, 0, 3);
    const Ensemble a = step_localized_cbs(u, t, c, draws, 3);
    c.n_threads = 3;
    const Ensemble b = step_localized_cbs(u, t, c, draws, 3);
    EXPECT_EQ(a, b);
  }
}

TEST(LocalizedCbs, PermutationEquivariance) {
  const Index n = 12;
  const Ensemble u = normal_matrix(2, n, 8);
  const auto t = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    perm[static_cast<std::size_t>(j)] = (5 * j + 3) % n;
  }
  Ensemble up(2, n);
  for (Index j = 0; j < n; ++j) {
    up.col(perm[static_cast<std::size_t>(j)]) = u.col(j);
  }
  std::vector<Index> inv(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])] = j;
  }
  const StepDraws base = StepDraws::keyed(4, 0, 1);
  StepDraws permuted = base;
  permuted.noise = [&](Index i, Eigen::Ref<Vector> xi) {
    Vector raw(n);
    base.noise(inv[static_cast<std::size_t>(i)], raw);
    for (Index j = 0; j < n; ++j) {
      xi(perm[static_cast<std::size_t>(j)]) = raw(j);
    }
  };
  for (const auto &spec : {PreconditionerSpec::unweighted(),
                           PreconditionerSpec::localized(0.0, 0.5)}) {
    SamplerConfig c;
    c.preconditioner = spec;
    const Ensemble a = step_localized_cbs(u, t, c, base);
    const Ensemble b = step_localized_cbs(up, t, c, permuted);
    for (Index j = 0; j < n; ++j) {
      EXPECT_LT((b.col(perm[static_cast<std::size_t>(j)]) - a.col(j)).norm(),
                1e-12 * (1.0 + a.col(j).norm()));
    }
  }
}

TEST(LocalizedCbs, DensityScaleInvariance) {
  const Ensemble u = normal_matrix(2, 25, 6);
  const auto t = gaussian_target(Vector::Ones(2), random_spd(2, 7));
  const auto scaled = rescaled(t, 37.5);
  SamplerConfig c;
  c.preconditioner = PreconditionerSpec::localized(1.0, 0.8);
  const auto draws = StepDraws::keyed(2, 0, 1);
  const Ensemble a = step_localized_cbs(u, t, c, draws);
  const Ensemble b = step_localized_cbs(u, scaled, c, draws);
  EXPECT_LT(rel_err(b, a), 1e-12);
}

TEST(LocalizedCbs, RandomBatchIsDeterministic) {
  const Ensemble u = normal_matrix(1, 30, 9);
  SamplerConfig c;
  c.nu = 0.3;
  const Ensemble a = step_localized_cbs(u, kHalfNormal, c, StepDraws::keyed(1, 0, 2), 2);
  const Ensemble b = step_localized_cbs(u, kHalfNormal, c, StepDraws::keyed(1, 0, 2), 2);
  const Ensemble other =
      step_localized_cbs(u, kHalfNormal, c, StepDraws::keyed(1, 0, 3), 3);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, other);
}

TEST(Cbs, ZeroAlphaPullsToSampleMean) {
  const Ensemble u = normal_matrix(2, 20, 10);
  const auto t = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2));
  const double dt = 0.1;
  const Ensemble out = step_cbs(u, t, 0.0, dt, StepDraws::noiseless());
  const Vector m = mean(u);
  const Ensemble expect = u - dt * (u.colwise() - m);
  EXPECT_LT(rel_err(out, expect), 1e-13);
}

TEST(Cbs, DegenerateEnsembleThrows) {
  const auto t = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2));
  EXPECT_THROW(step_cbs(Ensemble::Ones(2, 6), t, 1.0, 0.1, StepDraws::keyed(1, 0, 1)),
               DegenerateEnsemble);
  EXPECT_THROW(step_cbs(normal_matrix(2, 2, 1), t, 1.0, 0.1, StepDraws::keyed(1, 0, 1)),
               DegenerateEnsemble);
}

TEST(Cbs, TracksMomentOde) {
  SamplerConfig c;
  c.n_particles = 1000;
  c.n_steps = 100;
  c.n_runs = 4;
  c.dt = 0.01;
  c.init_mean = Vector::Constant(1, 1.0);
  c.init_cov = Matrix::Constant(1, 1, 2.0);
  const double alpha = 2.0;
  const auto r = run(CbsMethod{alpha}, kHalfNormal, c);
  const GaussianMoments pi{Vector::Zero(1), Matrix::Constant(1, 1, 0.5)};
  const auto ode = integrate_moments(
      [&](const GaussianMoments &rho) { return cbs_moment_ode_rhs(rho, pi, alpha); },
      {c.init_mean, c.init_cov}, c.dt, 1.0);
  for (std::size_t n : {25u, 50u, 100u}) {
    double m = 0.0, v = 0.0;
    for (const auto &run_moments : r.per_step_moments) {
      m += run_moments[n].m(0) / 4.0;
      v += run_moments[n].S(0, 0) / 4.0;
    }
    EXPECT_NEAR(v, ode[n].S(0, 0), 0.1 * ode[n].S(0, 0)) << "step " << n;
    EXPECT_NEAR(m, ode[n].m(0), 0.1 * std::sqrt(ode[n].S(0, 0))) << "step " << n;
  }
}

TEST(PolarizedCbs, InfiniteLambdaIsCbs) {
  const Ensemble u = normal_matrix(2, 15, 11);
  const auto t = gaussian_target(Vector::Zero(2), random_spd(2, 12));
  const auto draws = StepDraws::keyed(3, 0, 4);
  const Ensemble a = step_cbs(u, t, 1.7, 0.05, draws, 4);
  const Ensemble b = step_polarized_cbs(u, t, 1.7, kInf, Matrix(), 0.05, draws, 4);
  EXPECT_EQ(a, b);
}

TEST(PolarizedCbs, SingleParticleStaysPut) {
  Ensemble u(2, 1);
  u << 0.4, -1.3;
  const auto t = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2));
  const Ensemble out =
      step_polarized_cbs(u, t, 10.0, 0.005, Matrix(), 0.1, StepDraws::keyed(1, 0, 1));
  EXPECT_EQ(out, u);
}

TEST(PolarizedCbs, RejectsNonSpdDistance) {
  const auto t = gaussian_target(Vector::Zero(2), Matrix::Identity(2, 2));
  Matrix d = Matrix::Identity(2, 2);
  d(1, 1) = -1.0;
  EXPECT_THROW(step_polarized_cbs(normal_matrix(2, 5, 1), t, 1.0, 0.1, d, 0.1,
                                  StepDraws::noiseless()),
               NotPositiveDefinite);
}

TEST(PolarizedCbs, LocalWeightsFavorNeighbors) {
  // Two far clusters: each particle is pulled toward its own cluster.
  Ensemble u(1, 6);
  u << -2.0, -2.1, -1.9, 2.0, 2.1, 1.9;
  const auto t = flat_target(1);
  const Ensemble out =
      step_polarized_cbs(u, t, 0.0, 0.05, Matrix(), 0.1, StepDraws::noiseless());
  for (Index j = 0; j < 6; ++j) {
    EXPECT_EQ(std::signbit(out(0, j)), std::signbit(u(0, j)));
    EXPECT_LT(std::abs(std::abs(out(0, j)) - 2.0), 0.1);
  }
}

TEST(LocalizedAldi, InfiniteLambdaMatchesAldi) {
  const Index d = 2, k = 3, n = 20;
  const Matrix h = normal_matrix(k, d, 13);
  const Vector y = normal_matrix(k, 1, 14);
  const Matrix gam = random_spd(k, 15);
  const Matrix gam0 = random_spd(d, 16);
  const Vector u0 = normal_matrix(d, 1, 17);
  const auto t = bip_posterior([h](const Eigen::Ref<const Vector> &v) { return Vector(h * v); },
                               y, gam, gam0, u0);
  const Ensemble u = normal_matrix(d, n, 18);
  const double dt = 0.03;
  const auto draws = StepDraws::keyed(5, 0, 2);
  const Ensemble out =
      step_localized_aldi(u, *t.inverse_problem, kInf, Matrix(), dt, draws, 2);

  const Vector m = mean(u);
  const Matrix f = covariance_factor(u);
  const Matrix c = f * f.transpose();
  const Matrix cug = c * h.transpose();
  for (Index i = 0; i < n; ++i) {
    Vector drift = -cug * gam.llt().solve(h * u.col(i) - y) -
                   c * gam0.llt().solve(u.col(i) - u0) +
                   static_cast<double>(d + 1) / static_cast<double>(n) * (u.col(i) - m);
    Vector xi(n);
    draws.noise(i, xi);
    const Vector expect = u.col(i) + dt * drift + std::sqrt(2.0 * dt) * (f * xi);
    EXPECT_LT((out.col(i) - expect).norm(), 1e-10 * (1.0 + expect.norm()));
  }
}

TEST(LocalizedAldi, DriftAtMeanPointsToOrigin) {
  const Index d = 2;
  const auto t = bip_posterior([](const Eigen::Ref<const Vector> &v) { return Vector(v); },
                               Vector::Zero(d), Matrix::Identity(d, d),
                               Matrix::Identity(d, d), Vector::Zero(d));
  Ensemble u(d, 5);
  const Vector m(Vector::Constant(d, 1.5));
  u.col(0) = m;
  u.col(1) = m + Vector::Unit(d, 0) * 0.3;
  u.col(2) = m - Vector::Unit(d, 0) * 0.3;
  u.col(3) = m + Vector::Unit(d, 1) * 0.2;
  u.col(4) = m - Vector::Unit(d, 1) * 0.2;
  for (double lambda : {kInf, 0.5}) {
    const Ensemble out = step_localized_aldi(u, *t.inverse_problem, lambda, Matrix(),
                                             0.01, StepDraws::noiseless());
    EXPECT_LT((out.col(0) - m).dot(m), 0.0);
  }
}

TEST(LocalizedAldi, RequiresInverseProblem) {
  SamplerConfig c = small_config();
  EXPECT_THROW(run(LocalizedAldiMethod{}, kHalfNormal, c), Unsupported);
}

TEST(Langevin, IdentityPreconditionerIsUla) {
  const auto t = gaussian_target(Vector::Ones(2), random_spd(2, 20));
  const Ensemble u = normal_matrix(2, 7, 21);
  const double dt = 0.02;
  const auto draws = StepDraws::keyed(1, 0, 1);
  const Ensemble out = step_preconditioned_langevin(
      u, t, PreconditionerSpec::constant(Matrix::Identity(2, 2)), dt, draws, 1);
  for (Index i = 0; i < u.cols(); ++i) {
    Vector xi(2);
    draws.noise(i, xi);
    const Vector expect =
        u.col(i) + dt * t.grad_log_pdf(u.col(i)) + std::sqrt(2.0 * dt) * xi;
    EXPECT_LT((out.col(i) - expect).norm(), 1e-14);
  }
}

TEST(Langevin, TentIsUnsupported) {
  const Ensemble u = normal_matrix(1, 5, 1) * 0.1;
  EXPECT_THROW(step_preconditioned_langevin(u, tent(), PreconditionerSpec::unweighted(),
                                            0.01, StepDraws::noiseless()),
               Unsupported);
  SamplerConfig c = small_config();
  EXPECT_THROW(run(LangevinMethod{}, tent(), c), Unsupported);
}

TEST(Langevin, GaussianLongRunMoments) {
  SamplerConfig c;
  c.n_particles = 200;
  c.n_steps = 1000;
  c.n_runs = 16;
  c.dt = 0.01;
  const auto r = run(LangevinMethod{}, kHalfNormal, c);
  const auto &s = r.aggregated_samples;
  const double m = s.mean();
  const double v = (s.array() - m).square().mean();
  EXPECT_NEAR(m, 0.0, 0.05);
  EXPECT_NEAR(v, 0.5, 0.025);
}

TEST(Metropolis, GaussianVariance) {
  const auto res = rw_metropolis(kHalfNormal, 1000000, 1.7, 3);
  const double m = res.samples.mean();
  const double v = (res.samples.array() - m).square().mean();
  EXPECT_NEAR(m, 0.0, 0.02);
  EXPECT_NEAR(v, 0.5, 0.025);
  EXPECT_GT(res.acceptance_rate, 0.0);
  EXPECT_LT(res.acceptance_rate, 1.0);
}

TEST(Metropolis, BurnInAndThinning) {
  McmcOptions o;
  o.burn_in = 100;
  o.thin = 7;
  const auto res = rw_metropolis(kHalfNormal, 700, 1.0, 4, o);
  EXPECT_EQ(res.samples.cols(), 100);
  EXPECT_THROW(rw_metropolis(kHalfNormal, 10, 0.0, 1), UsageError);
  McmcOptions outside;
  outside.init = Vector::Constant(1, 3.0);
  EXPECT_THROW(rw_metropolis(tent(), 10, 0.1, 1, outside), UsageError);
}

TEST(Metropolis, TunedScaleHitsAcceptanceBand) {
  const auto t = gaussian_target(Vector::Zero(3), random_spd(3, 30, 20.0));
  const double s = tune_proposal_scale(t, 5);
  const auto res = rw_metropolis(t, 20000, s, 6);
  EXPECT_GT(res.acceptance_rate, 0.15);
  EXPECT_LT(res.acceptance_rate, 0.45);
}

TEST(Run, AggregatedSampleCount) {
  SamplerConfig c = small_config();
  c.n_runs = 3;
  c.n_steps = 10;
  c.n_particles = 7;
  const auto r = run(LocalizedCbsMethod{}, kHalfNormal, c);
  EXPECT_EQ(aggregation_window(10), 3u);
  EXPECT_EQ(aggregation_window(200), 50u);
  EXPECT_EQ(r.aggregated_samples.cols(), 3 * 3 * 7);
  EXPECT_EQ(r.per_step_moments.size(), 3u);
  EXPECT_EQ(r.per_step_moments[0].size(), 11u);
  EXPECT_EQ(r.aggregated_samples.middleCols(2 * 3 * 7 + 2 * 7, 7), r.final_ensembles[2]);
}

TEST(Run, Deterministic) {
  SamplerConfig c = small_config();
  c.n_runs = 3;
  const auto a = run(LocalizedCbsMethod{}, kHalfNormal, c);
  const auto b = run(LocalizedCbsMethod{}, kHalfNormal, c);
  EXPECT_EQ(a.aggregated_samples, b.aggregated_samples);
  c.n_threads = 2;
  const auto p = run(LocalizedCbsMethod{}, kHalfNormal, c);
  EXPECT_EQ(a.aggregated_samples, p.aggregated_samples);
  c.n_threads = 1;
  c.seed = 18;
  const auto other = run(LocalizedCbsMethod{}, kHalfNormal, c);
  EXPECT_NE(a.aggregated_samples, other.aggregated_samples);
}

TEST(Run, RecordsTrajectory) {
  SamplerConfig c = small_config();
  c.record_trajectory = true;
  const auto r = run(CbsMethod{1.0}, kHalfNormal, c);
  ASSERT_EQ(r.trajectory.size(), 1u);
  EXPECT_EQ(r.trajectory[0].size(), c.n_steps + 1);
  EXPECT_EQ(r.trajectory[0].back(), r.final_ensembles[0]);
}

TEST(Run, OneDivergedRunIsExcluded) {
  SamplerConfig c = small_config();
  c.n_runs = 4;
  c.n_particles = 5;
  c.n_steps = 8;
  c.preconditioner = PreconditionerSpec::constant(Matrix::Identity(1, 1));
  // Gradient calls run sequentially: J per step, N steps per run.
  auto calls = std::make_shared<std::atomic<long>>(0);
  const long per_run = 5 * 8;
  TargetDensity t = kHalfNormal;
  t.gradient = [calls, per_run](const Eigen::Ref<const Vector> &v) {
    const long k = (*calls)++;
    if (k == 2 * per_run + 5) {
      return Vector(Vector::Constant(1, std::numeric_limits<double>::quiet_NaN()));
    }
    return Vector(-2.0 * v);
  };
  const auto r = run(LangevinMethod{}, t, c);
  EXPECT_EQ(r.n_diverged(), 1u);
  EXPECT_TRUE(r.runs[2].diverged);
  EXPECT_EQ(r.runs[2].diverged_step, 2u);
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.aggregated_samples.cols(), 3 * 2 * 5);
}

TEST(Run, AllRunsDivergedThrows) {
  SamplerConfig c = small_config();
  c.n_runs = 2;
  c.preconditioner = PreconditionerSpec::constant(Matrix::Identity(1, 1));
  TargetDensity t = kHalfNormal;
  t.gradient = [](const Eigen::Ref<const Vector> &) {
    return Vector(Vector::Constant(1, kInf));
  };
  EXPECT_THROW(run(LangevinMethod{}, t, c), AllRunsDiverged);
  try {
    step_preconditioned_langevin(Ensemble::Zero(1, 3), t, c.preconditioner, 0.1,
                                 StepDraws::noiseless(), 6);
    FAIL() << "expected a diverged step";
  } catch (const DivergedRun &e) {
    EXPECT_EQ(e.step(), 6u);
  }
}

TEST(Run, TooFewParticlesForCovariance) {
  SamplerConfig c = small_config();
  c.n_particles = 2;
  const auto t = gaussian_target(Vector::Zero(3), Matrix::Identity(3, 3));
  EXPECT_THROW(run(LocalizedCbsMethod{}, t, c), UsageError);
}

TEST(Run, InitialEnsembleMoments) {
  SamplerConfig c;
  c.n_particles = 20000;
  c.init_mean = Vector::Constant(2, 1.0);
  c.init_cov = random_spd(2, 40);
  const Ensemble u = initial_ensemble(c, 2, 0);
  EXPECT_LT((mean(u) - c.init_mean).norm(), 0.05);
  EXPECT_LT(rel_err(covariance(u), c.init_cov), 0.05);
}

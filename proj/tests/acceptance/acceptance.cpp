#include "lcbs/darcy.hpp"
#include "lcbs/experiments.hpp"
#include "lcbs/gaussian_theory.hpp"
#include "property_suite.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace lcbs;
using lcbs::testing::normal_matrix;
using lcbs::testing::random_invertible;
using lcbs::testing::random_spd;
using lcbs::testing::rel_err;

namespace {

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

/// Prints the verdict line for one criterion and records it with gtest.
void verdict(int criterion, const std::string &title, bool pass, const Stopwatch &clock,
             double budget_seconds, const std::string &detail) {
  const double t = clock.seconds();
  const bool in_time = t < budget_seconds;
  std::ostringstream line;
  line << (pass && in_time ? "PASS" : "FAIL") << " criterion " << criterion << " (" << title
       << "): " << detail << "; " << std::fixed << std::setprecision(1) << t << " s of "
       << budget_seconds << " s";
  std::cout << line.str() << std::endl;
  EXPECT_TRUE(pass) << "criterion " << criterion << " not met";
  EXPECT_TRUE(in_time) << "criterion " << criterion << " over its time budget";
}

Config config_for(const std::string &experiment, const RawConfig &raw) {
  return resolve_experiment_config(find_experiment(experiment), raw);
}

std::string num(double x, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << x;
  return s.str();
}

double uniform_in(RandomStream &r, double lo, double hi) { return lo + (hi - lo) * r.uniform(); }

Index draw_dim(RandomStream &r, Index max_d) {
  return 1 + static_cast<Index>(r.next_u32() % static_cast<std::uint32_t>(max_d));
}

} // namespace

// Gaussian target V(u) = u^2: gamma_default reproduces variance 1/2.
TEST(Acceptance, C01_GaussianExactness) {
  const Stopwatch clock;
  const auto res =
      gaussian_sweep(config_for("gaussian-sweep", {{"sweep.gammas", "0.5, default, 1.5"}}));
  const double v_bar = res.arm("gamma-default").variance;
  const double v_low = res.arm("gamma-0.5").variance;
  const double v_high = res.arm("gamma-1.5").variance;
  const double rel = (v_bar - 0.5) / 0.5;
  const bool pass = std::abs(rel) <= 0.05 && v_low > v_bar && v_high < v_bar &&
                    std::abs(res.gamma_bar - 0.8433333333333334) < 1e-12;
  verdict(1, "Gaussian exactness", pass, clock, 60.0,
          "gamma_bar=" + num(res.gamma_bar) + " var(gamma_bar)=" + num(v_bar) +
              " rel.err=" + num(100 * rel, 3) + "% (limit 5%), var(0.5)=" + num(v_low) +
              " var(1.5)=" + num(v_high));
}

// Gaussian moments at the target are stationary for gamma_default.
TEST(Acceptance, C02_Stationarity) {
  const Stopwatch clock;
  double worst = 0.0;
  int checked = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    RandomStream r(k, 0, 2, 0, DrawKind::Test);
    const Index d = draw_dim(r, 4);
    const GaussianMoments pi{normal_matrix(d, 1, k, 20).col(0) * 2.0,
                             random_spd(d, 200 + k, 50.0)};
    const double kappa = uniform_in(r, 0.05, 1.0);
    const double beta = uniform_in(r, 1.0, 20.0);
    const double alpha = uniform_in(r, 0.0, 2.0);
    const double lambda = uniform_in(r, 0.1, 5.0);
    for (const auto &spec : {PreconditionerSpec::unweighted(), PreconditionerSpec::weighted(alpha),
                             PreconditionerSpec::localized(alpha, lambda)}) {
      const double g = gamma_default(spec, kappa, beta);
      const auto rate = lcbs_moment_ode_rhs(pi, pi, spec, g, kappa, beta);
      worst = std::max({worst, rate.dm.norm() / (1.0 + pi.m.norm()),
                        rate.dS.norm() / pi.S.norm()});
      ++checked;
    }
  }
  verdict(2, "stationarity at the target", worst <= 1e-12, clock, 10.0,
          std::to_string(checked) + " cases, worst relative rate " + num(worst, 3) +
              " (limit 1e-12)");
}

// Localized CBS moment ODEs equal CBS moment ODEs run c times faster.
TEST(Acceptance, C03_CbsEquivalence) {
  const Stopwatch clock;
  const double dt = 1e-4;
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    RandomStream r(k, 0, 3, 0, DrawKind::Test);
    const Index d = draw_dim(r, 4);
    const double ap = uniform_in(r, 0.3, 3.0);
    const double a = ap * uniform_in(r, 1.2, 4.0);
    const auto p = cbs_equivalence_params(a, ap);
    const double gamma = 2.0 * ap / (ap + 1.0);
    const GaussianMoments pi{normal_matrix(d, 1, k, 30).col(0), random_spd(d, 300 + k, 10.0)};
    const GaussianMoments x0{normal_matrix(d, 1, k, 31).col(0), random_spd(d, 400 + k, 10.0)};
    const auto spec = PreconditionerSpec::localized(a, p.lambda);
    const auto lcbs = integrate_moments(
        [&](const GaussianMoments &x) {
          return lcbs_moment_ode_rhs(x, pi, spec, gamma, p.kappa, p.beta);
        },
        x0, dt, 1.0);
    // CBS on [0, c] with step c dt lands on the times c t_k.
    const auto cbs = integrate_moments(
        [&](const GaussianMoments &x) { return cbs_moment_ode_rhs(x, pi, ap); }, x0, p.c * dt,
        p.c);
    if (lcbs.size() != cbs.size()) {
      worst = kInf;
      break;
    }
    for (std::size_t s = 0; s < lcbs.size(); ++s) {
      worst = std::max({worst, (lcbs[s].m - cbs[s].m).norm(), (lcbs[s].S - cbs[s].S).norm()});
    }
  }
  verdict(3, "CBS equivalence", worst <= 1e-8, clock, 30.0,
          "20 instances, RK4 dt=1e-4 on [0,1], max moment gap " + num(worst, 3) +
              " (limit 1e-8)");
}

// Analytic divergence of the localized preconditioner against central
// differences, and the unweighted closed form.
TEST(Acceptance, C04_CorrectionTerm) {
  const Stopwatch clock;
  double worst_fd = 0.0;
  double worst_inf = 0.0;
  const double lambdas[] = {0.2, 0.5, 2.0};
  for (std::uint64_t k = 0; k < 100; ++k) {
    RandomStream r(k, 0, 4, 0, DrawKind::Test);
    const Index d = draw_dim(r, 3);
    const Index n = d + 2 + static_cast<Index>(r.next_u32() % static_cast<std::uint32_t>(29 - d));
    const Ensemble u = normal_matrix(d, n, k, 40) * uniform_in(r, 0.5, 3.0);
    const auto t = gaussian_target(Vector::Zero(d), Matrix::Identity(d, d));
    const Index i = static_cast<Index>(r.next_u32() % static_cast<std::uint32_t>(n));
    const auto spec = PreconditionerSpec::localized(0.0, lambdas[k % 3]);
    const Vector a = correction_divergence(spec, u, i, t);
    const Vector f = correction_divergence_fd(spec, u, i, t, 1e-5);
    worst_fd = std::max(worst_fd, (a - f).norm() / a.norm());
    const Vector c = correction_divergence(PreconditionerSpec::localized(0.0, kInf), u, i, t);
    const Vector expect = static_cast<double>(d + 1) / static_cast<double>(n) *
                          (u.col(i) - u.rowwise().mean());
    worst_inf = std::max(worst_inf, (c - expect).norm() / std::max(expect.norm(), 1e-300));
  }
  verdict(4, "correction term", worst_fd <= 1e-5 && worst_inf <= 1e-12, clock, 30.0,
          "100 instances, worst FD relative error " + num(worst_fd, 3) +
              " (limit 1e-5), worst lambda=inf error " + num(worst_inf, 3) + " (limit 1e-12)");
}

// A run on the pulled-back target, mapped forward, matches the original
// run step for step when both share the noise.
TEST(Acceptance, C05_AffineEquivariance) {
  const Stopwatch clock;
  double worst = 0.0;
  int cases = 0;
  for (const auto &spec :
       {PreconditionerSpec::unweighted(), PreconditionerSpec::localized(0.0, 0.5)}) {
    for (std::uint64_t k = 0; k < 10; ++k) {
      RandomStream r(k, 0, 5, 0, DrawKind::Test);
      const Index d = 1 + draw_dim(r, 3);
      const Index n = 4 * d + 8;
      const double cond = std::exp(std::log(1e3) * r.uniform());
      const Matrix m = random_invertible(d, 500 + k, cond);
      const Vector b = normal_matrix(d, 1, k, 50).col(0) * 3.0;
      const TargetDensity base =
          k % 2 ? double_well(d)
                : gaussian_target(normal_matrix(d, 1, k, 51).col(0), random_spd(d, 600 + k, 10.0));
      const TargetDensity pulled = affine_pullback(base, m, b);
      SamplerConfig c;
      c.preconditioner = spec;
      c.beta = 5.0;
      c.kappa = 0.1;
      c.dt = 0.01;
      Ensemble u = normal_matrix(d, n, k, 52);
      Ensemble v = m.partialPivLu().solve(u.colwise() - b);
      for (std::uint32_t s = 0; s < 50; ++s) {
        const auto draws = StepDraws::keyed(k, 0, s);
        u = step_localized_cbs(u, base, c, draws, s);
        v = step_localized_cbs(v, pulled, c, draws, s);
        const Ensemble mapped = (m * v).colwise() + b;
        worst = std::max(worst, rel_err(mapped, u));
      }
      ++cases;
    }
  }
  verdict(5, "affine equivariance", worst <= 1e-8, clock, 30.0,
          std::to_string(cases) + " runs x 50 steps, cond(M) <= 1e3, worst relative mismatch " +
              num(worst, 3) + " (limit 1e-8)");
}

// Weighted mean converges to the proximal point as beta grows.
TEST(Acceptance, C06_LaplacePrinciple) {
  const Stopwatch clock;
  double worst_ratio = 0.0;
  std::string sample;
  for (std::uint64_t k = 0; k < 10; ++k) {
    RandomStream r(k, 0, 6, 0, DrawKind::Test);
    const double m = uniform_in(r, -2.0, 2.0);
    const double s2 = uniform_in(r, 0.2, 3.0);
    const double mr = uniform_in(r, -1.0, 1.0);
    const double sr2 = uniform_in(r, 0.2, 3.0);
    const double anchor = uniform_in(r, -2.0, 2.0);
    const double kappa = uniform_in(r, 0.1, 1.0);
    const double c = uniform_in(r, 0.5, 2.0);
    const auto t = gaussian_target(Vector::Constant(1, m), Matrix::Constant(1, 1, s2));
    const ScalarField rho = [=](const Eigen::Ref<const Vector> &v) {
      return -0.5 * (v(0) - mr) * (v(0) - mr) / sr2;
    };
    const double half = 15.0 * std::sqrt(std::max({s2, sr2, kappa * c})) + 3.0;
    const double g1 =
        laplace_gap_quadrature_1d(t, rho, anchor, kappa, c, 1.0, -half, half, 20000);
    const double g64 =
        laplace_gap_quadrature_1d(t, rho, anchor, kappa, c, 64.0, -half, half, 20000);
    const double ratio = g64 / g1;
    worst_ratio = std::max(worst_ratio, ratio);
    if (k == 0) {
      sample = "gap(1)=" + num(g1, 3) + " gap(64)=" + num(g64, 3);
    }
  }
  verdict(6, "Laplace principle", worst_ratio <= 0.1, clock, 30.0,
          "10 quadratic instances, worst gap(64)/gap(1) " + num(worst_ratio, 3) +
              " (limit 0.1); " + sample);
}

// Double well: two modes in d = 1; in d = 10 only with random batches.
TEST(Acceptance, C07_Multimodal) {
  const Stopwatch clock;
  const auto one = multimodal(config_for(
      "multimodal", {{"dims", "1"}, {"lcbs.nus", "1"}, {"baselines", "false"}}));
  const auto ten = multimodal(config_for(
      "multimodal", {{"dims", "10"}, {"lcbs.nus", "1, 0.5"}, {"baselines", "false"}}));
  const auto &a = one.arm("lcbs_d1_nu1");
  const auto &b = ten.arm("lcbs_d10_nu0.5");
  const auto &c = ten.arm("lcbs_d10_nu1");
  auto modes = [](const ModeArm &m) {
    std::string s;
    for (std::size_t k = 0; k < std::min<std::size_t>(2, m.report.modes.size()); ++k) {
      s += (k ? "," : "") + num(m.report.modes[k], 3);
    }
    return "[" + s + "]";
  };
  const bool pass = a.report.pass && b.report.pass && !c.report.pass;
  verdict(7, "multimodal", pass, clock, 300.0,
          "d=1 pass=" + fmt(a.report.pass) + " modes " + modes(a) +
              "; d=10 nu=0.5 pass=" + fmt(b.report.pass) + " modes " + modes(b) +
              "; d=10 nu=1 pass=" + fmt(c.report.pass) + " (expected false) modes " + modes(c));
}

// Badly scaled double well: localized CBS ignores the scaling guess; the
// baselines do not.
TEST(Acceptance, C08_Affine) {
  const Stopwatch clock;
  const auto res = affine(config_for("affine", {}));
  const auto &p = res.arm("pcbs_identity");
  const auto &l = res.arm("laldi_identity");
  auto broken = [](const ModeArm &m) { return !m.report.pass || 2 * m.diverged > m.runs; };
  const bool pass = res.cross_w2 <= 0.1 && broken(p) && broken(l);
  std::string guessed;
  for (const std::string name : {"lcbs_correct", "pcbs_correct", "laldi_correct"}) {
    guessed += " " + name + "=" + fmt(res.arm(name).report.pass);
  }
  verdict(8, "affine invariance", pass, clock, 300.0,
          "localized CBS cross W2 " + num(res.cross_w2, 3) + " (limit 0.1); with identity guess: " +
              "polarized CBS pass=" + fmt(p.report.pass) + " diverged=" + fmt(p.diverged) +
              ", localized ALDI pass=" + fmt(l.report.pass) + " diverged=" + fmt(l.diverged) +
              " (both expected to fail); correct guess:" + guessed);
}

// The divergence correction is what makes the narrow peak come out right.
TEST(Acceptance, C09_CorrectionAblation) {
  const Stopwatch clock;
  const auto res = diffpeaks_study(config_for(
      "diffpeaks", {{"sweep.enabled", "false"}, {"pcbs.enabled", "false"}}));
  double with = 0.0, without = 0.0;
  for (const auto &a : res.ablation) {
    with += a.w2_corrected;
    without += a.w2_uncorrected;
  }
  const double n = static_cast<double>(res.ablation.size());
  const bool pass = res.ablation.size() == 16 && res.ablation_wins() >= 12;
  verdict(9, "correction ablation", pass, clock, 300.0,
          "corrected wins " + std::to_string(res.ablation_wins()) + "/" +
              std::to_string(res.ablation.size()) + " (need 12/16); mean W2 " + num(with / n, 3) +
              " vs " + num(without / n, 3));
}

// W2 against J on the tent density.
TEST(Acceptance, C10_Tent) {
  const Stopwatch clock;
  const auto res = tent_study(config_for("tent", {}));
  ASSERT_EQ(res.curves.size(), 2u);
  const TentCurve &moderate = res.curves[0];
  const TentCurve &aggressive = res.curves[1];
  const bool shape = nonincreasing_to_plateau(moderate) && nonincreasing_to_plateau(aggressive);
  const bool large = aggressive.at(512).w2 < moderate.at(512).w2;
  const bool small = aggressive.at(16).w2 > moderate.at(16).w2;
  auto curve = [](const TentCurve &c) {
    std::string s;
    for (const auto &p : c.points) {
      s += (s.empty() ? "" : " ") + num(p.w2, 2);
    }
    return s;
  };
  verdict(10, "tent", shape && large && small, clock, 900.0,
          "(10,0.1): " + curve(moderate) + "; (40,0.025): " + curve(aggressive) +
              "; nonincreasing to plateau=" + fmt(shape) + ", aggressive better at J=512=" +
              fmt(large) + ", worse at J=16=" + fmt(small));
}

// Darcy flow posterior against random-walk MCMC, plus solver convergence.
TEST(Acceptance, C11_Darcy) {
  const Stopwatch clock;
  const auto e = manufactured_solution_errors({4, 5, 6});
  const double r1 = e[0] / e[1];
  const double r2 = e[1] / e[2];
  const bool second_order = r1 >= 3.5 && r1 <= 4.5 && r2 >= 3.5 && r2 <= 4.5;
  const auto res = darcy_study(config_for("darcy", {}));
  ASSERT_EQ(res.dims.size(), 1u);
  const auto &dim = res.dims[0];
  double worst_mean = 0.0, worst_std = 0.0;
  for (const auto &m : dim.modes) {
    worst_mean = std::max(worst_mean, std::abs(m.lcbs_mean - m.mcmc_mean));
    worst_std = std::max(worst_std, std::abs(m.lcbs_std / m.mcmc_std - 1.0));
  }
  const bool pass = second_order && dim.modes.size() == 8 && worst_mean <= 0.1 &&
                    worst_std <= 0.25 && dim.diverged == 0;
  verdict(11, "Darcy", pass, clock, 1200.0,
          "manufactured ratios " + num(r1, 3) + ", " + num(r2, 3) +
              " (need [3.5,4.5]); max |mean diff| " + num(worst_mean, 3) +
              " (limit 0.1), max |std ratio - 1| " + num(worst_std, 3) +
              " (limit 0.25), MCMC acceptance " + num(dim.mcmc_acceptance, 3));
}

// Invariant suites over 1000 randomized cases each.
TEST(Acceptance, C12_Invariants) {
  const Stopwatch clock;
  bool pass = true;
  std::string detail;
  for (const auto &r : lcbs::testing::run_property_suite(1000)) {
    pass = pass && r.ok();
    detail += (detail.empty() ? "" : ", ") + r.name + " " +
              std::to_string(r.cases - r.failures) + "/" + std::to_string(r.cases);
    if (!r.ok()) {
      detail += " [" + r.first_failure + "]";
    }
  }
  verdict(12, "invariant suites", pass, clock, 120.0, detail);
}

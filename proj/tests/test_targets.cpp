#include "lcbs/targets.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace lcbs;

namespace {

Vector vec1(double x) { return Vector::Constant(1, x); }

double fd_rel_error(const TargetDensity &t, const Vector &u) {
  const Vector g = t.grad_log_pdf(u);
  Vector fd(u.size());
  for (Index k = 0; k < u.size(); ++k) {
    const double h = 1e-6 * (1.0 + std::abs(u(k)));
    Vector up = u, um = u;
    up(k) += h;
    um(k) -= h;
    fd(k) = (t.log_pdf(up) - t.log_pdf(um)) / (2 * h);
  }
  return (g - fd).norm() / std::max(1.0, g.norm());
}

} // namespace

TEST(GaussianTarget, QuadraticPotential) {
  const auto t = gaussian_target(Vector::Zero(1), Matrix::Constant(1, 1, 0.5));
  EXPECT_NEAR(t.potential(vec1(1.0)), 1.0, 1e-15);
  EXPECT_EQ(t.potential(vec1(0.0)), 0.0);
  EXPECT_EQ(t.grad_log_pdf(vec1(0.0))(0), 0.0);
}

TEST(GaussianTarget, RejectsNonSpd) {
  EXPECT_THROW(gaussian_target(Vector::Zero(1), Matrix::Constant(1, 1, -1.0)),
               NotPositiveDefinite);
}

TEST(DoubleWell, Values) {
  const auto t1 = double_well(1);
  EXPECT_EQ(t1.potential(vec1(0.0)), 1.0);
  EXPECT_EQ(t1.potential(vec1(1.0)), 0.0);
  EXPECT_EQ(t1.potential(vec1(-1.0)), 0.0);
  const auto t10 = double_well(10);
  EXPECT_EQ(t10.potential(Vector::Ones(10)), 0.0);
}

TEST(DoubleWell, ModesAreMinima) {
  const auto t = double_well(1);
  for (double x : {-1.0, 1.0}) {
    EXPECT_EQ(t.grad_log_pdf(vec1(x))(0), 0.0);
    const double h = 1e-4;
    const double second = (t.potential(vec1(x + h)) - 2 * t.potential(vec1(x)) +
                           t.potential(vec1(x - h))) /
                          (h * h);
    EXPECT_GT(second, 0.0);
  }
}

TEST(ScaledDoubleWell, ModesAndReduction) {
  Vector lam(2);
  lam << 1.0, 1e4;
  const auto t = scaled_double_well(lam);
  for (double a : {-1.0, 1.0}) {
    for (double b : {-1e-2, 1e-2}) {
      Vector u(2);
      u << a, b;
      EXPECT_NEAR(t.potential(u), 0.0, 1e-24);
      EXPECT_NEAR(t.grad_log_pdf(u).norm(), 0.0, 1e-10);
    }
  }
  const auto id = scaled_double_well(Vector::Ones(2));
  const auto dw = double_well(2);
  Vector u(2);
  u << 0.3, -1.7;
  EXPECT_EQ(id.potential(u), dw.potential(u));
}

TEST(Diffpeaks, ValueGradientIntegrability) {
  const auto t = diffpeaks();
  EXPECT_EQ(t.potential(vec1(0.0)), 2.0);
  EXPECT_LT(fd_rel_error(t, vec1(0.3)), 1e-6);
  // Mass on [-6, 6] and on [-12, 12] agree: tails are negligible.
  auto mass = [&](double lo, double hi) {
    const int n = 200000;
    const double h = (hi - lo) / n;
    double s = 0;
    for (int k = 0; k <= n; ++k) {
      const double w = (k == 0 || k == n) ? 0.5 : 1.0;
      s += w * std::exp(t.log_pdf(vec1(lo + k * h)));
    }
    return s * h;
  };
  const double m6 = mass(-6, 6);
  EXPECT_TRUE(std::isfinite(m6));
  EXPECT_GT(m6, 0.0);
  EXPECT_NEAR(mass(-12, 12) / m6, 1.0, 1e-9);
}

TEST(Diffpeaks, NeverNaN) {
  const auto t = diffpeaks();
  for (double x : {-1e6, -800.0, -50.0, 50.0, 800.0, 1e6}) {
    EXPECT_FALSE(std::isnan(t.log_pdf(vec1(x))));
  }
}

TEST(Tent, ValuesAndMoments) {
  const auto t = tent();
  EXPECT_EQ(std::exp(t.log_pdf(vec1(0.0))), 1.0);
  EXPECT_EQ(t.log_pdf(vec1(1.0)), -kInf);
  EXPECT_EQ(t.log_pdf(vec1(-1.0)), -kInf);
  EXPECT_EQ(t.log_pdf(vec1(3.0)), -kInf);
  EXPECT_NEAR(std::exp(t.log_pdf(vec1(0.5))), 0.5, 1e-15);
  EXPECT_FALSE(t.has_gradient());
  EXPECT_THROW(t.grad_log_pdf(vec1(0.1)), Unsupported);
  const int n = 100000;
  double m0 = 0, m1 = 0, m2 = 0;
  for (int k = 0; k < n; ++k) {
    const double x = -1.0 + (k + 0.5) * 2.0 / n;
    const double p = std::exp(t.log_pdf(vec1(x))) * 2.0 / n;
    m0 += p;
    m1 += p * x;
    m2 += p * x * x;
  }
  EXPECT_NEAR(m0, 1.0, 1e-8);
  EXPECT_NEAR(m1, 0.0, 1e-12);
  EXPECT_NEAR(m2, 1.0 / 6.0, 1e-8);
}

TEST(BipPosterior, Reductions) {
  Vector y(2);
  y << 0.5, -1.0;
  const Matrix gam = 0.3 * Matrix::Identity(2, 2);
  const Matrix g0 = lcbs::testing::random_spd(3, 7);
  const auto perfect = bip_posterior(
      [y](const Eigen::Ref<const Vector> &) -> Vector { return y; }, y, gam,
      g0);
  const auto prior = gaussian_target(Vector::Zero(3), g0);
  Vector u(3);
  u << 0.2, -0.4, 1.1;
  EXPECT_NEAR(perfect.potential(u), prior.potential(u), 1e-14);

  Matrix a(2, 3);
  a << 1, 2, 3, -1, 0, 2;
  const auto lin = bip_posterior(
      [a](const Eigen::Ref<const Vector> &v) -> Vector { return a * v; }, y,
      gam, g0);
  EXPECT_NEAR(lin.potential(Vector::Zero(3)),
              0.5 * y.squaredNorm() / 0.3, 1e-14);
  EXPECT_FALSE(lin.has_gradient());
}

TEST(TargetProperties, GradientsMatchFiniteDifferences) {
  RandomStream r(11, 0, 0, 0, DrawKind::Test);
  Vector lam(2);
  lam << 1.0, 30.0;
  std::vector<TargetDensity> targets = {
      gaussian_target(Vector::Ones(3), lcbs::testing::random_spd(3, 5)),
      double_well(4), scaled_double_well(lam), diffpeaks()};
  for (const auto &t : targets) {
    for (int k = 0; k < 50; ++k) {
      Vector u(t.dim);
      for (Index c = 0; c < t.dim; ++c) {
        u(c) = lcbs::testing::uniform_in(r, -1.5, 1.5);
      }
      if (t.name == "diffpeaks") {
        u(0) = lcbs::testing::uniform_in(r, -3.0, 0.8);
      }
      EXPECT_LT(fd_rel_error(t, u), 1e-5) << t.name;
    }
  }
}

TEST(TargetProperties, AffinePullbackGaussianMetadata) {
  const Matrix s = lcbs::testing::random_spd(2, 3);
  Vector m(2);
  m << 1.0, -2.0;
  const auto base = gaussian_target(m, s);
  const Matrix mm = lcbs::testing::random_invertible(2, 9, 5.0);
  Vector b(2);
  b << 0.5, 0.25;
  const auto pulled = affine_pullback(base, mm, b);
  const auto direct = gaussian_target(pulled.gaussian->m, pulled.gaussian->S);
  Vector v(2);
  v << 0.3, 0.7;
  Vector v2(2);
  v2 << -1.0, 2.0;
  EXPECT_NEAR(pulled.log_pdf(v) - pulled.log_pdf(v2),
              direct.log_pdf(v) - direct.log_pdf(v2), 1e-10);
}

#include "property_suite.hpp"

#include <gtest/gtest.h>

using namespace lcbs::testing;

namespace {

constexpr std::size_t kCases = 1000;

void expect_holds(const PropertyResult &r) {
  EXPECT_TRUE(r.ok()) << r.name << ": " << r.failures << "/" << r.cases << " failed; "
                      << r.first_failure;
}

} // namespace

TEST(Properties, WeightNormalization) { expect_holds(weight_normalization(kCases)); }

TEST(Properties, ConvexHullContainment) { expect_holds(convex_hull_containment(kCases)); }

TEST(Properties, FactorReconstruction) { expect_holds(factor_reconstruction(kCases)); }

TEST(Properties, WassersteinMetric) { expect_holds(wasserstein_metric(kCases)); }

TEST(Properties, DensityScaleInvariance) { expect_holds(density_scale_invariance(kCases)); }

TEST(Properties, ThreadDeterminism) { expect_holds(thread_determinism(kCases)); }

TEST(Properties, FailuresAreReported) {
  const auto r = check_property("always fails", 3, [](std::uint64_t k) {
    return k == 1 ? std::optional<std::string>("boom") : std::nullopt;
  });
  EXPECT_EQ(r.failures, 1u);
  EXPECT_EQ(r.first_failure, "case 1: boom");
  EXPECT_FALSE(r.ok());
}

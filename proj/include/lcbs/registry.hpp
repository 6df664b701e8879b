#pragma once

#include "lcbs/darcy.hpp"
#include "lcbs/targets.hpp"

#include <charconv>
#include <string>
#include <vector>

namespace lcbs {

/// Parameters for registry targets that need more than a name.
struct TargetOptions {
  Vector scales;                // scaled-doublewell; empty: (1, 1e4)
  std::uint64_t data_seed = 0;  // darcy
  int data_level = 7;
  int model_level = 5;
  double f_const = kDarcySource;
  double noise_variance = kDarcyNoiseVariance;
};

inline std::vector<std::string> target_names() {
  return {"gaussian1d", "doublewell-<d>", "scaled-doublewell", "diffpeaks", "tent",
          "darcy-<d>"};
}

namespace detail {

inline Index suffix_dimension(const std::string &name, const std::string &prefix) {
  const std::string digits = name.substr(prefix.size());
  long long d = 0;
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), d);
  if (digits.empty() || res.ec != std::errc() ||
      res.ptr != digits.data() + digits.size() || d < 1) {
    throw UsageError("target '" + name + "' needs a positive dimension suffix");
  }
  return static_cast<Index>(d);
}

} // namespace detail

/// V(u) = u^2, the Gaussian N(0, 1/2).
inline TargetDensity gaussian1d() {
  TargetDensity t = gaussian_target(Vector::Zero(1), Matrix::Constant(1, 1, 0.5));
  t.name = "gaussian1d";
  return t;
}

inline TargetDensity make_target(const std::string &name, const TargetOptions &opts = {}) {
  if (name == "gaussian1d") {
    return gaussian1d();
  }
  if (name.rfind("doublewell-", 0) == 0) {
    return double_well(detail::suffix_dimension(name, "doublewell-"));
  }
  if (name == "scaled-doublewell") {
    Vector s = opts.scales;
    if (s.size() == 0) {
      s.resize(2);
      s << 1.0, 1e4;
    }
    return scaled_double_well(s);
  }
  if (name == "diffpeaks") {
    return diffpeaks();
  }
  if (name == "tent") {
    return tent();
  }
  if (name.rfind("darcy-", 0) == 0) {
    const Index d = detail::suffix_dimension(name, "darcy-");
    const auto prob = generate_synthetic_data(kl_eigenpairs(3.0, 2.0, d), opts.data_seed,
                                              opts.data_level, opts.f_const,
                                              opts.noise_variance);
    return make_darcy_posterior(prob, opts.model_level);
  }
  throw UsageError("unknown target '" + name + "'");
}

} // namespace lcbs

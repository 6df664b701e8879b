#pragma once

#include <Eigen/Core>
#include <boost/random/normal_distribution.hpp>

#include <array>
#include <cmath>
#include <cstdint>

namespace lcbs {

/// Philox4x32-10 counter-based generator.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static Counter apply(Counter c, Key k) {
    round(c, k);
    for (int r = 1; r < 10; ++r) {
      k[0] += kW0;
      k[1] += kW1;
      round(c, k);
    }
    return c;
  }

private:
  static void round(Counter &c, const Key &k) {
    const std::uint64_t p0 = std::uint64_t{kM0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * c[2];
    c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0],
         static_cast<std::uint32_t>(p1),
         static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1],
         static_cast<std::uint32_t>(p0)};
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Purposes a stream can be drawn for. Distinct kinds never share counters.
enum class DrawKind : std::uint32_t {
  Noise = 1,
  Batch = 2,
  Init = 3,
  Mcmc = 4,
  Data = 5,
  Subsample = 6,
  Test = 7,
};

/// A deterministic stream of uniforms and normals addressed by
/// (seed, run, step, particle, kind). Two streams with different addresses
/// are independent; the same address always yields the same numbers.
/// The address is hashed by Philox into the state of a xoshiro256++
/// generator that produces the stream itself.
class RandomStream {
public:
  RandomStream(std::uint64_t seed, std::uint32_t run, std::uint32_t step,
               std::uint32_t particle, DrawKind kind) {
    const std::uint64_t k = splitmix64(seed);
    const Philox4x32::Key key = {static_cast<std::uint32_t>(k),
                                 static_cast<std::uint32_t>(k >> 32)};
    Philox4x32::Counter ctr = {0u, particle, step,
                               (run << 8) | static_cast<std::uint32_t>(kind)};
    for (int b = 0; b < 2; ++b) {
      ctr[0] = static_cast<std::uint32_t>(b);
      const auto out = Philox4x32::apply(ctr, key);
      s_[2 * b] = (std::uint64_t{out[0]} << 32) | out[1];
      s_[2 * b + 1] = (std::uint64_t{out[2]} << 32) | out[3];
    }
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) {
      s_[0] = 1;
    }
  }

  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0u; }
  static constexpr result_type max() { return ~std::uint64_t{0}; }

  result_type operator()() {
    const std::uint64_t out = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return out;
  }

  std::uint32_t next_u32() { return static_cast<std::uint32_t>((*this)() >> 32); }

  /// Uniform on (0, 1) with 53 random bits; never returns 0 or 1.
  double uniform() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by the ziggurat method.
  double normal() { return normal_(*this); }

  template <typename Derived> void fill_normal(Derived &&out) {
    for (Eigen::Index k = 0; k < out.size(); ++k) {
      out.data()[k] = normal();
    }
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int r) {
    return (x << r) | (x >> (64 - r));
  }

  std::uint64_t s_[4];
  boost::random::normal_distribution<double> normal_;
};

} // namespace lcbs

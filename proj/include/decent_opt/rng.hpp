#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace decent_opt {

// Purpose tags for substreams. Values are part of the reproducibility
// contract; never renumber.
enum class StreamTag : std::uint64_t {
  kDesign = 1,        // covariates (A_i, U_i)
  kCenters = 2,       // u_i / local generating parameters
  kLabels = 3,        // logistic label uniforms, regression targets
  kGradientNoise = 4, // per-(agent, t) stochastic gradient noise
  kInitialPoint = 5,  // x0 = gaussian
  kRegenerate = 6,    // substream offset for singular design retries
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based stream keyed by (seed, tag, agent, index). The k-th output is
// a pure function of the key and k, so streams never depend on draw order
// elsewhere in the program.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream(std::uint64_t seed, StreamTag tag, std::uint64_t agent = 0,
            std::uint64_t index = 0) noexcept
      : key_(derive_key(seed, tag, agent, index)) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept {
    return splitmix64(key_ ^ splitmix64(counter_++));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  double normal() { return normal_(*this); }

  std::uint64_t draws() const noexcept { return counter_; }

  static constexpr std::uint64_t derive_key(std::uint64_t seed, StreamTag tag,
                                            std::uint64_t agent,
                                            std::uint64_t index) noexcept {
    std::uint64_t k = splitmix64(seed);
    k = splitmix64(k ^ static_cast<std::uint64_t>(tag));
    k = splitmix64(k ^ (agent * 0xD1B54A32D192ED03ULL));
    k = splitmix64(k ^ (index * 0x8CB92BA72F3D8DD7ULL));
    return k;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace decent_opt

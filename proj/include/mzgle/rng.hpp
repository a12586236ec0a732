#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mzgle {

/// Independent, reproducible stream for item `index` under a master seed.
inline std::mt19937_64 stream_rng(std::uint64_t master, std::uint64_t index, std::uint64_t salt = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

/// Box-Muller normal draw; unlike std::normal_distribution the sequence is the same
/// under every standard library.
class NormalSource {
 public:
  template <typename Rng>
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform(rng);
    } while (u1 <= 0.0);
    u2 = uniform(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  template <typename Rng>
  static double uniform(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mzgle

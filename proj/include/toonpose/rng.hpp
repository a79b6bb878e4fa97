#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "toonpose/hash.hpp"

namespace toonpose {

/// Seedable generator with a platform-independent output stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Distributions are implemented here rather than with
/// std::uniform_*_distribution, whose algorithms are implementation-defined.
///
/// Stream splitting: a character's substream seed is
/// `substream_seed(model_id, global_seed)`; draw `i` of that character uses
/// `Rng(draw_seed(substream, i))`. Draws are therefore independent of how many
/// characters or draws precede them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n); Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<unsigned __int128>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  std::mt19937_64 engine_;
};

inline std::uint64_t substream_seed(std::string_view model_id, std::uint64_t global_seed) {
  return splitmix64(fnv1a(model_id) ^ splitmix64(global_seed));
}

inline std::uint64_t draw_seed(std::uint64_t substream, std::uint64_t draw_index) {
  return splitmix64(substream + splitmix64(draw_index ^ 0x5851f42d4c957f2dULL));
}

}  // namespace toonpose

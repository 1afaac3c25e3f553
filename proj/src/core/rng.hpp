#pragma once

#include <cstdint>
#include <optional>

namespace prunekit {

// splitmix64 stream with Box-Muller normals. Each pair of uniforms yields two
// normals; the second (sine branch) is cached and returned by the next call.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in (0, 1]: never returns 0, so log() is always finite.
  double next_uniform();

  double next_gaussian(double mean = 0.0, double stddev = 1.0);

 private:
  std::uint64_t state_;
  std::optional<double> cached_;
};

}  // namespace prunekit

#pragma once

#include <cstdint>
#include <limits>

namespace infodesign::sim {

// Counter-based SplitMix64 stream. Cheap to construct, so every
// (seed, module, step, row) tuple gets its own independent stream and
// results do not depend on evaluation order.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key = 0) noexcept : state_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform on the open interval (0, 1).
  double uniform() noexcept { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }
  double normal();
  double gamma(double shape, double scale);
  long poisson(double mean);

 private:
  std::uint64_t state_;
};

enum class StreamId : std::uint64_t {
  FlowInit = 1,
  Prior = 2,
  Simulator = 3,
  Designs = 4,
  Contrastive = 5,
  Pool = 6,
  Observation = 7,
  Mcmc = 8,
  Calibration = 9,
  Validation = 10,
  Pilot = 11,
  Sampling = 12,
  GroundTruth = 13,
};

std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t stream_key(std::uint64_t seed, StreamId module, std::uint64_t step, std::uint64_t row) noexcept;

inline CounterRng make_stream(std::uint64_t seed, StreamId module, std::uint64_t step = 0, std::uint64_t row = 0) {
  return CounterRng(stream_key(seed, module, step, row));
}

}  // namespace infodesign::sim

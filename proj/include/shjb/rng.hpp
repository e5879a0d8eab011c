#pragma once

#include <cstdint>
#include <limits>

namespace shjb {

std::uint64_t splitmix64(std::uint64_t x);

// Independent child stream seed; order-independent so samples can be generated
// in any schedule.
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index);

// SplitMix64 stream keyed by a seed. Satisfies UniformRandomBitGenerator so it
// plugs into <random> distributions. Cheap to construct, which lets each
// (sample, step) pair own a stream and be regenerated on demand.
class CounterEngine {
 public:
  using result_type = std::uint64_t;

  explicit CounterEngine(std::uint64_t key) : state_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

 private:
  std::uint64_t state_;
};

}  // namespace shjb

#include "shjb/rng.hpp"

namespace shjb {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace

std::uint64_t splitmix64(std::uint64_t x) { return mix(x + kGolden); }

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ mix(index * kGolden + 0x632BE59BD9B4E019ULL));
}

CounterEngine::result_type CounterEngine::operator()() {
  state_ += kGolden;
  return mix(state_);
}

}  // namespace shjb

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace specshare {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Counter-based generator: output k is a pure function of (key, k), so a
// stream can be split into independent substreams without shared state and
// results do not depend on which thread draws them.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng() = default;
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : key_(mix64(seed ^ mix64(stream ^ 0xD1B54A32D192ED03ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return at(counter_++); }

  // Random access; does not advance the stream.
  result_type at(std::uint64_t index) const noexcept {
    return mix64(key_ ^ mix64(index * 0xA0761D6478BD642FULL + 1));
  }

  CounterRng split(std::uint64_t substream) const noexcept {
    CounterRng child;
    child.key_ = mix64(key_ ^ mix64(substream + 0x632BE59BD9B4E019ULL));
    return child;
  }

  // Uniform on [0, 1).
  double uniform() noexcept { return to_unit((*this)()); }
  double uniform_at(std::uint64_t index) const noexcept { return to_unit(at(index)); }

  // Standard normal via Box-Muller on two consecutive draws.
  double normal() noexcept;
  double exponential(double mean) noexcept;

  std::uint64_t position() const noexcept { return counter_; }

  static double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// One independent stream per user, all derived from (seed, trial).
class UserStreams {
 public:
  UserStreams() = default;
  UserStreams(std::uint64_t seed, std::uint64_t trial, std::size_t num_users);

  CounterRng& user(std::size_t i);
  std::size_t size() const noexcept { return streams_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t trial_ = 0;
  std::vector<CounterRng> streams_;
};

}  // namespace specshare

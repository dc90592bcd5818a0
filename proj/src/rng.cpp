#include "specshare/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace specshare {

double CounterRng::normal() noexcept {
  // 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double CounterRng::exponential(double mean) noexcept {
  return -mean * std::log(1.0 - uniform());
}

UserStreams::UserStreams(std::uint64_t seed, std::uint64_t trial, std::size_t num_users)
    : seed_(seed), trial_(trial) {
  const CounterRng root(seed, trial);
  streams_.reserve(num_users);
  for (std::size_t i = 0; i < num_users; ++i) streams_.push_back(root.split(i));
}

CounterRng& UserStreams::user(std::size_t i) {
  if (i >= streams_.size()) {
    // Streams are keyed by user id, so growing on demand keeps earlier
    // streams untouched.
    const CounterRng root(seed_, trial_);
    while (streams_.size() <= i) streams_.push_back(root.split(streams_.size()));
  }
  return streams_[i];
}

}  // namespace specshare

#pragma once

#include <stdexcept>
#include <string>

namespace specshare {

// The model itself says "no": stationary power diverges, ITS doubling runs
// past its cap, deviation constants give sum(mu) >= 1, and so on.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An internal invariant broke. Always a bug (or a miscomputed constant).
class InvariantFault : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed configuration or command-line input.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace specshare

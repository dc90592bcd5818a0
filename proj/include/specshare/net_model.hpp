#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "specshare/rng.hpp"

namespace specshare {

// Dense row-major square matrix.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}
  static SquareMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t size() const noexcept { return n_; }
  double& operator()(std::size_t row, std::size_t col) { return data_[row * n_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return data_[row * n_ + col]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * n_, n_}; }
  SquareMatrix subset(std::span<const std::size_t> keep) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

// Finite ascending set of allowed transmit powers (watts). Always contains 0.
// Built as a uniform grid; operating points that the solvers pick (TDMA
// powers, stationary powers) are registered as extra levels.
class PowerSet {
 public:
  PowerSet() : levels_{0.0} {}
  explicit PowerSet(std::vector<double> levels);
  static PowerSet uniform_grid(double max_power, std::size_t points);

  std::span<const double> levels() const noexcept { return levels_; }
  std::size_t size() const noexcept { return levels_.size(); }
  double max() const noexcept { return levels_.back(); }
  // Spacing of the uniform grid the set was built from (0 if not a grid).
  double grid_step() const noexcept { return step_; }
  bool contains(double p) const;
  PowerSet with_level(double p) const;

 private:
  std::vector<double> levels_;
  double step_ = 0.0;
};

using PowerProfile = std::vector<double>;

struct NetworkParams {
  std::size_t num_primary = 0;
  std::size_t num_secondary = 0;
  SquareMatrix gains;  // gains(i, j): transmitter i -> receiver j
  std::vector<double> noise;
  std::vector<PowerSet> power_sets;
  std::vector<double> min_rates;
  double discount = 0.95;
};

// The static world: channels, noise, power sets, requirements, discount.
class NetworkInstance {
 public:
  NetworkInstance() = default;
  explicit NetworkInstance(NetworkParams params);

  std::size_t size() const noexcept { return params_.noise.size(); }
  std::size_t num_primary() const noexcept { return params_.num_primary; }
  std::size_t num_secondary() const noexcept { return params_.num_secondary; }
  double gain(std::size_t from, std::size_t to) const { return params_.gains(from, to); }
  const SquareMatrix& gains() const noexcept { return params_.gains; }
  double noise(std::size_t i) const { return params_.noise.at(i); }
  std::span<const double> noise() const noexcept { return params_.noise; }
  const PowerSet& power_set(std::size_t i) const { return params_.power_sets.at(i); }
  double min_rate(std::size_t i) const { return params_.min_rates.at(i); }
  std::span<const double> min_rates() const noexcept { return params_.min_rates; }
  double discount() const noexcept { return params_.discount; }
  const NetworkParams& params() const noexcept { return params_; }

  // Noise-normalized direct gain: sigma_i^2 / g_ii.
  double noise_over_gain(std::size_t i) const { return noise(i) / gain(i, i); }
  // Largest rate user i can reach alone at its maximum power.
  double max_solo_rate(std::size_t i) const;

  NetworkInstance with_discount(double discount) const;
  NetworkInstance with_min_rates(std::vector<double> rates) const;
  NetworkInstance with_power_level(std::size_t i, double p) const;
  NetworkInstance with_power_levels(std::span<const double> p) const;
  // Users listed in `keep` (in that order); primaries stay first if `keep`
  // lists them first.
  NetworkInstance subset(std::span<const std::size_t> keep,
                         std::size_t num_primary_kept) const;

 private:
  NetworkParams params_;
};

// Additive estimation error on the interference temperature.
class ErrorDistribution {
 public:
  enum class Kind { gaussian, uniform };

  static ErrorDistribution gaussian(double variance);
  static ErrorDistribution uniform(double half_width);

  Kind kind() const noexcept { return kind_; }
  // Variance (gaussian) or half-width (uniform).
  double param() const noexcept { return param_; }
  bool degenerate() const noexcept { return param_ == 0.0; }

  double density(double x) const;
  // P(eps > x).
  double exceed_prob(double x) const;
  // Finite interval carrying all but a negligible tail of the mass.
  double support_low() const;
  double support_high() const;

 private:
  ErrorDistribution(Kind kind, double param) : kind_(kind), param_(param) {}
  Kind kind_ = Kind::gaussian;
  double param_ = 0.0;
};

struct QuantizerLevels {
  double low = 0.0;   // reconstruction value below the threshold
  double high = 0.0;  // reconstruction value above the threshold
};

struct UserSensing {
  ErrorDistribution error = ErrorDistribution::gaussian(0.0);
  double threshold = 1.0;
  QuantizerLevels levels;
};

class SensingModel {
 public:
  SensingModel() = default;
  SensingModel(std::vector<ErrorDistribution> errors, std::vector<double> thresholds,
               std::span<const double> noise);
  static SensingModel uniform(const NetworkInstance& net, ErrorDistribution error,
                              double threshold);

  std::size_t size() const noexcept { return users_.size(); }
  const UserSensing& user(std::size_t i) const { return users_.at(i); }
  SensingModel subset(std::span<const std::size_t> keep) const;

 private:
  std::vector<UserSensing> users_;
};

double interference_temperature(const NetworkInstance& net, std::span<const double> p,
                                std::size_t i);
double throughput(const NetworkInstance& net, std::span<const double> p, std::size_t i);

// Mean-preserving two-level quantizer for the no-interference case. Each level
// is the conditional mean of the noisy estimate on its side of the threshold.
QuantizerLevels quantizer_levels(const ErrorDistribution& error, double threshold,
                                 double noise);

// rho_i(y_i = 1 | interference temperature I).
double distress_prob_at(const UserSensing& sensing, double interference);
// rho_i(y_i = 1 | p). User i must be transmitting.
double distress_prob(const NetworkInstance& net, const SensingModel& sensing,
                     std::span<const double> p, std::size_t i);
// rho(y = 1 | p) for the system signal: 1 - prod over transmitters of rho_j(0|p).
double system_distress_prob(const NetworkInstance& net, const SensingModel& sensing,
                            std::span<const double> p);
// Samples one distress bit per transmitting user from its own stream and
// returns their OR.
int system_distress(const NetworkInstance& net, const SensingModel& sensing,
                    std::span<const double> p, UserStreams& streams);

bool is_tdma_profile(std::span<const double> p);

}  // namespace specshare

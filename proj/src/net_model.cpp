#include "specshare/net_model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace specshare {

namespace {

constexpr double kQuadratureTol = 1e-10;
constexpr double kGaussianSpan = 12.0;  // standard deviations kept by the quadrature

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
  if (!(b > a)) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, kQuadratureTol);
}

}  // namespace

SquareMatrix SquareMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  SquareMatrix m(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == rows.size(), "gain matrix must be square");
    for (std::size_t c = 0; c < rows.size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

SquareMatrix SquareMatrix::subset(std::span<const std::size_t> keep) const {
  SquareMatrix m(keep.size());
  for (std::size_t r = 0; r < keep.size(); ++r)
    for (std::size_t c = 0; c < keep.size(); ++c) m(r, c) = (*this)(keep[r], keep[c]);
  return m;
}

PowerSet::PowerSet(std::vector<double> levels) : levels_(std::move(levels)) {
  require(!levels_.empty(), "power set must be nonempty");
  std::sort(levels_.begin(), levels_.end());
  levels_.erase(std::unique(levels_.begin(), levels_.end()), levels_.end());
  require(levels_.front() == 0.0, "power set must contain 0 and no negative levels");
}

PowerSet PowerSet::uniform_grid(double max_power, std::size_t points) {
  require(max_power > 0.0 && std::isfinite(max_power), "power grid max must be positive");
  require(points >= 2, "power grid needs at least 2 points");
  std::vector<double> levels(points);
  const double step = max_power / static_cast<double>(points - 1);
  for (std::size_t k = 0; k < points; ++k) levels[k] = step * static_cast<double>(k);
  levels.back() = max_power;
  PowerSet set(std::move(levels));
  set.step_ = step;
  return set;
}

bool PowerSet::contains(double p) const {
  const auto it = std::lower_bound(levels_.begin(), levels_.end(), p);
  const double tol = 1e-12 * std::max(1.0, std::abs(p));
  if (it != levels_.end() && std::abs(*it - p) <= tol) return true;
  return it != levels_.begin() && std::abs(*std::prev(it) - p) <= tol;
}

PowerSet PowerSet::with_level(double p) const {
  require(p >= 0.0 && p <= max() * (1.0 + 1e-12), "power level outside the set's range");
  if (contains(p)) return *this;
  PowerSet out = *this;
  out.levels_.insert(std::lower_bound(out.levels_.begin(), out.levels_.end(), p), p);
  return out;
}

NetworkInstance::NetworkInstance(NetworkParams params) : params_(std::move(params)) {
  const std::size_t n = params_.noise.size();
  require(n > 0, "network needs at least one user");
  require(params_.num_primary + params_.num_secondary == n,
          "num_primary + num_secondary must equal the number of users");
  require(params_.gains.size() == n, "gain matrix size mismatch");
  require(params_.power_sets.size() == n, "power set count mismatch");
  require(params_.min_rates.size() == n, "min rate count mismatch");
  require(params_.discount >= 0.0 && params_.discount < 1.0, "discount must lie in [0, 1)");
  for (std::size_t i = 0; i < n; ++i) {
    require(params_.gains(i, i) > 0.0, "direct gains must be positive");
    for (std::size_t j = 0; j < n; ++j)
      require(params_.gains(i, j) >= 0.0 && std::isfinite(params_.gains(i, j)),
              "gains must be finite and nonnegative");
    require(params_.noise[i] > 0.0, "noise powers must be positive");
    require(params_.min_rates[i] > 0.0, "minimum rates must be positive");
  }
}

double NetworkInstance::max_solo_rate(std::size_t i) const {
  return std::log2(1.0 + power_set(i).max() / noise_over_gain(i));
}

NetworkInstance NetworkInstance::with_discount(double discount) const {
  NetworkParams p = params_;
  p.discount = discount;
  return NetworkInstance(std::move(p));
}

NetworkInstance NetworkInstance::with_min_rates(std::vector<double> rates) const {
  NetworkParams p = params_;
  p.min_rates = std::move(rates);
  return NetworkInstance(std::move(p));
}

NetworkInstance NetworkInstance::with_power_level(std::size_t i, double level) const {
  NetworkParams p = params_;
  p.power_sets.at(i) = p.power_sets.at(i).with_level(level);
  return NetworkInstance(std::move(p));
}

NetworkInstance NetworkInstance::with_power_levels(std::span<const double> levels) const {
  require(levels.size() == size(), "one power level per user expected");
  NetworkParams p = params_;
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i] > 0.0) p.power_sets[i] = p.power_sets[i].with_level(levels[i]);
  return NetworkInstance(std::move(p));
}

NetworkInstance NetworkInstance::subset(std::span<const std::size_t> keep,
                                        std::size_t num_primary_kept) const {
  require(!keep.empty(), "subset must keep at least one user");
  require(num_primary_kept <= keep.size(), "primary count exceeds kept users");
  NetworkParams p;
  p.num_primary = num_primary_kept;
  p.num_secondary = keep.size() - num_primary_kept;
  p.gains = params_.gains.subset(keep);
  p.discount = params_.discount;
  for (const std::size_t k : keep) {
    require(k < size(), "subset index out of range");
    p.noise.push_back(params_.noise[k]);
    p.power_sets.push_back(params_.power_sets[k]);
    p.min_rates.push_back(params_.min_rates[k]);
  }
  return NetworkInstance(std::move(p));
}

ErrorDistribution ErrorDistribution::gaussian(double variance) {
  require(variance >= 0.0 && std::isfinite(variance), "gaussian variance must be finite and >= 0");
  return {Kind::gaussian, variance};
}

ErrorDistribution ErrorDistribution::uniform(double half_width) {
  require(half_width >= 0.0 && std::isfinite(half_width),
          "uniform half-width must be finite and >= 0");
  return {Kind::uniform, half_width};
}

double ErrorDistribution::density(double x) const {
  if (degenerate()) return 0.0;
  if (kind_ == Kind::gaussian)
    return std::exp(-0.5 * x * x / param_) / std::sqrt(2.0 * M_PI * param_);
  return (x >= -param_ && x <= param_) ? 0.5 / param_ : 0.0;
}

double ErrorDistribution::exceed_prob(double x) const {
  if (degenerate()) return x < 0.0 ? 1.0 : 0.0;
  if (kind_ == Kind::gaussian) return 0.5 * std::erfc(x / std::sqrt(2.0 * param_));
  return std::clamp((param_ - x) / (2.0 * param_), 0.0, 1.0);
}

double ErrorDistribution::support_low() const {
  return kind_ == Kind::gaussian ? -kGaussianSpan * std::sqrt(param_) : -param_;
}

double ErrorDistribution::support_high() const {
  return kind_ == Kind::gaussian ? kGaussianSpan * std::sqrt(param_) : param_;
}

QuantizerLevels quantizer_levels(const ErrorDistribution& error, double threshold,
                                 double noise) {
  require(std::isfinite(threshold), "quantizer threshold must be finite");
  if (error.degenerate()) return {noise, noise};

  const double lo = noise + error.support_low();
  const double hi = noise + error.support_high();
  const auto mass = [&](double x) { return error.density(x - noise); };
  const auto moment = [&](double x) { return x * error.density(x - noise); };

  const double split = std::clamp(threshold, lo, hi);
  const double mass_low = integrate(mass, lo, split);
  const double mass_high = integrate(mass, split, hi);
  const double moment_low = integrate(moment, lo, split);
  const double moment_high = integrate(moment, split, hi);

  QuantizerLevels levels;
  levels.low = mass_low > 0.0 ? moment_low / mass_low : noise;
  levels.high = mass_high > 0.0 ? moment_high / mass_high : noise;
  return levels;
}

SensingModel::SensingModel(std::vector<ErrorDistribution> errors,
                           std::vector<double> thresholds, std::span<const double> noise) {
  require(errors.size() == noise.size() && thresholds.size() == noise.size(),
          "sensing model size mismatch");
  users_.reserve(noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    UserSensing u{errors[i], thresholds[i], {}};
    u.levels = quantizer_levels(u.error, u.threshold, noise[i]);
    users_.push_back(u);
  }
}

SensingModel SensingModel::uniform(const NetworkInstance& net, ErrorDistribution error,
                                   double threshold) {
  return SensingModel(std::vector<ErrorDistribution>(net.size(), error),
                      std::vector<double>(net.size(), threshold), net.noise());
}

SensingModel SensingModel::subset(std::span<const std::size_t> keep) const {
  SensingModel out;
  for (const std::size_t k : keep) out.users_.push_back(users_.at(k));
  return out;
}

double interference_temperature(const NetworkInstance& net, std::span<const double> p,
                                std::size_t i) {
  if (i >= net.size()) throw std::out_of_range("user index out of range");
  require(p.size() == net.size(), "power profile size mismatch");
  double sum = net.noise(i);
  for (std::size_t j = 0; j < p.size(); ++j)
    if (j != i) sum += p[j] * net.gain(j, i);
  return sum;
}

double throughput(const NetworkInstance& net, std::span<const double> p, std::size_t i) {
  const double interference = interference_temperature(net, p, i);
  if (p[i] == 0.0) return 0.0;
  return std::log2(1.0 + p[i] * net.gain(i, i) / interference);
}

double distress_prob_at(const UserSensing& sensing, double interference) {
  return sensing.error.exceed_prob(sensing.threshold - interference);
}

double distress_prob(const NetworkInstance& net, const SensingModel& sensing,
                     std::span<const double> p, std::size_t i) {
  const double interference = interference_temperature(net, p, i);
  if (!(p[i] > 0.0))
    throw std::invalid_argument("distress probability requested for a silent user");
  return distress_prob_at(sensing.user(i), interference);
}

double system_distress_prob(const NetworkInstance& net, const SensingModel& sensing,
                            std::span<const double> p) {
  double quiet = 1.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    if (p[j] > 0.0) quiet *= 1.0 - distress_prob(net, sensing, p, j);
  return 1.0 - quiet;
}

int system_distress(const NetworkInstance& net, const SensingModel& sensing,
                    std::span<const double> p, UserStreams& streams) {
  int y = 0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!(p[j] > 0.0)) continue;
    // Every transmitter draws, even after y is already 1, so stream
    // positions depend only on who transmitted.
    if (streams.user(j).uniform() < distress_prob(net, sensing, p, j)) y = 1;
  }
  return y;
}

bool is_tdma_profile(std::span<const double> p) {
  return std::count_if(p.begin(), p.end(), [](double v) { return v > 0.0; }) <= 1;
}

}  // namespace specshare

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "specshare/baselines.hpp"
#include "specshare/dynamics.hpp"
#include "specshare/its_solver.hpp"
#include "specshare/net_model.hpp"

namespace specshare {

enum class ExperimentKind { alpha_sweep, user_sweep, rate_sweep, dynamic, single };
enum class GainModel {
  exponential,       // |h|^2, h complex normal: exponential power gains
  normal_magnitude,  // |h| itself
};
enum class PolicyKind : std::size_t { proposed = 0, stationary = 1, punish_forgive = 2 };
inline constexpr std::size_t kNumPolicies = 3;

struct ExperimentDefaults {
  double noise = 0.05;
  double alpha = 0.2;
  std::size_t users = 2;
  double rate = 1.0;
  double threshold = 1.0;
  double error_variance = 0.1;
  double discount = 0.95;
  double power_max = 1e12;
  std::size_t grid_points = 512;
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::single;
  std::vector<double> alphas;
  std::vector<std::size_t> users;
  std::vector<double> rates;
  std::size_t trials = 200;
  std::uint64_t seed = 1;
  std::size_t horizon = 500;
  ExperimentDefaults defaults;
  GainModel gain_model = GainModel::exponential;
  Criterion criterion;
  DesignMode mode = DesignMode::obedient;
  PunishForgiveConfig punish;
  std::size_t threads = 1;  // never affects results

  void validate() const;  // throws ConfigError
};

ExperimentSpec parse_experiment(const nlohmann::json& doc);
nlohmann::json experiment_to_json(const ExperimentSpec& spec);
std::string to_string(ExperimentKind k);
std::string to_string(PolicyKind k);

struct GridPoint {
  std::size_t index = 0;
  double alpha = 0.0;
  std::size_t users = 0;
  double rate = 0.0;
};

std::vector<GridPoint> grid_points(const ExperimentSpec& spec);

// Channel draw for one trial. Gains depend on (seed, trial, i, j) only, so
// nested grid points see the same channels.
NetworkInstance draw_network(const ExperimentSpec& spec, const GridPoint& point,
                             std::size_t trial);

struct TrialOutcome {
  bool feasible = false;
  double power = 0.0;       // mean over users of the discounted average power
  double throughput = 0.0;  // mean over users of the discounted throughput
};

struct TrialResult {
  std::array<TrialOutcome, kNumPolicies> policy;
};

TrialResult run_trial(const ExperimentSpec& spec, const GridPoint& point, std::size_t trial);

struct PolicyStats {
  std::size_t trials = 0;
  std::size_t feasible = 0;
  double power_mean = 0.0;
  double power_se = 0.0;  // NaN with fewer than two feasible trials
  double throughput_mean = 0.0;
  double throughput_se = 0.0;
  // Mean over the trials feasible at every grid point of the sweep (paired
  // across points); NaN if there are none.
  double power_mean_common = 0.0;
  std::size_t common_trials = 0;

  double feasible_fraction() const noexcept {
    return trials ? static_cast<double>(feasible) / static_cast<double>(trials) : 0.0;
  }
};

struct PointResult {
  GridPoint point;
  std::array<PolicyStats, kNumPolicies> stats;
  std::vector<TrialResult> trials;
};

struct DynamicUserStats {
  std::string label;
  double target = 0.0;
  std::size_t present_trials = 0;
  double throughput_mean = 0.0;  // on the user's own clock, entry to end of run
  double power_mean = 0.0;
  std::size_t bound_violations = 0;
};

struct DynamicSummary {
  std::vector<DynamicUserStats> users;
  std::size_t trials = 0;
  std::size_t bound_violations = 0;
  std::size_t normalized_violations = 0;
  std::size_t rejected_changes = 0;
  double max_telescoping_error = 0.0;
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<PointResult> points;
  std::optional<DynamicSummary> dynamic;
  double runtime_seconds = 0.0;
  std::size_t threads_used = 1;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

// 100 (1 - P_proposed / P_baseline) on the trials where both are feasible;
// nullopt when there are none.
std::optional<double> energy_saving_ratio(const PointResult& point, PolicyKind baseline,
                                          PolicyKind proposed = PolicyKind::proposed);

// Long format: point,kind,alpha,users,rate,policy,metric,value.
void write_csv(std::ostream& os, const ExperimentResult& result);
nlohmann::json manifest_json(const ExperimentResult& result, const std::string& csv_path = {});

}  // namespace specshare

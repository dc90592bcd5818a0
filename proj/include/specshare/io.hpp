#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "specshare/baselines.hpp"
#include "specshare/dynamics.hpp"
#include "specshare/its_solver.hpp"
#include "specshare/ldf_scheduler.hpp"
#include "specshare/net_model.hpp"
#include "specshare/policy.hpp"

namespace specshare {

using json = nlohmann::json;

// One model document: network, sensing, and the design knobs around them.
//
//   {
//     "gains": [[1, 0.5], [0.5, 1]],      // row-major; or "alpha": 0.5 with unit direct gains
//     "users": 2,                          // needed only with "alpha"
//     "num_primary": 2,                    // default: every user is primary
//     "noise": 0.05,                       // scalar or per user
//     "power_grid": {"max": 1e12, "points": 512},
//     "min_rates": [1, 1],                 // scalar or per user
//     "discount": 0.9,
//     "sensing": {"dist": "gaussian", "param": 0.1, "theta": 1.0},
//     "criterion": {"kind": "weighted_sum", "weights": [0.5, 0.5]},
//     "mode": "obedient"                   // or "deviation_proof"
//   }
struct ModelConfig {
  NetworkInstance net;
  SensingModel sensing;
  Criterion criterion;
  DesignMode mode = DesignMode::obedient;
};

ModelConfig parse_model(const json& doc);
ModelConfig load_model(const std::string& path);
json read_json_file(const std::string& path);
json model_to_json(const ModelConfig& cfg);

CriterionKind parse_criterion_kind(const std::string& s);
DesignMode parse_design_mode(const std::string& s);
std::string to_string(DesignMode m);
std::string to_string(CriterionKind k);

json its_report(const Design& d);
json stationary_report(const StationarySolution& s);
json metrics_json(const DiscountedMetrics& m);
json oracle_report(const OracleResult& r);
json bound_report(const BoundReport& b);
json epoch_log(const DynamicSession& s);
json epoch_bound_report(const EpochBoundReport& r);

// One record per slot: {t, p[], y, r[]}.
void write_trace_jsonl(std::ostream& os, const PolicyTrace& trace);
// One record per slot: {t, i_star, d[], r_prime[], y}.
void write_decisions_jsonl(std::ostream& os, const std::vector<ScheduleDecision>& log);

// Reads SPECSHARE_LOG (error | info | debug); default warn. Logs go to stderr.
void init_logging();

}  // namespace specshare
